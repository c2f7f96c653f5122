"""Filter output container shared by the three filters."""

from dataclasses import dataclass, field

import numpy as np

from .models import GaussianBelief

PREDICTED = "predicted"
UPDATED = "updated"


@dataclass
class TrajectoryEntry:
    belief: GaussianBelief
    tag: str
    innovation: np.ndarray = None
    innovation_cov: np.ndarray = None

    @property
    def t(self):
        return self.belief.t


@dataclass
class FilterTrajectory:
    entries: list = field(default_factory=list)

    def append(self, belief, tag, innovation=None, innovation_cov=None):
        if self.entries and belief.t < self.entries[-1].t - 1e-12:
            raise ValueError("trajectory times must be non-decreasing")
        self.entries.append(TrajectoryEntry(belief, tag, innovation, innovation_cov))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def beliefs(self):
        return [e.belief for e in self.entries]

    @property
    def final(self):
        return self.entries[-1].belief

    @property
    def times(self):
        return np.array([e.t for e in self.entries])

    @property
    def means(self):
        return np.array([e.belief.m for e in self.entries])

    @property
    def covariances(self):
        return np.array([e.belief.P for e in self.entries])

    def tagged(self, tag):
        return [e for e in self.entries if e.tag == tag]

    @property
    def innovations(self):
        rows = [e.innovation for e in self.entries if e.innovation is not None]
        return np.array(rows) if rows else np.zeros((0, 0))

    def to_csv(self, fh, header_lines=()):
        """``t,tag,m1..mn,P11,P12,..,Pnn,nu1..num`` with P as its row-major upper triangle.

        Innovation columns are present when any entry carries one and left
        empty on rows without an innovation.
        """
        for line in header_lines:
            fh.write(f"# {line}\n")
        if not self.entries:
            return
        n = self.entries[0].belief.n
        iu = np.triu_indices(n)
        n_innov = next((e.innovation.size for e in self.entries if e.innovation is not None), 0)
        cols = ["t", "tag"] + [f"m{i + 1}" for i in range(n)]
        cols += [f"P{i + 1}{j + 1}" for i, j in zip(*iu)]
        cols += [f"nu{i + 1}" for i in range(n_innov)]
        fh.write(",".join(cols) + "\n")
        for e in self.entries:
            row = [repr(e.t), e.tag]
            row += [repr(float(v)) for v in e.belief.m]
            row += [repr(float(v)) for v in e.belief.P[iu]]
            if n_innov:
                if e.innovation is None:
                    row += [""] * n_innov
                else:
                    row += [repr(float(v)) for v in e.innovation]
            fh.write(",".join(row) + "\n")
