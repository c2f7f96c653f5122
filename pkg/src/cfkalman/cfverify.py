"""Numerical checks of the characteristic-function view of Kalman filtering.

Real probes ``s`` evaluate the conditional moment generating function
``E exp(s^T x)`` and are used for exact algebraic identities; imaginary-axis
probes ``omega`` give the characteristic function, which stays bounded and is
the quantity compared against Monte Carlo.
"""

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import GridMismatch, Overflow, TooFewSamples
from .numkit import as_vector, solve_spd

MGF_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class CfEstimate:
    value: complex
    se_re: float
    se_im: float

    def within(self, target, n_se=3.0):
        target = complex(target)
        return (abs(self.value.real - target.real) <= n_se * self.se_re
                and abs(self.value.imag - target.imag) <= n_se * self.se_im)


@dataclass(frozen=True)
class ProbeRecord:
    check: str
    probe: tuple
    lhs: float
    rhs: float
    residual: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.residual <= self.tolerance)

    def to_dict(self):
        d = asdict(self)
        d["probe"] = list(self.probe)
        d["passed"] = self.passed
        return d


def probe_grid(n, levels=(-1.0, -0.5, 0.5, 1.0)):
    """All probes with entries from ``levels`` (n <= 3 keeps this small)."""
    return [np.array(p) for p in itertools.product(levels, repeat=n)]


def _mgf_exponent(b, s):
    s = as_vector(s, "s")
    return float(s @ b.m + 0.5 * s @ b.P @ s)


def gaussian_mgf(b, s):
    """``E exp(s^T x) = exp(s^T m + s^T P s / 2)`` under ``N(m, P)``."""
    e = _mgf_exponent(b, s)
    if e > MGF_EXP_LIMIT:
        raise Overflow(f"MGF exponent {e:.1f} exceeds {MGF_EXP_LIMIT}")
    return math.exp(e)


def gaussian_cf(b, omega):
    """``E exp(i omega^T x) = exp(i omega^T m - omega^T P omega / 2)``."""
    w = as_vector(omega, "omega")
    return complex(np.exp(1j * (w @ b.m) - 0.5 * (w @ b.P @ w)))


def empirical_cf(samples, omega, weights=None):
    """Monte Carlo estimate of ``E exp(i omega^T x)`` with standard errors.

    ``weights`` (optional, non-negative) turns this into a self-normalised
    importance estimate; its standard errors use the delta method.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N = X.shape[0]
    if N < 2:
        raise TooFewSamples(f"need at least 2 samples, got {N}")
    phase = X @ as_vector(omega, "omega")
    f = np.exp(1j * phase)
    if weights is None:
        value = f.mean()
        se_re = f.real.std(ddof=1) / math.sqrt(N)
        se_im = f.imag.std(ddof=1) / math.sqrt(N)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        value = np.sum(w * f)
        se_re = math.sqrt(np.sum(w**2 * (f.real - value.real) ** 2))
        se_im = math.sqrt(np.sum(w**2 * (f.imag - value.imag) ** 2))
    return CfEstimate(complex(value), float(se_re), float(se_im))


def _drift_rhs(model, b, s, t):
    """Right-hand side of the CF evolution under the Gaussian law, per unit time.

    Uses ``<x_a exp(s^T x)> = (m + P s)_a M`` and
    ``<d^2 exp(s^T x) / dx_p dx_q> = s_p s_q M``.
    """
    M = gaussian_mgf(b, s)
    A = model.A_at(t)
    Q = model.G_at(t) @ model.G_at(t).T
    first = np.einsum("pa,p,a->", A, s, b.m + b.P @ s)
    second = 0.5 * np.einsum("pq,p,q->", Q, s, s)
    return (first + second) * M


def _mgf_time_derivative(model, b, s, t):
    """``d/dt exp(s^T m + s^T P s / 2)`` along the moment ODEs."""
    A = model.A_at(t)
    G = model.G_at(t)
    dm = A @ b.m
    dP = A @ b.P + b.P @ A.T + G @ G.T
    return (s @ dm + 0.5 * s @ dP @ s) * gaussian_mgf(b, s)


def theorem1_sides(model, b, s, t=None):
    t = b.t if t is None else t
    s = as_vector(s, "s")
    return _mgf_time_derivative(model, b, s, t), _drift_rhs(model, b, s, t)


def theorem1_residual(model, b, s, t=None):
    """Relative gap between the two sides of the between-observation CF evolution.

    The left side differentiates the Gaussian MGF along the mean and covariance
    ODEs; the right side evaluates the generator expectation with Gaussian
    moment identities. They agree exactly for linear models.
    """
    lhs, rhs = theorem1_sides(model, b, s, t)
    return abs(lhs - rhs) / gaussian_mgf(b, s)


def theorem2_gain_cf(b, cm, s, t=None):
    """``(<e^{s^T x} x^T C^T> - <e^{s^T x}><x^T C^T>) phi^-1`` as a 1 x m row.

    For ``N(m, P)`` this is ``M (P s)^T C^T phi^-1``.
    """
    t = b.t if t is None else t
    s = as_vector(s, "s")
    M = gaussian_mgf(b, s)
    C = cm.C_at(t)
    row = (b.P @ s) @ C.T
    return M * solve_spd(cm.phi_at(t), row[:, None]).T


def theorem2_step_residuals(model, cm, trajectory, record, s):
    """Per-step ``|Delta MGF - (drift dt + gain_cf (dz - C m dt))|`` along a run."""
    entries = list(trajectory)
    if len(entries) != len(record) + 1:
        raise GridMismatch(f"trajectory has {len(entries)} beliefs for {len(record)} increments")
    s = as_vector(s, "s")
    out = np.empty(len(record))
    for k, (t, dz) in enumerate(zip(record.times, record.values)):
        b0, b1 = entries[k].belief, entries[k + 1].belief
        if abs(b0.t - t) > 1e-9 * max(1.0, abs(t)):
            raise GridMismatch(f"belief time {b0.t} does not match increment time {t}")
        dt = b1.t - b0.t
        innov = dz - (cm.C_at(t) @ b0.m) * dt
        rhs = _drift_rhs(model, b0, s, t) * dt + float((theorem2_gain_cf(b0, cm, s, t) @ innov)[0])
        out[k] = abs(gaussian_mgf(b1, s) - gaussian_mgf(b0, s) - rhs)
    return out


def theorem2_cf_sde_residual(model, cm, trajectory, record, s):
    """Mean per-step residual of the stochastic CF evolution along a Kalman-Bucy run.

    Shrinks linearly with the step size.
    """
    r = theorem2_step_residuals(model, cm, trajectory, record, s)
    return float(r.mean()) if r.size else 0.0


def gaussian_third_moment(m, P, i, j, g):
    """``E[x_i x_j x_g]`` for ``N(m, P)`` (Isserlis with mean)."""
    return m[i] * m[j] * m[g] + m[i] * P[j, g] + m[j] * P[i, g] + m[g] * P[i, j]


def third_moment_identity(b, i, j, g):
    """Both sides of ``<x_i x_j x_g> - <x_i x_j><x_g> = P_ig m_j + P_jg m_i``.

    Indices are zero-based. The left side is built from exact Gaussian
    moments, the right side is the closed form.
    """
    m, P = b.m, b.P
    lhs = gaussian_third_moment(m, P, i, j, g) - (P[i, j] + m[i] * m[j]) * m[g]
    rhs = P[i, g] * m[j] + P[j, g] * m[i]
    return float(lhs), float(rhs)


def sample_third_moment_gap(samples, i, j, g):
    """Sample ``<x_i x_j x_g> - <x_i x_j><x_g>`` (a covariance) and its standard error."""
    X = np.asarray(samples, dtype=float)
    u = X[:, i] * X[:, j]
    v = X[:, g]
    prod = (u - u.mean()) * (v - v.mean())
    N = X.shape[0]
    return float(prod.sum() / (N - 1)), float(prod.std(ddof=1) / math.sqrt(N))


def theorem1_report(model, beliefs, probes=None, tol=1e-10):
    records = []
    for b in beliefs:
        for s in probes if probes is not None else probe_grid(b.n):
            if _mgf_exponent(b, s) > MGF_EXP_LIMIT:
                continue
            lhs, rhs = theorem1_sides(model, b, s)
            M = gaussian_mgf(b, s)
            records.append(ProbeRecord("theorem1", (b.t,) + tuple(map(float, s)),
                                       lhs, rhs, abs(lhs - rhs) / M, tol))
    return records


def appendix_report(beliefs, tol=1e-12):
    records = []
    for b in beliefs:
        for i, j, g in itertools.product(range(b.n), repeat=3):
            lhs, rhs = third_moment_identity(b, i, j, g)
            scale = max(1.0, abs(lhs), abs(rhs))
            records.append(ProbeRecord("appendix", (b.t, i, j, g), lhs, rhs, abs(lhs - rhs) / scale, tol))
    return records


def theorem2_report(model, cm, trajectory, record, probes=None, tol=None):
    """One record per probe: mean step residual against ``tol`` (default ``5 dt``)."""
    if tol is None:
        tol = 5.0 * (record.dt if record.dt else float(record.times[1] - record.times[0]))
    n = trajectory[0].belief.n
    records = []
    for s in probes if probes is not None else probe_grid(n):
        try:
            r = theorem2_cf_sde_residual(model, cm, trajectory, record, s)
        except Overflow:
            continue
        records.append(ProbeRecord("theorem2", tuple(map(float, s)), r, 0.0, r, tol))
    return records
