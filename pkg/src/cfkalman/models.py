"""State, measurement and belief models.

Coefficients may be constant arrays or functions of time returning arrays;
every model exposes ``*_at(t)`` accessors that hide the difference.

Model assumption: the state noise ``W``, the measurement noise (``V`` or
``eta``) and the initial state are mutually independent.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NotSPD
from .numkit import as_matrix, as_vector, cholesky_spd


def _freeze(a):
    a.setflags(write=False)
    return a


def _coefficient(value, kind, name):
    if value is None:
        return None
    if callable(value):
        return value
    conv = as_matrix if kind == "matrix" else as_vector
    return _freeze(conv(value, name))


def _eval(coef, t, kind, name):
    if callable(coef):
        conv = as_matrix if kind == "matrix" else as_vector
        return conv(coef(t), name)
    return coef


@dataclass(frozen=True)
class LinearStateModel:
    """``dx = A(t) x dt + G(t) dW`` with ``var(dW) = I dt``."""

    A: object
    G: object

    def __post_init__(self):
        object.__setattr__(self, "A", _coefficient(self.A, "matrix", "A"))
        object.__setattr__(self, "G", _coefficient(self.G, "matrix", "G"))

    def A_at(self, t):
        return _eval(self.A, t, "matrix", "A")

    def G_at(self, t):
        return _eval(self.G, t, "matrix", "G")

    @property
    def n(self):
        return self.A_at(0.0).shape[0]

    @property
    def d(self):
        return self.G_at(0.0).shape[1]

    @property
    def is_constant(self):
        return not (callable(self.A) or callable(self.G))

    def drift(self, x, t):
        return x @ self.A_at(t).T

    def diffusion(self, x, t):
        """Diffusion matrices, shape ``x.shape + (d,)``; state independent here."""
        G = self.G_at(t)
        return np.broadcast_to(G, x.shape[:-1] + G.shape)


@dataclass(frozen=True)
class BilinearStateModel:
    """``dx = (A0 + A x) dt + sum_phi (G[:, phi] + x B[phi]) dW_phi``.

    ``B`` is a d-vector of scalar multiplicative-noise coefficients. Whether the
    noise is read in the Stratonovich or the Ito sense is decided by the caller
    (simulator or filter), not by the model.
    """

    A: object
    G: object
    B: object
    A0: object = None

    def __post_init__(self):
        object.__setattr__(self, "A", _coefficient(self.A, "matrix", "A"))
        object.__setattr__(self, "G", _coefficient(self.G, "matrix", "G"))
        object.__setattr__(self, "B", _coefficient(self.B, "vector", "B"))
        A0 = self.A0
        if A0 is None:
            A0 = np.zeros(self.A_at(0.0).shape[0])
        object.__setattr__(self, "A0", _coefficient(A0, "vector", "A0"))

    def A_at(self, t):
        return _eval(self.A, t, "matrix", "A")

    def G_at(self, t):
        return _eval(self.G, t, "matrix", "G")

    def B_at(self, t):
        return _eval(self.B, t, "vector", "B")

    def A0_at(self, t):
        return _eval(self.A0, t, "vector", "A0")

    @property
    def n(self):
        return self.A_at(0.0).shape[0]

    @property
    def d(self):
        return self.G_at(0.0).shape[1]

    @property
    def is_constant(self):
        return not any(callable(c) for c in (self.A, self.G, self.B, self.A0))

    def drift(self, x, t):
        return self.A0_at(t) + x @ self.A_at(t).T

    def diffusion(self, x, t):
        # column phi of the diffusion at state x is G[:, phi] + x * B[phi]
        G = self.G_at(t)
        B = self.B_at(t)
        return G + x[..., :, None] * B

    @classmethod
    def from_linear(cls, model):
        return cls(A=model.A, G=model.G, B=np.zeros(model.d))


@dataclass(frozen=True)
class DiscreteMeasurementModel:
    """``y_k = C(t_k) x(t_k) + v_k`` with ``v_k ~ N(0, R(t_k))``."""

    C: object
    R: object
    schedule: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "C", _coefficient(self.C, "matrix", "C"))
        object.__setattr__(self, "R", _coefficient(self.R, "matrix", "R"))
        object.__setattr__(self, "schedule", tuple(float(t) for t in self.schedule))

    def C_at(self, t):
        return _eval(self.C, t, "matrix", "C")

    def R_at(self, t):
        return _eval(self.R, t, "matrix", "R")

    @property
    def m(self):
        return self.C_at(self.schedule[0] if self.schedule else 0.0).shape[0]


@dataclass(frozen=True)
class ContinuousMeasurementModel:
    """``dz = C(t) x dt + d eta`` with ``d eta ~ N(0, phi_eta dt)``."""

    C: object
    phi_eta: object

    def __post_init__(self):
        object.__setattr__(self, "C", _coefficient(self.C, "matrix", "C"))
        object.__setattr__(self, "phi_eta", _coefficient(self.phi_eta, "matrix", "phi_eta"))

    def C_at(self, t):
        return _eval(self.C, t, "matrix", "C")

    def phi_at(self, t):
        return _eval(self.phi_eta, t, "matrix", "phi_eta")

    @property
    def m(self):
        return self.C_at(0.0).shape[0]


@dataclass(frozen=True)
class GaussianBelief:
    t: float
    m: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "m", _freeze(as_vector(self.m, "m")))
        object.__setattr__(self, "P", _freeze(as_matrix(self.P, "P")))
        if self.P.shape != (self.m.size, self.m.size):
            raise ValueError(f"P has shape {self.P.shape}, expected {(self.m.size,) * 2}")

    @property
    def n(self):
        return self.m.size


def _spd_errors(M, name):
    errs = []
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(M).max())):
        errs.append(f"{name} not symmetric")
    try:
        cholesky_spd(M)
    except NotSPD:
        errs.append(f"{name} not SPD")
    return errs


def _shape_errors(name, M, shape):
    if M.shape != shape:
        return [f"{name} has shape {M.shape}, expected {shape}"]
    return []


def validate(model, t=0.0):
    """List every violated invariant of ``model`` (empty list means valid).

    Time-varying coefficients are checked at ``t`` (and at each scheduled
    instant for discrete measurement models). Never raises for bad models.
    """
    errs = []
    try:
        if isinstance(model, (LinearStateModel, BilinearStateModel)):
            A = model.A_at(t)
            G = model.G_at(t)
            n = A.shape[0]
            errs += _shape_errors("A", A, (n, n))
            if G.shape[0] != n:
                errs.append(f"G has {G.shape[0]} rows, expected {n}")
            if isinstance(model, BilinearStateModel):
                B = model.B_at(t)
                A0 = model.A0_at(t)
                if B.shape != (G.shape[1],):
                    errs.append(f"B has length {B.size}, expected {G.shape[1]}")
                if A0.shape != (n,):
                    errs.append(f"A0 has length {A0.size}, expected {n}")
        elif isinstance(model, DiscreteMeasurementModel):
            sched = np.asarray(model.schedule, dtype=float)
            if sched.size > 1 and np.any(np.diff(sched) <= 0.0):
                errs.append("schedule not strictly increasing")
            for tk in (sched if sched.size else [t]):
                C = model.C_at(tk)
                R = model.R_at(tk)
                m = C.shape[0]
                shape_errs = _shape_errors("R", R, (m, m))
                errs += shape_errs
                if not shape_errs:
                    errs += _spd_errors(R, "R")
            errs = list(dict.fromkeys(errs))
        elif isinstance(model, ContinuousMeasurementModel):
            C = model.C_at(t)
            phi = model.phi_at(t)
            m = C.shape[0]
            shape_errs = _shape_errors("phi_eta", phi, (m, m))
            errs += shape_errs
            if not shape_errs:
                errs += _spd_errors(phi, "phi_eta")
        elif isinstance(model, GaussianBelief):
            P = model.P
            if not np.allclose(P, P.T, rtol=0.0, atol=1e-10):
                errs.append("P not symmetric")
            lam_min = np.linalg.eigvalsh(0.5 * (P + P.T)).min()
            if lam_min < -1e-9 * max(np.trace(P), 1e-300):
                errs.append("P not PSD")
        else:
            errs.append(f"unsupported model type {type(model).__name__}")
    except (ValueError, TypeError) as exc:
        errs.append(str(exc))
    return errs


def check_compatible(state, meas):
    """Dimension errors between a state model and a measurement model."""
    n = state.n
    C = meas.C_at(meas.schedule[0] if getattr(meas, "schedule", ()) else 0.0)
    if C.shape[1] != n:
        return [f"C has {C.shape[1]} columns, expected state dimension {n}"]
    return []


def ito_drift_correction(model, x, t):
    """Stratonovich-to-Ito drift correction of a bilinear model.

    Component ``i`` is ``0.5 * sum_phi (G[i, phi] B[phi] + B[phi]**2 x[i])``.
    Works on a single state or a stack of states (last axis = state).
    """
    G = model.G_at(t)
    B = model.B_at(t)
    x = np.asarray(x, dtype=float)
    return 0.5 * (G @ B + (B @ B) * x)


def to_ito(model):
    """Return the bilinear model whose Ito reading equals ``model``'s Stratonovich reading.

    The correction is affine in x, so the result is again bilinear:
    ``A0 + G B / 2`` and ``A + |B|^2 I / 2``.
    """
    if model.is_constant:
        G, B = model.G, model.B
        return BilinearStateModel(
            A=model.A + 0.5 * (B @ B) * np.eye(model.n),
            G=G,
            B=B,
            A0=model.A0 + 0.5 * G @ B,
        )
    n = model.n
    return BilinearStateModel(
        A=lambda t: model.A_at(t) + 0.5 * (model.B_at(t) @ model.B_at(t)) * np.eye(n),
        G=model.G,
        B=model.B,
        A0=lambda t: model.A0_at(t) + 0.5 * model.G_at(t) @ model.B_at(t),
    )
