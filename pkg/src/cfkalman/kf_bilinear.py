"""Filter for the bilinear Stratonovich model with continuous measurements.

State model (Stratonovich):
``dx = (A0 + A x) dt + sum_phi (G[:, phi] + x B[phi]) o dW_phi``,
measurements ``dz = C x dt + d eta``.

Mean drift is the Ito-converted drift ``A0 + A m + (G B + |B|^2 m) / 2``.
Two covariance drifts are offered:

``as_printed``
    ``A P + P A^T + G G^T + m (G B)^T + (G B) m^T + |B|^2 m m^T + |B|^2 P``
``moment_exact``
    the same with ``2 |B|^2 P``, which is what Ito second-moment calculus on
    the converted model gives under a Gaussian law.

With ``B = 0`` and ``A0 = 0`` both reduce to the Kalman-Bucy filter, and the
arithmetic is arranged so that the reduction is exact to the last bit.
"""

from dataclasses import dataclass

import numpy as np

from . import kf_cc
from .errors import GridMismatch, NumericalError
from .models import GaussianBelief
from .numkit import solve_spd, symmetrize
from .trajectory import UPDATED, FilterTrajectory

AS_PRINTED = "as_printed"
MOMENT_EXACT = "moment_exact"
COVARIANCE_FORMS = (AS_PRINTED, MOMENT_EXACT)


@dataclass(frozen=True)
class BilinearFilterConfig:
    dt: float
    covariance_form: str = AS_PRINTED

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.covariance_form not in COVARIANCE_FORMS:
            raise ValueError(f"covariance_form must be one of {COVARIANCE_FORMS}")


class IndefiniteCovariance(NumericalError):
    def __init__(self, min_eig, trace):
        self.min_eig = float(min_eig)
        self.trace = float(trace)
        super().__init__(f"covariance lost positive semidefiniteness: min eigenvalue {min_eig:.3e}, trace {trace:.3e}")


def mean_drift(m, model, t):
    """``A0 + A m + (G B + |B|^2 m) / 2``."""
    G, B = model.G_at(t), model.B_at(t)
    return model.A0_at(t) + model.A_at(t) @ m + 0.5 * (G @ B + (B @ B) * m)


def multiplicative_cov_terms(m, P, model, t, form):
    """Covariance drift contributed by the multiplicative noise ``B``."""
    G, B = model.G_at(t), model.B_at(t)
    gb = G @ B
    b2 = B @ B
    scale = 2.0 if form == MOMENT_EXACT else 1.0
    return np.outer(m, gb) + np.outer(gb, m) + b2 * np.outer(m, m) + scale * b2 * P


def _enforce_psd(P):
    lam, V = np.linalg.eigh(P)
    if lam[0] >= 0.0:
        return P
    tr = float(np.trace(P))
    if lam[0] < -1e-9 * max(tr, 0.0):
        raise IndefiniteCovariance(lam[0], tr)
    return symmetrize((V * np.clip(lam, 0.0, None)) @ V.T)


def _step(b, model, cm, dz, cfg):
    t, dt = b.t, cfg.dt
    m, P = b.m, b.P
    A, G = model.A_at(t), model.G_at(t)
    C, phi = cm.C_at(t), cm.phi_at(t)
    dz = np.asarray(dz, dtype=float).reshape(-1)
    K = solve_spd(phi, C @ P).T
    innov = dz - (C @ m) * dt
    B = model.B_at(t)
    # grouped so that B = 0, A0 = 0 adds exact zeros to the kf_cc arithmetic
    drift = A @ m + (model.A0_at(t) + 0.5 * (G @ B + (B @ B) * m))
    m_new = m + drift * dt + K @ innov
    extra = multiplicative_cov_terms(m, P, model, t, cfg.covariance_form)
    P_new = P + (A @ P + P @ A.T + G @ G.T + extra - K @ C @ P) * dt
    return GaussianBelief(t + dt, m_new, _enforce_psd(symmetrize(P_new))), innov


def step(b, model, cm, dz, cfg):
    """One Euler step of the bilinear filter over ``[b.t, b.t + cfg.dt]``."""
    return _step(b, model, cm, dz, cfg)[0]


def run(model, cm, record, b0, cfg):
    if record.kind != "continuous":
        raise GridMismatch("kf_bilinear.run needs a continuous measurement record")
    kf_cc._check_grid(record, b0, cfg.dt)
    traj = FilterTrajectory()
    traj.append(b0, UPDATED)
    b = b0
    for dz in record.values:
        b, innov = _step(b, model, cm, dz, cfg)
        traj.append(b, UPDATED, innovation=innov)
    return traj


def kalman_specialization_check(model, cm, b0, record, cfg):
    """Largest deviation between this filter and Kalman-Bucy on identical inputs.

    ``model`` must have ``B = 0`` and ``A0 = 0``; it is run here and, viewed
    as a linear model, through :mod:`cfkalman.kf_cc`.
    """
    t_probe = [b0.t] + list(record.times)
    for t in t_probe:
        if np.any(model.B_at(t)) or np.any(model.A0_at(t)):
            raise ValueError("Kalman specialization requires B = 0 and A0 = 0")
    ours = run(model, cm, record, b0, cfg)
    ref = kf_cc.run(model, cm, record, b0, kf_cc.CcFilterConfig(dt=cfg.dt))
    dev = 0.0
    for a, c in zip(ours, ref):
        dev = max(dev, float(np.max(np.abs(a.belief.m - c.belief.m))),
                  float(np.max(np.abs(a.belief.P - c.belief.P))))
    return dev
