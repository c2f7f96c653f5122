"""Kalman-Bucy filter for continuous state and continuous measurements.

The mean is driven by the innovation ``dz - C m dt`` through the gain
``K = P C^T phi^-1``; the covariance obeys the Riccati ODE
``dP = (A P + P A^T + G G^T - P C^T phi^-1 C P) dt``. Both are advanced with
an Euler step on the measurement grid.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, NoConvergence, NotSPD, SingularSystem
from .models import GaussianBelief
from .numkit import is_hurwitz, kron, lyapunov_operator, lyapunov_solve, solve_spd, symmetrize, unvec, vec
from .trajectory import UPDATED, FilterTrajectory

RICCATI_TOL = 1e-9
MAX_NEWTON_ITER = 100
STALL_RTOL = 1e-12


@dataclass(frozen=True)
class CcFilterConfig:
    """``riccati_rk4`` advances the covariance with one RK4 step instead of Euler."""

    dt: float
    use_vec_form: bool = False
    riccati_rk4: bool = False

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def gain(b, cm, t=None):
    """Kalman-Bucy gain ``P C^T phi^-1`` (n x m)."""
    t = b.t if t is None else t
    C = cm.C_at(t)
    return solve_spd(cm.phi_at(t), C @ b.P).T


def riccati_rhs(P, A, G, C, phi):
    K = solve_spd(phi, C @ P).T
    return A @ P + P @ A.T + G @ G.T - K @ C @ P


def _riccati_rk4(P, A, G, C, phi, dt):
    k1 = riccati_rhs(P, A, G, C, phi)
    k2 = riccati_rhs(P + 0.5 * dt * k1, A, G, C, phi)
    k3 = riccati_rhs(P + 0.5 * dt * k2, A, G, C, phi)
    k4 = riccati_rhs(P + dt * k3, A, G, C, phi)
    return P + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _step(b, model, cm, dz, cfg):
    t, dt = b.t, cfg.dt
    m, P = b.m, b.P
    A, G = model.A_at(t), model.G_at(t)
    C, phi = cm.C_at(t), cm.phi_at(t)
    dz = np.asarray(dz, dtype=float).reshape(-1)
    K = solve_spd(phi, C @ P).T
    innov = dz - (C @ m) * dt
    m_new = m + (A @ m) * dt + K @ innov
    if cfg.riccati_rk4:
        P_new = _riccati_rk4(P, A, G, C, phi, dt)
    else:
        P_new = P + (A @ P + P @ A.T + G @ G.T - K @ C @ P) * dt
    return GaussianBelief(t + dt, m_new, symmetrize(P_new)), innov


def _step_vec(b, model, cm, dz, cfg):
    t, dt = b.t, cfg.dt
    n = b.n
    m, P = b.m, b.P
    A, G = model.A_at(t), model.G_at(t)
    C, phi = cm.C_at(t), cm.phi_at(t)
    dz = np.asarray(dz, dtype=float).reshape(-1)
    eye = np.eye(n)
    vP = vec(P)
    innov = dz - (C @ m) * dt
    # (dz - C m dt)^T phi^-1 C, a 1 x n row
    row = solve_spd(phi, innov[:, None]).T @ C
    m_new = vec(m) + kron(m[None, :], eye) @ vec(A) * dt + kron(row, eye) @ vP
    gain_block = P @ C.T @ solve_spd(phi, C)
    dvP = lyapunov_operator(A) @ vP + vec(G @ G.T) - kron(gain_block, eye) @ vP
    P_new = unvec(vP + dvP * dt, n)
    return GaussianBelief(t + dt, m_new, symmetrize(P_new)), innov


def step(b, model, cm, dz, cfg):
    """Advance ``b`` over ``[b.t, b.t + cfg.dt]`` given the increment ``dz``."""
    if cfg.use_vec_form:
        return step_vec(b, model, cm, dz, cfg)
    return _step(b, model, cm, dz, cfg)[0]


def step_vec(b, model, cm, dz, cfg):
    """Same contract as :func:`step`, evaluated through the vec/Kronecker forms."""
    return _step_vec(b, model, cm, dz, cfg)[0]


def riccati_residual(P, A, G, C, phi):
    """Frobenius norm of the printed vec-form algebraic Riccati equation at ``P``."""
    n = P.shape[0]
    gain_block = P @ C.T @ solve_spd(phi, C)
    r = lyapunov_operator(A) @ vec(P) + vec(G @ G.T) - kron(gain_block, np.eye(n)) @ vec(P)
    return float(np.linalg.norm(r))


def _initial_gain(A, G, C, phi):
    """A gain ``K0`` with ``A - K0 C`` Hurwitz, or ``None``.

    Zero when ``A`` is already stable. Otherwise Bass's construction: with
    ``beta > 0`` large enough that ``-(A + beta I)`` is Hurwitz, solve
    ``(A + beta I)^T Z + Z (A + beta I) = 2 C^T C``; then
    ``(A - Z^-1 C^T C)`` has every eigenvalue real part equal to ``-beta``.
    """
    n = A.shape[0]
    if is_hurwitz(A):
        return np.zeros((n, C.shape[0]))
    beta = max(0.0, -float(np.min(np.linalg.eigvals(A).real))) + 1.0
    shifted = -(A.T + beta * np.eye(n))
    try:
        Z = lyapunov_solve(shifted, 2.0 * C.T @ C)
        K0 = solve_spd(symmetrize(Z), C.T)
    except (SingularSystem, NotSPD):
        return None
    return K0 if is_hurwitz(A - K0 @ C) else None


def solve_riccati(A, G, C, phi, tol=RICCATI_TOL, max_iter=MAX_NEWTON_ITER):
    """Newton-Kleinman iteration for ``A P + P A^T + G G^T - P C^T phi^-1 C P = 0``.

    Each iterate solves the Lyapunov equation of the closed loop ``A - K C``;
    the gain is then refreshed from the new covariance. Assumes ``(A, C)``
    detectable and ``(A, G)`` stabilizable.

    Stops when the residual is below ``tol``. On badly scaled problems the
    residual can stall above ``tol`` at the rounding level of the terms it
    is made of; an iterate that stops improving there is accepted too.
    """
    A, G, C, phi = (np.asarray(M, dtype=float) for M in (A, G, C, phi))
    K = _initial_gain(A, G, C, phi)
    if K is None:
        raise NoConvergence(0, np.inf)
    Q = G @ G.T
    residual = np.inf
    for it in range(1, max_iter + 1):
        Acl = A - K @ C
        try:
            P = lyapunov_solve(Acl, Q + K @ phi @ K.T)
        except SingularSystem:
            raise NoConvergence(it, residual) from None
        previous, residual = residual, riccati_residual(P, A, G, C, phi)
        K = solve_spd(phi, C @ P).T
        if residual <= tol:
            return _polish(P, residual, A, G, C, phi, K)
        if residual >= 0.5 * previous and residual <= STALL_RTOL * _riccati_scale(P, A, Q, K, C):
            return P
    raise NoConvergence(max_iter, residual)


def _polish(P, residual, A, G, C, phi, K):
    # one extra Newton step is nearly free and usually gains many digits
    try:
        P2 = lyapunov_solve(A - K @ C, G @ G.T + K @ phi @ K.T)
    except SingularSystem:
        return P
    return P2 if riccati_residual(P2, A, G, C, phi) < residual else P


def _riccati_scale(P, A, Q, K, C):
    return max(np.linalg.norm(A @ P), np.linalg.norm(Q), np.linalg.norm(K @ C @ P))


def stationary_cov(model, cm, t=0.0):
    """Stationary Kalman-Bucy covariance for constant coefficients."""
    return solve_riccati(model.A_at(t), model.G_at(t), cm.C_at(t), cm.phi_at(t))


def run(model, cm, record, b0, cfg):
    """Step through every increment of a continuous record; innovations are ``dz - C m dt``."""
    if record.kind != "continuous":
        raise GridMismatch("kf_cc.run needs a continuous measurement record")
    _check_grid(record, b0, cfg.dt)
    traj = FilterTrajectory()
    traj.append(b0, UPDATED)
    advance = _step_vec if cfg.use_vec_form else _step
    b = b0
    for dz in record.values:
        b, innov = advance(b, model, cm, dz, cfg)
        traj.append(b, UPDATED, innovation=innov)
    return traj


def _check_grid(record, b0, dt):
    if len(record) == 0:
        return
    rec_dt = record.dt if record.dt is not None else (
        float(record.times[1] - record.times[0]) if len(record) > 1 else dt)
    if abs(rec_dt - dt) > 1e-9 * dt:
        raise GridMismatch(f"record step {rec_dt} differs from filter step {dt}")
    if abs(record.times[0] - b0.t) > 1e-9 * max(1.0, abs(b0.t)):
        raise GridMismatch(f"record starts at {record.times[0]}, belief is at {b0.t}")
