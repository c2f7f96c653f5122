"""Continuous-state / discrete-measurement Kalman filter.

Between observations the conditional mean and covariance follow the moment
ODEs ``dm = A m dt`` and ``dP = (A P + P A^T + G G^T) dt`` (integrated with
fixed-step RK4); at an observation instant the standard Kalman correction is
applied. Each step also exists in a vec/Kronecker form that is evaluated
literally, as an independent route to the same numbers.
"""

from dataclasses import dataclass

import numpy as np

from .models import GaussianBelief
from .numkit import as_matrix, kron, lyapunov_operator, lyapunov_solve, solve_spd, symmetrize, unvec, vec
from .trajectory import PREDICTED, UPDATED, FilterTrajectory

TIME_TOL = 1e-9


@dataclass(frozen=True)
class CdFilterConfig:
    """``dt`` is the RK4 substep; ``None`` picks ``min(1e-3 * span, 1e-2)`` per prediction."""

    dt: float = None
    use_vec_form: bool = False
    joseph_update: bool = True

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def _substeps(span, dt):
    if span <= 0.0:
        return []
    h = dt if dt is not None else min(1e-3 * span, 1e-2)
    n_full = int(np.floor(span / h * (1.0 + 1e-12)))
    steps = [h] * n_full
    rest = span - n_full * h
    if rest > 1e-12 * span:
        steps.append(rest)
    return steps


def _rk4(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_pair(f, t, m, P, h):
    # RK4 on the (mean, covariance) pair without flattening
    k1 = f(t, m, P)
    k2 = f(t + 0.5 * h, m + 0.5 * h * k1[0], P + 0.5 * h * k1[1])
    k3 = f(t + 0.5 * h, m + 0.5 * h * k2[0], P + 0.5 * h * k2[1])
    k4 = f(t + h, m + h * k3[0], P + h * k3[1])
    return (
        m + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        P + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    )


def _moment_rhs(model):
    def f(t, m, P):
        A = model.A_at(t)
        G = model.G_at(t)
        return A @ m, A @ P + P @ A.T + G @ G.T

    return f


def _moment_rhs_vec(model, n):
    eye = np.eye(n)

    def f(t, y):
        A = model.A_at(t)
        G = model.G_at(t)
        m = y[:n]
        vP = y[n:]
        dm = kron(m[None, :], eye) @ vec(A)
        dvP = lyapunov_operator(A) @ vP + vec(G @ G.T)
        return np.concatenate([dm, dvP])

    return f


def predict(b, model, t1, cfg=CdFilterConfig()):
    """Propagate ``b`` to time ``t1`` through the moment ODEs."""
    if cfg.use_vec_form:
        return predict_vec(b, model, t1, cfg)
    if t1 < b.t - TIME_TOL:
        raise ValueError(f"cannot predict backwards from {b.t} to {t1}")
    f = _moment_rhs(model)
    t = b.t
    m, P = b.m, b.P
    for h in _substeps(t1 - b.t, cfg.dt):
        m, P = _rk4_pair(f, t, m, P, h)
        P = symmetrize(P)
        t += h
    return GaussianBelief(t1, m, P)


def predict_vec(b, model, t1, cfg=CdFilterConfig()):
    """Same contract as :func:`predict`, computed with the vec/Kronecker moment ODEs."""
    if t1 < b.t - TIME_TOL:
        raise ValueError(f"cannot predict backwards from {b.t} to {t1}")
    n = b.n
    f = _moment_rhs_vec(model, n)
    t = b.t
    y = np.concatenate([b.m, vec(b.P)])
    for h in _substeps(t1 - b.t, cfg.dt):
        y = _rk4(f, t, y, h)
        y[n:] = vec(symmetrize(unvec(y[n:], n)))
        t += h
    return GaussianBelief(t1, y[:n], unvec(y[n:], n))


def _check_time(b, t_k):
    if abs(b.t - t_k) > TIME_TOL * max(1.0, abs(t_k)):
        raise ValueError(f"belief time {b.t} does not match measurement time {t_k}")


def correct(b, C, R, y, joseph=True):
    """Kalman correction with explicit ``C``, ``R``; returns ``(belief, innovation, S)``."""
    m, P = b.m, b.P
    y = np.asarray(y, dtype=float).reshape(-1)
    S = symmetrize(C @ P @ C.T + R)
    nu = y - C @ m
    K = solve_spd(S, C @ P).T
    m_post = m + K @ nu
    if joseph:
        IKC = np.eye(b.n) - K @ C
        P_post = IKC @ P @ IKC.T + K @ R @ K.T
    else:
        P_post = P - K @ C @ P
    return GaussianBelief(b.t, m_post, symmetrize(P_post)), nu, S


def correct_vec(b, C, R, y):
    m, P = b.m, b.P
    n = b.n
    y = np.asarray(y, dtype=float).reshape(-1)
    S = symmetrize(C @ P @ C.T + R)
    nu = y - C @ m
    eye = np.eye(n)
    vP = vec(P)
    # row vector nu^T S^-1 C
    row = solve_spd(S, nu[:, None]).T @ C
    m_post = vec(m) + kron(row, eye) @ vP
    gain_block = P @ C.T @ solve_spd(S, C)
    vP_post = vP - kron(gain_block, eye) @ vP
    return GaussianBelief(b.t, m_post, symmetrize(unvec(vP_post, n))), nu, S


def update(b, dm, y, t_k, cfg=CdFilterConfig()):
    """Condition ``b`` on the measurement ``y`` taken at ``t_k``."""
    if cfg.use_vec_form:
        return update_vec(b, dm, y, t_k, cfg)
    _check_time(b, t_k)
    return correct(b, dm.C_at(t_k), dm.R_at(t_k), y, joseph=cfg.joseph_update)[0]


def update_vec(b, dm, y, t_k, cfg=CdFilterConfig()):
    """Vec/Kronecker form of the correction (the plain, non-Joseph covariance update)."""
    _check_time(b, t_k)
    return correct_vec(b, dm.C_at(t_k), dm.R_at(t_k), y)[0]


def stationary_predict_cov(model, t=0.0):
    """Stationary covariance of the prediction ODE: ``A P + P A^T + G G^T = 0``."""
    A = model.A_at(t)
    G = model.G_at(t)
    return lyapunov_solve(A, G @ G.T)


def stationary_update_cov(P_minus, dm, t=None):
    """Apply the vec-form covariance correction to a stationary prior covariance."""
    if t is None:
        t = dm.schedule[0] if dm.schedule else 0.0
    P = as_matrix(P_minus, "P_minus")
    n = P.shape[0]
    C = dm.C_at(t)
    R = dm.R_at(t)
    S = symmetrize(C @ P @ C.T + R)
    gain_block = P @ C.T @ solve_spd(S, C)
    vP = vec(P)
    return symmetrize(unvec(vP - kron(gain_block, np.eye(n)) @ vP, n))


def run(model, dm, measurements, b0, cfg=CdFilterConfig(), t_end=None, output_times=()):
    """Alternate prediction to each measurement instant and correction there.

    ``measurements`` is a discrete :class:`~cfkalman.sdesim.MeasurementRecord`
    (or ``None`` for pure prediction). Predicted beliefs are also recorded at
    ``output_times`` and, when given, at ``t_end``.
    """
    traj = FilterTrajectory()
    traj.append(b0, UPDATED)
    events = []
    if measurements is not None:
        events += [(float(t), 0, y) for t, y in zip(measurements.times, measurements.values)]
    events += [(float(t), 1, None) for t in output_times if t > b0.t]
    if t_end is not None and t_end > b0.t:
        events.append((float(t_end), 1, None))
    events.sort(key=lambda e: (e[0], e[1]))
    b = b0
    for t, kind, y in events:
        if t < b0.t - TIME_TOL:
            raise ValueError(f"measurement at {t} precedes the initial belief time {b0.t}")
        if kind == 1 and traj[-1].t == t:
            continue
        b = predict(b, model, t, cfg)
        if kind == 1:
            traj.append(b, PREDICTED)
            continue
        traj.append(b, PREDICTED)
        C, R = dm.C_at(t), dm.R_at(t)
        if cfg.use_vec_form:
            b, nu, S = correct_vec(b, C, R, y)
        else:
            b, nu, S = correct(b, C, R, y, joseph=cfg.joseph_update)
        traj.append(b, UPDATED, innovation=nu, innovation_cov=S)
    return traj
