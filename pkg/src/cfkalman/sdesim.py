"""Ground-truth simulation of linear and bilinear SDEs and their measurements.

Every random draw comes from a PCG64 stream keyed by ``(seed, stream, index)``
so the state noise, the measurement noise and separate paths never share a
stream, and results do not depend on how work is scheduled.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidStep, ScheduleOffGrid
from .numkit import as_vector, cholesky_spd

STATE_STREAM = 0
DISCRETE_MEAS_STREAM = 1
CONTINUOUS_MEAS_STREAM = 2
ENSEMBLE_STREAM = 3
INITIAL_STATE_STREAM = 4


def rng_for(seed, stream, index=0):
    ss = np.random.SeedSequence([int(seed), int(stream), int(index)])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SamplePath:
    times: np.ndarray
    states: np.ndarray  # (N+1, n)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def n_steps(self):
        return self.times.size - 1


@dataclass(frozen=True)
class MeasurementRecord:
    """Discrete records hold ``(t_k, y_k)`` pairs; continuous records hold one
    increment ``dz`` per path step, stamped with the step's left end point."""

    kind: str
    times: np.ndarray
    values: np.ndarray  # (K, m)
    dt: float = None

    def __post_init__(self):
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown record kind {self.kind!r}")

    def __len__(self):
        return self.times.size


def n_steps_for(dt, T):
    dt = float(dt)
    T = float(T)
    if not dt > 0.0:
        raise InvalidStep(f"dt must be positive, got {dt}")
    if T < 0.0:
        raise InvalidStep(f"T must be non-negative, got {T}")
    ratio = T / dt
    n = int(round(ratio))
    if abs(ratio - n) > 1e-6 * max(1.0, ratio):
        raise InvalidStep(f"T={T} is not an integer multiple of dt={dt}")
    return n


def time_grid(dt, n_steps, t0=0.0):
    return t0 + dt * np.arange(n_steps + 1)


def _step(model, x, t, dt, dW, scheme):
    a = model.drift(x, t)
    S = model.diffusion(x, t)
    noise = np.einsum("...ij,...j->...i", S, dW)
    if scheme == "ito":
        return x + a * dt + noise
    pred = x + a * dt + noise
    S2 = model.diffusion(pred, t)
    return x + a * dt + 0.5 * (noise + np.einsum("...ij,...j->...i", S2, dW))


def integrate(model, x0, dt, increments, scheme="ito", t0=0.0):
    """Integrate with prescribed Brownian increments ``(N, d)``; returns ``(N+1, n)``.

    ``scheme`` is ``"ito"`` (Euler-Maruyama) or ``"stratonovich"`` (Heun
    predictor-corrector). Feeding identical increments to both schemes is how
    pathwise comparisons are made.
    """
    if scheme not in ("ito", "stratonovich"):
        raise ValueError(f"unknown scheme {scheme!r}")
    x = as_vector(x0, "x0")
    increments = np.asarray(increments, dtype=float)
    out = np.empty((increments.shape[0] + 1, x.size))
    out[0] = x
    for k, dW in enumerate(increments):
        x = _step(model, x, t0 + k * dt, dt, dW, scheme)
        out[k + 1] = x
    return out


def brownian_increments(d, dt, n_steps, seed, index=0):
    rng = rng_for(seed, STATE_STREAM, index)
    return rng.standard_normal((n_steps, d)) * np.sqrt(dt)


def _simulate(model, x0, dt, T, seed, scheme, index, t0):
    n_steps = n_steps_for(dt, T)
    x0 = as_vector(x0, "x0")
    if x0.size != model.n:
        raise ValueError(f"x0 has length {x0.size}, model state dimension is {model.n}")
    dW = brownian_increments(model.d, dt, n_steps, seed, index)
    states = integrate(model, x0, dt, dW, scheme=scheme, t0=t0)
    return SamplePath(time_grid(dt, n_steps, t0), states)


def simulate_ito(model, x0, dt, T, seed, index=0, t0=0.0):
    """Euler-Maruyama path of ``model`` read as an Ito SDE.

    To simulate a Stratonovich bilinear model this way, convert it first with
    :func:`cfkalman.models.to_ito`.
    """
    return _simulate(model, x0, dt, T, seed, "ito", index, t0)


def simulate_stratonovich(model, x0, dt, T, seed, index=0, t0=0.0):
    """Stratonovich-Heun path of ``model``; same noise stream as :func:`simulate_ito`."""
    return _simulate(model, x0, dt, T, seed, "stratonovich", index, t0)


def simulate_ensemble(model, x0, dt, T, n_paths, seed, scheme="ito", keep_path=False, t0=0.0):
    """Vectorised ensemble of ``n_paths`` paths.

    ``x0`` is a single state or an ``(n_paths, n)`` array. Increments come
    from one ensemble stream keyed by ``seed`` and are drawn step by step, so
    the same seed gives the same increments to both schemes. Returns the final
    states ``(n_paths, n)``, or all states ``(N+1, n_paths, n)`` with
    ``keep_path``.
    """
    n_steps = n_steps_for(dt, T)
    x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (n_paths, model.n)))
    rng = rng_for(seed, ENSEMBLE_STREAM)
    sq = np.sqrt(dt)
    hist = [x.copy()] if keep_path else None
    for k in range(n_steps):
        dW = rng.standard_normal((n_paths, model.d)) * sq
        x = _step(model, x, t0 + k * dt, dt, dW, scheme)
        if keep_path:
            hist.append(x.copy())
    return np.stack(hist) if keep_path else x


def _noise_factor(cov):
    # exact zero covariance is accepted so that noiseless records can be produced
    if not np.any(cov):
        return np.zeros_like(cov)
    return cholesky_spd(cov)


def _grid_index(path, t):
    t0 = path.times[0]
    dt = path.dt
    if path.n_steps == 0:
        idx = 0
    else:
        idx = int(round((t - t0) / dt))
    tol = 1e-9 * max(1.0, abs(t))
    if idx < 0 or idx >= path.times.size or abs(path.times[idx] - t) > tol:
        raise ScheduleOffGrid(f"measurement instant {t} is not on the path grid")
    return idx


def gen_discrete_measurements(path, dm, seed, index=0):
    """``y_k = C(t_k) x(t_k) + v_k``, ``v_k ~ N(0, R(t_k))`` at every scheduled instant."""
    rng = rng_for(seed, DISCRETE_MEAS_STREAM, index)
    times = np.asarray(dm.schedule, dtype=float)
    ys = []
    for tk in times:
        x = path.states[_grid_index(path, tk)]
        C = dm.C_at(tk)
        L = _noise_factor(dm.R_at(tk))
        ys.append(C @ x + L @ rng.standard_normal(C.shape[0]))
    values = np.array(ys).reshape(len(times), -1) if ys else np.zeros((0, dm.m))
    return MeasurementRecord("discrete", times, values)


def gen_continuous_measurements(path, cm, seed, index=0):
    """Per-step increments ``dz_k = C(t_k) x_k dt + d eta_k``, ``d eta_k ~ N(0, phi dt)``."""
    rng = rng_for(seed, CONTINUOUS_MEAS_STREAM, index)
    dt = path.dt
    times = path.times[:-1]
    m = cm.m
    dz = np.empty((times.size, m))
    for k, t in enumerate(times):
        L = _noise_factor(cm.phi_at(t))
        dz[k] = cm.C_at(t) @ path.states[k] * dt + np.sqrt(dt) * (L @ rng.standard_normal(m))
    return MeasurementRecord("continuous", times.copy(), dz, dt=dt)


def sample_initial_state(b0, seed, index=0):
    """Draw a truth initial state from the belief ``N(m0, P0)`` (``P0 = 0`` allowed)."""
    rng = rng_for(seed, INITIAL_STATE_STREAM, index)
    L = _noise_factor(b0.P)
    return b0.m + L @ rng.standard_normal(b0.n)


def _fmt(x):
    return repr(float(x))


def write_csv(fh, times, values, prefix, header_lines=()):
    """CSV ``t,<prefix>1..<prefix>k`` with shortest round-trip floats."""
    for line in header_lines:
        fh.write(f"# {line}\n")
    k = values.shape[1] if values.ndim == 2 else 0
    fh.write(",".join(["t"] + [f"{prefix}{i + 1}" for i in range(k)]) + "\n")
    for t, row in zip(times, values):
        fh.write(",".join([_fmt(t)] + [_fmt(v) for v in row]) + "\n")


def write_path_csv(fh, path, header_lines=()):
    write_csv(fh, path.times, path.states, "x", header_lines)


def write_record_csv(fh, record, header_lines=()):
    prefix = "y" if record.kind == "discrete" else "dz"
    write_csv(fh, record.times, record.values, prefix, header_lines)
