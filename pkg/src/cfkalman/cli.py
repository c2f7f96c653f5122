"""Scenario runner.

Usage::

    cfkalman simulate   --scenario s.yaml --out runs/
    cfkalman filter     --scenario s.yaml --out runs/ [--filter cd|cc|bilinear] [--mc N]
    cfkalman stationary --scenario s.yaml --out runs/
    cfkalman verify     --scenario s.yaml --out runs/ [--verify all|theorem1|theorem2|appendix]

Exit status is 0 on success, 1 when the scenario is invalid and 2 on a
numerical failure (including failed verification probes).
"""

import argparse
import copy
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import cfverify, kf_bilinear, kf_cc, kf_cd, sdesim
from .errors import NumericalError, ParseError, ValidationError
from .models import (
    BilinearStateModel,
    ContinuousMeasurementModel,
    DiscreteMeasurementModel,
    GaussianBelief,
    LinearStateModel,
    validate,
)
from .numkit import lyapunov_residual

log = logging.getLogger("cfkalman")

FILTERS = ("cd", "cc", "bilinear")
VERIFY_CHOICES = ("all", "theorem1", "theorem2", "appendix")
SUMMARY_KEYS = ("scenario_hash", "seed", "final_mean", "final_cov", "innovation_mean",
                "innovation_var", "mse", "p_trace_avg")
MAX_THEOREM1_BELIEFS = 50


@dataclass
class Scenario:
    state: object
    measurement: object
    initial_belief: GaussianBelief
    x0: np.ndarray
    T: float
    dt: float
    seed: int
    filter: str
    covariance_form: str
    cd_config: kf_cd.CdFilterConfig
    verify: tuple
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def hash(self):
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def n_steps(self):
        return sdesim.n_steps_for(self.dt, self.T)

    @property
    def provenance(self):
        return [f"scenario_hash={self.hash}", f"seed={self.seed}"]


def _load_yaml(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(None, f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError(line, getattr(exc, "problem", None) or str(exc)) from None
    if not isinstance(data, dict):
        raise ParseError(1, "scenario must be a mapping at top level")
    return data


def _matrix(errs, where, value, required=True):
    if value is None:
        if required:
            errs.append(f"{where} is required")
        return None
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        errs.append(f"{where} must be a numeric (nested) array")
        return None
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        errs.append(f"{where} must be a finite 2-D array")
        return None
    return M


def _vector(errs, where, value, required=True):
    if value is None:
        if required:
            errs.append(f"{where} is required")
        return None
    try:
        v = np.array(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        errs.append(f"{where} must be a numeric array")
        return None
    if not np.all(np.isfinite(v)):
        errs.append(f"{where} must be finite")
        return None
    return v


def _number(errs, where, value, default=None, positive=False):
    if value is None:
        if default is None:
            errs.append(f"{where} is required")
        return default
    try:
        x = float(value)
    except (TypeError, ValueError):
        errs.append(f"{where} must be a number")
        return default
    if positive and not x > 0.0:
        errs.append(f"{where} must be positive")
    return x


def resolve(data, seed=None, filter_kind=None, covariance_form=None, verify=None):
    """Validate a raw scenario mapping and fill in defaults; raises ValidationError."""
    raw = copy.deepcopy(data)
    errs = []
    model_d = raw.get("model") or {}
    meas_d = raw.get("measurement") or {}
    belief_d = raw.get("initial_belief") or {}
    truth_d = raw.get("truth") or {}
    filt_d = raw.get("filter") or {}
    if not isinstance(filt_d, dict):
        filt_d = {"kind": filt_d}
    if not model_d:
        errs.append("model is required")
    if not meas_d:
        errs.append("measurement is required")

    kind = model_d.get("type", "linear")
    if kind not in ("linear", "bilinear"):
        errs.append(f"model.type must be linear or bilinear, got {kind!r}")
    A = _matrix(errs, "model.A", model_d.get("A"), bool(model_d))
    G = _matrix(errs, "model.G", model_d.get("G"), bool(model_d))
    state = None
    if A is not None and G is not None:
        if kind == "bilinear":
            B = _vector(errs, "model.B", model_d.get("B"))
            A0 = _vector(errs, "model.A0", model_d.get("A0", [0.0] * A.shape[0]))
            if B is not None and A0 is not None:
                state = BilinearStateModel(A=A, G=G, B=B, A0=A0)
        else:
            state = LinearStateModel(A=A, G=G)
        if state is not None:
            errs += [f"model.{e}" for e in validate(state)]

    T = _number(errs, "horizon", raw.get("horizon"), positive=True)
    dt = _number(errs, "dt", raw.get("dt"), positive=True)
    if T is not None and dt is not None and dt > 0:
        try:
            sdesim.n_steps_for(dt, T)
        except ValueError as exc:
            errs.append(f"dt: {exc}")

    mkind = meas_d.get("type", "discrete")
    C = _matrix(errs, "measurement.C", meas_d.get("C"), bool(meas_d))
    meas = None
    if mkind == "discrete":
        R = _matrix(errs, "measurement.R", meas_d.get("R"), bool(meas_d))
        schedule = meas_d.get("schedule")
        every = meas_d.get("every")
        if schedule is None and every is not None and T is not None:
            every = _number(errs, "measurement.every", every, positive=True)
            if every and every > 0:
                k = int(np.floor(T / every + 1e-9))
                schedule = [float(every * (i + 1)) for i in range(k)]
        if schedule is None:
            schedule = []
        if C is not None and R is not None:
            meas = DiscreteMeasurementModel(C=C, R=R, schedule=schedule)
            errs += [f"measurement.{e}" for e in validate(meas)]
            if dt is not None and dt > 0:
                for tk in schedule:
                    if abs(tk / dt - round(tk / dt)) > 1e-6 or tk < 0 or (T is not None and tk > T + 1e-12):
                        errs.append(f"measurement.schedule: instant {tk} is not on the simulation grid")
                        break
        meas_d = {**meas_d, "schedule": list(schedule)}
    elif mkind == "continuous":
        phi = _matrix(errs, "measurement.phi_eta", meas_d.get("phi_eta"), bool(meas_d))
        if C is not None and phi is not None:
            meas = ContinuousMeasurementModel(C=C, phi_eta=phi)
            errs += [f"measurement.{e}" for e in validate(meas)]
    else:
        errs.append(f"measurement.type must be discrete or continuous, got {mkind!r}")

    n = state.n if state is not None else None
    if n is not None and meas is not None and meas.C_at(0.0).shape[1] != n:
        errs.append(f"measurement.C has {meas.C_at(0.0).shape[1]} columns, expected {n}")

    m0 = _vector(errs, "initial_belief.m", belief_d.get("m", None if n is None else [0.0] * n))
    P0 = _matrix(errs, "initial_belief.P", belief_d.get("P", None if n is None else np.eye(n).tolist()))
    b0 = None
    if m0 is not None and P0 is not None:
        if n is not None and (m0.size != n or P0.shape != (n, n)):
            errs.append(f"initial_belief dimensions do not match state dimension {n}")
        elif P0.shape == (m0.size, m0.size):
            b0 = GaussianBelief(0.0, m0, P0)
            errs += [f"initial_belief.{e}" for e in validate(b0)]
        else:
            errs.append("initial_belief.P shape does not match initial_belief.m")

    x0 = _vector(errs, "truth.x0", truth_d.get("x0"), required=False)
    if x0 is not None and n is not None and x0.size != n:
        errs.append(f"truth.x0 has length {x0.size}, expected {n}")

    if seed is None:
        seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errs.append("seed must be a non-negative integer")
        seed = 0

    if filter_kind is None:
        filter_kind = filt_d.get("kind")
    if filter_kind is None:
        filter_kind = "cd" if mkind == "discrete" else ("bilinear" if kind == "bilinear" else "cc")
    if filter_kind not in FILTERS:
        errs.append(f"filter.kind must be one of {FILTERS}")
    elif filter_kind == "cd" and mkind != "discrete":
        errs.append("filter.kind cd needs a discrete measurement model")
    elif filter_kind in ("cc", "bilinear") and mkind != "continuous":
        errs.append(f"filter.kind {filter_kind} needs a continuous measurement model")
    elif filter_kind in ("cd", "cc") and kind == "bilinear":
        errs.append(f"filter.kind {filter_kind} needs a linear state model")

    if covariance_form is None:
        covariance_form = filt_d.get("covariance_form", kf_bilinear.AS_PRINTED)
    covariance_form = str(covariance_form).replace("-", "_")
    if covariance_form not in kf_bilinear.COVARIANCE_FORMS:
        errs.append(f"filter.covariance_form must be one of {kf_bilinear.COVARIANCE_FORMS}")

    cd_cfg = None
    try:
        cd_cfg = kf_cd.CdFilterConfig(
            dt=filt_d.get("ode_substep"),
            use_vec_form=bool(filt_d.get("use_vec_form", False)),
            joseph_update=bool(filt_d.get("joseph_update", True)),
        )
    except (TypeError, ValueError) as exc:
        errs.append(f"filter.ode_substep: {exc}")

    if verify is None:
        verify = raw.get("verify", "all")
    if isinstance(verify, dict):
        verify = tuple(k for k, v in verify.items() if v)
    elif isinstance(verify, str):
        verify = ("theorem1", "theorem2", "appendix") if verify == "all" else (verify,)
    verify = tuple(verify)
    for v in verify:
        if v not in VERIFY_CHOICES[1:]:
            errs.append(f"verify: unknown check {v!r}")

    if errs:
        raise ValidationError(errs)

    resolved = {
        "model": {k: v for k, v in model_d.items()} | {"type": kind},
        "measurement": meas_d | {"type": mkind},
        "initial_belief": {"m": m0.tolist(), "P": P0.tolist()},
        "truth": {"x0": None if x0 is None else x0.tolist()},
        "horizon": T,
        "dt": dt,
        "seed": seed,
        "filter": {"kind": filter_kind, "covariance_form": covariance_form,
                   "ode_substep": cd_cfg.dt, "use_vec_form": cd_cfg.use_vec_form,
                   "joseph_update": cd_cfg.joseph_update},
        "verify": list(verify),
    }
    return Scenario(state, meas, b0, x0, T, dt, seed, filter_kind, covariance_form, cd_cfg, verify,
                    raw=resolved)


def load_scenario(path, **overrides):
    """Parse and validate a YAML scenario file."""
    return resolve(_load_yaml(path), **overrides)


# --- simulation and filtering -------------------------------------------------


def simulate(sc, index=0):
    """Truth path and measurement record for run ``index`` of the scenario."""
    x0 = sc.x0 if sc.x0 is not None else sdesim.sample_initial_state(sc.initial_belief, sc.seed, index)
    if isinstance(sc.state, BilinearStateModel):
        path = sdesim.simulate_stratonovich(sc.state, x0, sc.dt, sc.T, sc.seed, index=index)
    else:
        path = sdesim.simulate_ito(sc.state, x0, sc.dt, sc.T, sc.seed, index=index)
    if isinstance(sc.measurement, DiscreteMeasurementModel):
        record = sdesim.gen_discrete_measurements(path, sc.measurement, sc.seed, index=index)
    else:
        record = sdesim.gen_continuous_measurements(path, sc.measurement, sc.seed, index=index)
    return path, record


def run_filter(sc, record):
    b0 = sc.initial_belief
    if sc.filter == "cd":
        return kf_cd.run(sc.state, sc.measurement, record, b0, sc.cd_config, t_end=sc.T)
    if sc.filter == "cc":
        return kf_cc.run(sc.state, sc.measurement, record, b0, kf_cc.CcFilterConfig(dt=sc.dt))
    cfg = kf_bilinear.BilinearFilterConfig(dt=sc.dt, covariance_form=sc.covariance_form)
    return kf_bilinear.run(sc.state, sc.measurement, record, b0, cfg)


def run_metrics(path, traj):
    """Squared error and covariance trace averaged over the trajectory's grid instants."""
    idx = np.rint((traj.times - path.times[0]) / path.dt).astype(int) if path.n_steps else np.zeros(len(traj), int)
    err = traj.means - path.states[idx]
    sq = np.sum(err**2, axis=1)
    tr = np.trace(traj.covariances, axis1=1, axis2=2)
    return float(sq.mean()), float(tr.mean())


def summarize(sc, path, traj, innovations=None, mse=None, p_trace=None):
    nu = traj.innovations if innovations is None else innovations
    if mse is None:
        mse, p_trace = run_metrics(path, traj)
    if nu.size:
        nu_mean = nu.mean(axis=0).tolist()
        nu_var = nu.var(axis=0, ddof=1).tolist() if nu.shape[0] > 1 else [0.0] * nu.shape[1]
    else:
        nu_mean, nu_var = [], []
    return {
        "scenario_hash": sc.hash,
        "seed": sc.seed,
        "final_mean": traj.final.m.tolist(),
        "final_cov": traj.final.P.tolist(),
        "innovation_mean": nu_mean,
        "innovation_var": nu_var,
        "mse": mse,
        "p_trace_avg": p_trace,
    }


def _one_run(sc, index):
    path, record = simulate(sc, index)
    traj = run_filter(sc, record)
    mse, p_trace = run_metrics(path, traj)
    return path, record, traj, mse, p_trace


def _write(out, name, writer):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", newline="") as fh:
        writer(fh)


def _write_json(out, name, obj):
    def dump(fh):
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")
    _write(out, name, dump)


def _echo(sc, out):
    _write(out, "scenario.resolved.yaml",
           lambda fh: fh.write("".join(f"# {l}\n" for l in sc.provenance)
                               + yaml.safe_dump(sc.raw, sort_keys=True)))


def cmd_simulate(sc, out):
    path, record = simulate(sc)
    _echo(sc, out)
    _write(out, "truth.csv", lambda fh: sdesim.write_path_csv(fh, path, sc.provenance))
    _write(out, "measurements.csv", lambda fh: sdesim.write_record_csv(fh, record, sc.provenance))
    log.info("simulated %d steps", path.n_steps)
    return 0


def cmd_filter(sc, out, mc=1):
    _echo(sc, out)
    if mc <= 1:
        path, record, traj, mse, p_trace = _one_run(sc, 0)
        summary = summarize(sc, path, traj, mse=mse, p_trace=p_trace)
    else:
        # runs are independent (one substream per index); map() keeps index order
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(lambda i: _one_run(sc, i), range(mc)))
        path, record, traj = results[0][:3]
        nu = np.concatenate([r[2].innovations for r in results if r[2].innovations.size] or [np.zeros((0, 0))])
        summary = summarize(sc, path, traj, innovations=nu,
                            mse=float(np.mean([r[3] for r in results])),
                            p_trace=float(np.mean([r[4] for r in results])))

        def write_runs(fh):
            fh.write("".join(f"# {l}\n" for l in sc.provenance))
            fh.write("run,mse,p_trace_avg\n")
            for i, r in enumerate(results):
                fh.write(f"{i},{r[3]!r},{r[4]!r}\n")
        _write(out, "mc_runs.csv", write_runs)
    _write(out, "truth.csv", lambda fh: sdesim.write_path_csv(fh, path, sc.provenance))
    _write(out, "measurements.csv", lambda fh: sdesim.write_record_csv(fh, record, sc.provenance))
    _write(out, "trajectory.csv", lambda fh: traj.to_csv(fh, sc.provenance))
    _write_json(out, "summary.json", summary)
    return 0


def cmd_stationary(sc, out):
    if isinstance(sc.state, BilinearStateModel):
        raise ValidationError(["model.type: stationary solutions are defined for linear models only"])
    A = sc.state.A_at(0.0)
    G = sc.state.G_at(0.0)
    result = {"scenario_hash": sc.hash, "seed": sc.seed}
    if isinstance(sc.measurement, DiscreteMeasurementModel):
        P_pred = kf_cd.stationary_predict_cov(sc.state)
        result["kind"] = "lyapunov"
        result["P_predict"] = P_pred.tolist()
        result["residual"] = lyapunov_residual(A, P_pred, G @ G.T)
        result["P_update"] = kf_cd.stationary_update_cov(P_pred, sc.measurement).tolist()
    else:
        cm = sc.measurement
        P = kf_cc.stationary_cov(sc.state, cm)
        result["kind"] = "riccati"
        result["P"] = P.tolist()
        result["residual"] = kf_cc.riccati_residual(P, A, G, cm.C_at(0.0), cm.phi_at(0.0))
    _write_json(out, "stationary.json", result)
    return 0


def cmd_verify(sc, out, checks=None):
    checks = tuple(checks or sc.verify)
    path, record, traj, _, _ = _one_run(sc, 0)
    beliefs = traj.beliefs
    stride = max(1, len(beliefs) // MAX_THEOREM1_BELIEFS)
    records = []
    linear = isinstance(sc.state, LinearStateModel)
    if "theorem1" in checks and linear:
        records += cfverify.theorem1_report(sc.state, beliefs[::stride])
    if "theorem2" in checks and linear and sc.filter == "cc":
        records += cfverify.theorem2_report(sc.state, sc.measurement, traj, record)
    if "appendix" in checks:
        records += cfverify.appendix_report(beliefs[::stride])
    n_fail = sum(not r.passed for r in records)

    def dump(fh):
        fh.write("".join(f"# {l}\n" for l in sc.provenance))
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")
    _write(out, "verify_report.jsonl", dump)
    log.info("verify: %d probes, %d failed", len(records), n_fail)
    print(f"verify: {len(records)} probes, {n_fail} failed")
    return 0 if n_fail == 0 else 2


COMMANDS = ("simulate", "filter", "stationary", "verify")


def build_parser():
    ap = argparse.ArgumentParser(prog="cfkalman", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--scenario", required=True, help="YAML scenario file")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    ap.add_argument("--filter", choices=FILTERS, default=None)
    ap.add_argument("--covariance-form", choices=("as-printed", "moment-exact"), default=None)
    ap.add_argument("--verify", choices=VERIFY_CHOICES, default=None)
    ap.add_argument("--mc", type=int, default=1, help="number of independent Monte Carlo runs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        sc = load_scenario(args.scenario, seed=args.seed, filter_kind=args.filter,
                           covariance_form=args.covariance_form, verify=args.verify)
    except ParseError as exc:
        print(f"ParseError: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        for e in exc.errors:
            print(f"ValidationError: {e}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        if args.command == "simulate":
            return cmd_simulate(sc, out)
        if args.command == "filter":
            return cmd_filter(sc, out, mc=args.mc)
        if args.command == "stationary":
            return cmd_stationary(sc, out)
        return cmd_verify(sc, out)
    except ValidationError as exc:
        for e in exc.errors:
            print(f"ValidationError: {e}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
