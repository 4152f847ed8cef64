"""Experiment runner: config file in, JSON report and exit status out.

Configs are INI-style, one experiment per file, with strict validation
(unknown sections or keys are errors).  Exit status: 0 when every check
in the experiment passed, 1 when a statistical or numerical check failed,
2 for configuration or usage errors.

Reports are reproducible: the numerical content is a pure function of the
parsed config, independent of the worker count, because all randomness is
derived from (base_seed, path or block index, stream tag) and results are
merged in index order.  Wall-clock time and worker count live under the
separate "runtime" key.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
import time
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .definetti import decomposition_experiment, reconstruct_brownian, write_decomposition_csv
from .errors import ConfigInvalidError, RotinvError
from .linalg import DEFAULT_EPS_PD
from .parallel import resolve_workers
from .paths import TimeGrid, default_window, realized_covariation, write_csv
from .rotations import (RotationPolicy, apply_rotation, exit_times, inverse_schedule,
                        realize_policy, write_schedule_csv)
from .seeding import seed_for_path
from .simulators import ProcessSpec, SimJob, VolatilitySpec, simulate
from .stattests import (exit_moment_experiment, exit_refinement_check,
                        invariance_experiment)

SEED_RULE = ("SeedSequence(base_seed, spawn_key=(tag, index)) with tags "
             "brownian=0 volatility=1 policy=2 permutation=3; the exit engine "
             "uses spawn_key=(0, block, 0) over fixed 4096-path blocks")

EXPERIMENT_KINDS = ("simulate", "rotate", "reconstruct", "invariance",
                    "exit-moments", "decomposition", "roundtrip")

_SECTIONS = {
    "simulate": ("experiment", "grid", "process", "test"),
    "rotate": ("experiment", "grid", "process", "policy", "test"),
    "reconstruct": ("experiment", "grid", "process", "test"),
    "invariance": ("experiment", "grid", "process", "policy", "test"),
    "exit-moments": ("experiment", "grid", "test"),
    "decomposition": ("experiment", "grid", "process", "test"),
    "roundtrip": ("experiment", "grid", "test"),
}

_KEYS = {
    "experiment": {"kind", "base_seed", "workers", "out", "dump_paths"},
    "grid": {"t_max", "steps"},
    "process": {"kind", "dim", "drift", "sigma", "volatility", "vol_sigma", "vol_sigma1",
                "vol_sigma2", "vol_prob", "vol_theta", "vol_eta", "vol_y0", "counterexample"},
    "policy": {"kind", "h", "seed", "matrix", "matrices", "window"},
}

_TEST_KEYS = {
    "simulate": {"n_paths"},
    "rotate": {"n_paths", "tol"},
    "reconstruct": {"n_paths", "window", "eps_pd", "qv_tol"},
    "invariance": {"n_paths", "functionals", "family_alpha"},
    "exit-moments": {"n", "h", "n_paths", "refine"},
    "decomposition": {"n_paths", "window", "n_permutations", "independence_alpha",
                      "dependence_alpha", "expect_dependence", "eps_pd"},
    "roundtrip": {"n_paths", "h", "tol"},
}


def _fail(msg: str) -> ConfigInvalidError:
    return ConfigInvalidError(msg)


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]


def _parse_matrix(text: str, n: int) -> tuple:
    vals = _parse_floats(text)
    if len(vals) != n * n:
        raise _fail(f"matrix needs {n * n} row-major entries, got {len(vals)}")
    arr = np.asarray(vals).reshape(n, n)
    return tuple(map(tuple, arr))


def _parse_matrices(text: str, n: int) -> tuple:
    mats = []
    for blockt in text.split(";"):
        if blockt.strip():
            mats.append(_parse_matrix(blockt, n))
    if not mats:
        raise _fail("matrices list is empty")
    return tuple(mats)


class _Section(dict):
    """Validated key-value section with typed getters."""

    def __init__(self, name, raw):
        super().__init__(raw)
        self.name = name

    def get_str(self, key, default=None):
        return self.get(key, default)

    def _typed(self, key, cast, default):
        if key not in self:
            if default is None:
                raise _fail(f"[{self.name}] missing required key '{key}'")
            return default
        try:
            return cast(self[key])
        except ValueError as exc:
            raise _fail(f"[{self.name}] {key}: {exc}") from exc

    def get_int(self, key, default=None):
        return self._typed(key, int, default)

    def get_float(self, key, default=None):
        return self._typed(key, float, default)

    def get_bool(self, key, default=False):
        if key not in self:
            return default
        text = self[key].strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise _fail(f"[{self.name}] {key}: not a boolean: {self[key]!r}")


def load_config(path) -> dict:
    """Parse and validate an experiment config file."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if not parser.read(path):
            raise _fail(f"cannot read config file {path}")
    except configparser.Error as exc:
        raise _fail(f"config parse error: {exc}") from exc

    if "experiment" not in parser:
        raise _fail("missing [experiment] section")
    kind = parser["experiment"].get("kind", "").strip()
    if kind not in EXPERIMENT_KINDS:
        raise _fail(f"unknown experiment kind {kind!r}; expected one of {EXPERIMENT_KINDS}")

    wanted = _SECTIONS[kind]
    for sec in parser.sections():
        if sec not in wanted:
            raise _fail(f"unexpected section [{sec}] for experiment kind {kind}")
    sections = {}
    for sec in wanted:
        if sec not in parser:
            raise _fail(f"missing section [{sec}] for experiment kind {kind}")
        allowed = _TEST_KEYS[kind] if sec == "test" else _KEYS[sec]
        raw = dict(parser[sec])
        for key in raw:
            if key not in allowed:
                raise _fail(f"unknown key '{key}' in section [{sec}]")
        sections[sec] = _Section(sec, raw)
    return {"kind": kind, "sections": sections}


def _build_grid(sec: _Section) -> TimeGrid:
    return TimeGrid(t_max=sec.get_float("t_max"), steps=sec.get_int("steps"))


def _build_process(sec: _Section) -> tuple[int, ProcessSpec]:
    kind = sec.get_str("kind")
    dim = sec.get_int("dim")
    if kind == "brownian":
        return dim, ProcessSpec(kind="brownian")
    if kind == "drifted":
        drift = _parse_floats(sec.get_str("drift", ""))
        if len(drift) != dim:
            raise _fail(f"drift needs {dim} components")
        return dim, ProcessSpec(kind="drifted", b_tilde=tuple(drift))
    if kind == "anisotropic":
        sigma = _parse_matrix(sec.get_str("sigma", ""), dim)
        return dim, ProcessSpec(kind="anisotropic", sigma=sigma)
    if kind == "integral":
        vol_kind = sec.get_str("volatility")
        if vol_kind is None:
            raise _fail("[process] integral kind needs 'volatility'")
        try:
            vol = VolatilitySpec(
                kind=vol_kind,
                sigma=sec.get_float("vol_sigma", 1.0),
                sigma1=sec.get_float("vol_sigma1", 1.0),
                sigma2=sec.get_float("vol_sigma2", 3.0),
                prob=sec.get_float("vol_prob", 0.5),
                theta=sec.get_float("vol_theta", 1.0),
                eta=sec.get_float("vol_eta", 0.5),
                y0=sec.get_float("vol_y0", 0.0),
                counterexample=sec.get_bool("counterexample", False),
            )
        except ValueError as exc:
            raise _fail(f"[process] {exc}") from exc
        return dim, ProcessSpec(kind="integral", volatility=vol)
    raise _fail(f"unknown process kind {kind!r}")


def _build_policy(sec: _Section, dim: int, base_seed: int) -> RotationPolicy:
    kind = sec.get_str("kind")
    try:
        if kind == "constant":
            return RotationPolicy(kind="constant",
                                  matrix=_parse_matrix(sec.get_str("matrix", ""), dim))
        if kind == "piecewise-exit-time":
            return RotationPolicy(kind="piecewise-exit-time", h=sec.get_float("h"),
                                  matrices=_parse_matrices(sec.get_str("matrices", ""), dim))
        if kind == "seeded-haar-per-exit":
            return RotationPolicy(kind="seeded-haar-per-exit", h=sec.get_float("h"),
                                  seed=sec.get_int("seed", base_seed))
        if kind == "diagonalizing":
            return RotationPolicy(kind="diagonalizing", window=sec.get_int("window"))
        if kind == "drift-aligning":
            return RotationPolicy(kind="drift-aligning")
    except (ValueError, RotinvError) as exc:
        raise _fail(f"[policy] {exc}") from exc
    raise _fail(f"unknown policy kind {kind!r}")


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# Experiment drivers
# --------------------------------------------------------------------------


def _run_simulate(cfg, base_seed, workers, outdir, dump):
    sec = cfg["sections"]
    grid = _build_grid(sec["grid"])
    dim, proc = _build_process(sec["process"])
    n_paths = sec["test"].get_int("n_paths")
    job = SimJob(dim=dim, grid=grid, seed=base_seed, process=proc)
    endpoints = np.empty((n_paths, dim))
    qv_traces = np.empty(n_paths)
    for i in range(n_paths):
        sim = simulate(job, i)
        endpoints[i] = sim.z.values[-1]
        dz = np.diff(sim.z.values, axis=0)
        qv_traces[i] = np.einsum("kd,kd->", dz, dz)
        if dump and i == 0:
            write_csv(sim.z, outdir / "paths_0.csv")
    results = {
        "n_paths": n_paths,
        "endpoint_mean": endpoints.mean(axis=0),
        "endpoint_se": endpoints.std(axis=0, ddof=1) / np.sqrt(n_paths),
        "qv_trace_mean": float(qv_traces.mean()),
        "finite": bool(np.isfinite(endpoints).all()),
    }
    return results, bool(results["finite"])


def _run_rotate(cfg, base_seed, workers, outdir, dump):
    sec = cfg["sections"]
    grid = _build_grid(sec["grid"])
    dim, proc = _build_process(sec["process"])
    policy = _build_policy(sec["policy"], dim, base_seed)
    n_paths = sec["test"].get_int("n_paths", 10)
    tol = sec["test"].get_float("tol", 1e-12)
    job = SimJob(dim=dim, grid=grid, seed=base_seed, process=proc)
    worst_identity = 0.0
    worst_isometry = 0.0
    for i in range(n_paths):
        sim = simulate(job, i)
        schedule = realize_policy(policy, sim.w,
                                  policy_stream=seed_for_path(base_seed, i, "policy"))
        zt = apply_rotation(sim.z, schedule)
        dz = np.diff(sim.z.values, axis=0)
        dzt = np.diff(zt.values, axis=0)
        # per-increment isometry
        norms = np.linalg.norm(dz, axis=1)
        iso = np.abs(np.linalg.norm(dzt, axis=1) - norms) / np.where(norms > 0, norms, 1.0)
        worst_isometry = max(worst_isometry, float(iso.max()))
        # transform identity for realized covariation
        a_t = realized_covariation(zt).a_hat[-1]
        outer = np.einsum("ki,kj->kij", dz, dz)
        expect = np.einsum("kip,kpq,kjq->ij", schedule.mats, outer, schedule.mats)
        scale = max(1.0, float(np.abs(expect).max()))
        worst_identity = max(worst_identity, float(np.abs(a_t - expect).max()) / scale)
        if dump and i == 0:
            write_csv(zt, outdir / "paths_rotated_0.csv")
            write_schedule_csv(schedule, outdir / "schedule_0.csv")
    results = {
        "n_paths": n_paths,
        "max_covariation_identity_error": worst_identity,
        "max_isometry_error": worst_isometry,
        "tol": tol,
    }
    return results, bool(worst_identity <= tol and worst_isometry <= 1e-12)


def _run_reconstruct(cfg, base_seed, workers, outdir, dump):
    sec = cfg["sections"]
    grid = _build_grid(sec["grid"])
    dim, proc = _build_process(sec["process"])
    n_paths = sec["test"].get_int("n_paths", 1)
    window = sec["test"].get_int("window", default_window(dim))
    eps_pd = sec["test"].get_float("eps_pd", DEFAULT_EPS_PD)
    qv_tol = sec["test"].get_float("qv_tol", 0.08)
    job = SimJob(dim=dim, grid=grid, seed=base_seed, process=proc)
    devs = np.empty(n_paths)
    f_means = np.empty(n_paths)
    for i in range(n_paths):
        sim = simulate(job, i)
        dec = reconstruct_brownian(sim.z, window=window, eps_pd=eps_pd)
        devs[i] = dec.qv_deviation
        f_means[i] = dec.f_hat.mean()
        if dump and i == 0:
            write_decomposition_csv(dec, outdir / "decomposition_0.csv")
    results = {
        "n_paths": n_paths,
        "window": window,
        "qv_deviation_max": float(devs.max()),
        "qv_deviation_mean": float(devs.mean()),
        "qv_tol_scaled": qv_tol * grid.t_max,
        "f_hat_mean": float(f_means.mean()),
    }
    return results, bool(devs.max() <= qv_tol * grid.t_max)


def _run_invariance(cfg, base_seed, workers, outdir, dump):
    sec = cfg["sections"]
    grid = _build_grid(sec["grid"])
    dim, proc = _build_process(sec["process"])
    policy = _build_policy(sec["policy"], dim, base_seed)
    n_paths = sec["test"].get_int("n_paths")
    alpha = sec["test"].get_float("family_alpha", 0.01)
    fn_text = sec["test"].get_str("functionals")
    if not fn_text:
        raise _fail("[test] invariance needs 'functionals'")
    fns = [tok.strip() for tok in fn_text.split(",") if tok.strip()]
    job = SimJob(dim=dim, grid=grid, seed=base_seed, process=proc)
    rep = invariance_experiment(job, policy, fns, n_paths, workers=workers,
                                family_alpha=alpha)
    results = {
        "n_paths": n_paths,
        "family_alpha": alpha,
        "functionals": [
            {"functional": r.functional, "ks_statistic": r.ks_statistic,
             "p_value": r.p_value, "adjusted_p": float(ap)}
            for r, ap in zip(rep.results, rep.adjusted_p)
        ],
    }
    return results, rep.passed


def _run_exit_moments(cfg, base_seed, workers, outdir, dump):
    sec = cfg["sections"]
    grid = _build_grid(sec["grid"])
    n = sec["test"].get_int("n")
    h = sec["test"].get_float("h")
    n_paths = sec["test"].get_int("n_paths")
    refine = sec["test"].get_bool("refine", False)
    rep = exit_moment_experiment(n, h, n_paths, grid, base_seed, workers=workers)
    results = _to_jsonable(rep)
    ok = rep.passed
    if refine:
        fine = TimeGrid(t_max=grid.t_max, steps=2 * grid.steps)
        ref = exit_refinement_check(n, h, n_paths, fine, base_seed, workers=workers)
        results["refinement"] = _to_jsonable(ref)
        ok = ok and ref.improved
    return results, bool(ok)


def _run_decomposition(cfg, base_seed, workers, outdir, dump):
    sec = cfg["sections"]
    grid = _build_grid(sec["grid"])
    dim, proc = _build_process(sec["process"])
    n_paths = sec["test"].get_int("n_paths")
    window = sec["test"].get_int("window", default_window(dim))
    n_perm = sec["test"].get_int("n_permutations", 200)
    alpha = sec["test"].get_float("independence_alpha", 0.01)
    dep_alpha = sec["test"].get_float("dependence_alpha", 0.001)
    expect_dep = sec["test"].get_bool("expect_dependence", False)
    eps_pd = sec["test"].get_float("eps_pd", DEFAULT_EPS_PD)
    job = SimJob(dim=dim, grid=grid, seed=base_seed, process=proc)
    rep = decomposition_experiment(job, n_paths, window=window, n_permutations=n_perm,
                                   eps_pd=eps_pd, workers=workers)
    p = rep.independence.p_value
    ok = p < dep_alpha if expect_dep else p > alpha
    results = {
        "n_paths": n_paths,
        "window": window,
        "independence": _to_jsonable(rep.independence),
        "scalar_fraction": rep.scalar_fraction,
        "drift_mean_abs": rep.drift_mean_abs,
        "drift_threshold": rep.drift_threshold,
        "drift_ok": rep.drift_ok,
        "mean_qv_deviation": rep.mean_qv_deviation,
        "expect_dependence": expect_dep,
    }
    return results, bool(ok)


def _run_roundtrip(cfg, base_seed, workers, outdir, dump):
    sec = cfg["sections"]
    grid = _build_grid(sec["grid"])
    n_paths = sec["test"].get_int("n_paths", 100)
    h = sec["test"].get_float("h", 0.1)
    tol = sec["test"].get_float("tol", 1e-12)
    job = SimJob(dim=2, grid=grid, seed=base_seed, process=ProcessSpec(kind="brownian"))
    worst = 0.0
    indices_equal = True
    policy = RotationPolicy(kind="seeded-haar-per-exit", h=h, seed=base_seed)
    for i in range(n_paths):
        sim = simulate(job, i)
        schedule = realize_policy(policy, sim.w,
                                  policy_stream=seed_for_path(base_seed, i, "policy"))
        zt = apply_rotation(sim.z, schedule)
        back = apply_rotation(zt, inverse_schedule(schedule))
        scale = max(1.0, float(np.abs(sim.z.values).max()))
        dev = float(np.abs(back.values - (sim.z.values - sim.z.values[0])).max()) / scale
        worst = max(worst, dev)
        transformed_exits = exit_times(zt, h)
        if not np.array_equal(transformed_exits.indices, schedule.exits.indices):
            indices_equal = False
    results = {
        "n_paths": n_paths,
        "h": h,
        "max_roundtrip_deviation": worst,
        "exit_indices_preserved": indices_equal,
        "tol": tol,
    }
    return results, bool(worst <= tol and indices_equal)


_DRIVERS = {
    "simulate": _run_simulate,
    "rotate": _run_rotate,
    "reconstruct": _run_reconstruct,
    "invariance": _run_invariance,
    "exit-moments": _run_exit_moments,
    "decomposition": _run_decomposition,
    "roundtrip": _run_roundtrip,
}


def run(config_path, workers=None, out=None, seed=None) -> tuple[dict, int]:
    """Execute the experiment described by a config file.

    Returns (report, exit_status); writes report.json (and optional CSV
    dumps) into the output directory.
    """
    started = time.time()
    try:
        cfg = load_config(config_path)
        exp = cfg["sections"]["experiment"]
        base_seed = seed if seed is not None else exp.get_int("base_seed")
        n_workers = resolve_workers(workers if workers is not None
                                    else exp.get_int("workers", 0) or None)
        outdir = FsPath(out if out is not None else exp.get_str("out", "."))
        dump = exp.get_bool("dump_paths", False)
        outdir.mkdir(parents=True, exist_ok=True)
        driver = _DRIVERS[cfg["kind"]]
        results, ok = driver(cfg, base_seed, n_workers, outdir, dump)
    except (ConfigInvalidError, RotinvError, OSError, ValueError) as exc:
        report = {"error": f"{type(exc).__name__}: {exc}"}
        print(f"error: {exc}", file=sys.stderr)
        return report, 2

    report = {
        "schema_version": 1,
        "artifact_version": __version__,
        "kind": cfg["kind"],
        "config": {name: dict(section) for name, section in cfg["sections"].items()},
        "base_seed": base_seed,
        "seed_rule": SEED_RULE,
        "results": _to_jsonable(results),
        "verdict": "pass" if ok else "fail",
        "runtime": {"wall_clock_s": round(time.time() - started, 3), "workers": n_workers},
    }
    report_path = outdir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report, 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rotinv",
                                     description="rotation-invariance Monte Carlo experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment config")
    runp.add_argument("config", help="experiment config file")
    runp.add_argument("--workers", type=int, default=None, help="worker count override")
    runp.add_argument("--out", default=None, help="output directory override")
    runp.add_argument("--seed", type=int, default=None, help="base seed override")
    args = parser.parse_args(argv)
    report, status = run(args.config, workers=args.workers, out=args.out, seed=args.seed)
    if "verdict" in report:
        print(f"verdict: {report['verdict']} (report.json written)")
    return status


if __name__ == "__main__":
    sys.exit(main())
