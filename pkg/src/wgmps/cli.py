"""Command line: figure presets, JSON run configs, sweeps and validation.

    wgmps run fig3 --out results
    wgmps run myrun.json --oracle-check
    wgmps sweep --param tau --values 0.25 0.5 1.0
    wgmps validate --only 1 2 6

Exit status is 0 on success, 2 when a validation (oracle check or
acceptance criterion) fails and 1 on any other error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import multiprocessing as mp
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema

from . import __version__, _kernels
from .engine import run as run_mps
from .model import PhysicalParams, commensurate_dt
from .mps import TruncationPolicy
from .observables import SCHEMA_VERSION, csv_columns
from .states import resolve

log = logging.getLogger("wgmps")

EXIT_OK, EXIT_ERROR, EXIT_INVALID = 0, 1, 2

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")

DEFAULT_DT = 0.02
DEFAULT_HORIZON = 5.0


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

_PARAMS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_qubits": {"enum": [2, 4]},
        "gamma_L": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "array", "items": {"type": "number", "minimum": 0}}]},
        "gamma_R": {"oneOf": [{"type": "number", "minimum": 0}, {"type": "array", "items": {"type": "number", "minimum": 0}}]},
        "phi": {"type": "number"},
        "tau": {"type": "number", "minimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "n_max": {"type": "integer", "minimum": 1},
        "omega0": {"type": ["number", "null"]},
    },
}

_POLICY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_bond": {"type": "integer", "minimum": 1},
        "svd_cutoff": {"type": "number", "minimum": 0},
        "allow_truncation": {"type": "boolean"},
    },
}

_RUN_PROPERTIES = {
    "name": {"type": "string", "pattern": "^[A-Za-z0-9_.+-]+$"},
    "params": _PARAMS_SCHEMA,
    "initial": {
        "oneOf": [
            {"type": "string"},
            {
                "type": "array",
                "items": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}]},
            },
        ]
    },
    "horizon": {"type": "number", "exclusiveMinimum": 0},
    "stride": {"type": "integer", "minimum": 1},
    "policy": _POLICY_SCHEMA,
    "oracle_check": {"type": "boolean"},
    "e_max": {"type": "integer", "minimum": 1},
}

#: published schema of a JSON run file
CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "wgmps run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        **_RUN_PROPERTIES,
        "preset": {"type": "string"},
        "runs": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "additionalProperties": False, "properties": _RUN_PROPERTIES},
        },
        "out": {"type": "string"},
        "deterministic": {"type": "boolean"},
        "jobs": {"type": "integer", "minimum": 1},
    },
    "not": {"required": ["preset", "runs"]},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    name: str
    params: PhysicalParams
    initial: object = "ee"
    horizon: float = DEFAULT_HORIZON
    stride: int = 1
    policy: TruncationPolicy = field(default_factory=TruncationPolicy)
    oracle_check: bool = False
    e_max: int = 2
    #: re-derive dt from a target step so that tau stays a whole number of bins
    commensurate: bool = False

    def with_dt(self, dt: float) -> "RunConfig":
        if self.commensurate:
            dt = commensurate_dt(self.params.tau, dt)
            horizon = round(DEFAULT_HORIZON / dt) * dt
        else:
            horizon = self.horizon
        return replace(self, params=replace(self.params, dt=dt), horizon=horizon)

    def to_dict(self) -> dict:
        init = self.initial if isinstance(self.initial, str) else [[z.real, z.imag] for z in map(complex, self.initial)]
        return {
            "name": self.name,
            "params": self.params.to_dict(),
            "initial": init,
            "horizon": self.horizon,
            "stride": self.stride,
            "policy": {
                "max_bond": self.policy.max_bond,
                "svd_cutoff": self.policy.svd_cutoff,
                "allow_truncation": self.policy.allow_truncation,
            },
            "oracle_check": self.oracle_check,
            "e_max": self.e_max,
        }


def _tag(x: float) -> str:
    return f"{x:g}"


def _preset_run(name: str, n_qubits: int = 2, tau: float = 0.0, phi: float = 0.0, initial: str = "ee") -> RunConfig:
    dt = commensurate_dt(tau, DEFAULT_DT)
    params = PhysicalParams(n_qubits=n_qubits, tau=tau, phi=phi, dt=dt)
    return RunConfig(name, params, initial, round(DEFAULT_HORIZON / dt) * dt, commensurate=True)


def preset_runs(name: str) -> list[RunConfig]:
    """Runs behind each figure preset."""
    if name == "fig2a":
        return [_preset_run("markov")]
    if name == "fig2b":
        return [_preset_run("tau0.5", tau=0.5)]
    if name == "fig2c":
        return [_preset_run("tau2", tau=2.0)]
    if name == "fig3":
        return [_preset_run(f"tau{_tag(t)}", tau=t) for t in (0.375, 0.5, 0.895, 2.0)] + [_preset_run("markov")]
    if name == "fig4":
        names = {0.0: "phi0", math.pi / 2: "phi_pi_2", math.pi: "phi_pi"}
        return [_preset_run(n, tau=0.5, phi=p) for p, n in names.items()] + [_preset_run("markov")]
    if name == "fig5":
        return [_preset_run("markov")] + [_preset_run(f"tau{_tag(t)}", tau=t) for t in (0.1, 0.5, 2.0)]
    if name == "fig6":
        runs = []
        for tau, tag in ((0.5, "tau0.5"), (0.0, "markov")):
            for st in ("A", "B", "C"):
                runs.append(_preset_run(f"{st}_{tag}", 4, tau, initial=st))
            runs.append(_preset_run(f"ee_{tag}", tau=tau))
        return runs
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("fig2a", "fig2b", "fig2c", "fig3", "fig4", "fig5", "fig6")


def _run_from_dict(d: dict, default_name: str) -> RunConfig:
    params = PhysicalParams(**d.get("params", {}))
    pol = TruncationPolicy(**d.get("policy", {}))
    initial = d.get("initial", "ee")
    if resolve(initial).n_qubits != params.n_qubits:
        raise ConfigError(f"initial state {initial!r} does not match n_qubits={params.n_qubits}")
    return RunConfig(
        d.get("name", default_name),
        params,
        initial,
        float(d.get("horizon", DEFAULT_HORIZON)),
        int(d.get("stride", 1)),
        pol,
        bool(d.get("oracle_check", False)),
        int(d.get("e_max", 2)),
    )


def load_config(source) -> tuple[str, list[RunConfig], dict]:
    """Parse a preset name, a JSON path or an already loaded dict.

    Returns ``(label, runs, file_options)`` where ``file_options`` holds the
    top-level ``out``, ``deterministic`` and ``jobs`` entries.
    """
    if isinstance(source, str) and source in PRESETS:
        return source, preset_runs(source), {}
    if isinstance(source, dict):
        data, label = source, source.get("name", "config")
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"{source!r} is neither a preset nor an existing file")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        label = path.stem
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    opts = {k: data[k] for k in ("out", "deterministic", "jobs") if k in data}
    shared = {k: v for k, v in data.items() if k in _RUN_PROPERTIES}
    if "preset" in data:
        label = data["preset"]
        runs = preset_runs(label)
        for key in ("oracle_check",):
            if key in shared:
                runs = [replace(r, **{key: shared[key]}) for r in runs]
        return label, runs, opts
    if "runs" in data:
        runs = []
        for i, item in enumerate(data["runs"]):
            merged = {**shared, **item}
            merged["params"] = {**shared.get("params", {}), **item.get("params", {})}
            runs.append(_run_from_dict(merged, f"run{i}"))
        return label, runs, opts
    return label, [_run_from_dict(shared, label)], opts


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------


def execute(cfg: RunConfig, out_dir: str) -> dict:
    """Run one configuration and write ``<name>.csv`` plus ``<name>.json``."""
    out = Path(out_dir)
    series = run_mps(cfg.params, cfg.initial, cfg.horizon, cfg.stride, cfg.policy)
    csv_path = out / f"{cfg.name}.csv"
    series.to_csv(csv_path)

    oracle = None
    if cfg.oracle_check:
        oracle = oracle_report(cfg, series)

    cons = series["cons_residual"]
    meta = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "kernel_backend": _kernels.BACKEND,
        "config": cfg.to_dict(),
        "initial_label": series.meta["initial"],
        "gate_checksum": series.meta["gate_checksum"],
        "columns": csv_columns(cfg.params.n_qubits),
        "field_normalization": series.meta["field_normalization"],
        "truncation": {
            "total_weight": series.meta["truncation_weight"],
            "max_bond": series.meta["max_bond"],
            "norm_drift": series.meta["norm_drift"],
            "max_cons_residual": float(cons.max()),
            "max_leakage_P3_P4": float(sum(series[f"P{m}"] for m in range(3, cfg.params.n_qubits + 1)).max())
            if cfg.params.n_qubits > 2
            else 0.0,
        },
        "wall_time": series.meta["wall_time"],
        "oracle": oracle,
    }
    (out / f"{cfg.name}.json").write_text(json.dumps(meta, indent=2) + "\n")
    return {"name": cfg.name, "csv": str(csv_path), "oracle": oracle, "wall_time": meta["wall_time"]}


def oracle_report(cfg: RunConfig, series) -> dict:
    from .oracle import BasisOverflowError, compare, evolve_dense

    tol = 1e-6 if cfg.params.n_qubits == 2 else 1e-5
    try:
        dense = evolve_dense(cfg.params, cfg.initial, cfg.horizon, cfg.stride, e_max=cfg.e_max)
    except BasisOverflowError as exc:
        return {"status": "skipped", "reason": str(exc)}
    rep = compare(series, dense, tol=tol)
    return {
        "status": "pass" if rep.passed else "fail",
        "tol": tol,
        "max_deviation": rep.max_dev,
        "worst_field": rep.worst().name if rep.fields else None,
        "fields": {f.name: {"max_dev": f.max_dev, "first_exceed": f.first_exceed} for f in rep.fields},
    }


def _pin_threads() -> None:
    for var in THREAD_VARS:
        os.environ[var] = "1"


def run_all(runs: list[RunConfig], out_dir, jobs: int | None = None, deterministic: bool = True) -> list[dict]:
    """Execute runs, in parallel worker processes when ``jobs > 1``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise ConfigError("run names must be unique within one invocation")
    if deterministic:
        _pin_threads()
    jobs = jobs or min(len(runs), os.cpu_count() or 1)
    if jobs <= 1 or len(runs) == 1:
        return [execute(r, str(out)) for r in runs]
    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
        futures = [pool.submit(execute, r, str(out)) for r in runs]
        return [f.result() for f in futures]


def sweep_runs(base: RunConfig, param: str, values: list[float]) -> list[RunConfig]:
    runs = []
    for v in values:
        kw = {param: v}
        p = base.params
        if param == "tau" and v > 0:
            kw["dt"] = commensurate_dt(v, p.dt)
        if param == "n_max":
            kw[param] = int(v)
        params = replace(p, **kw)
        horizon = base.horizon
        if abs(horizon / params.dt - round(horizon / params.dt)) > 1e-9:
            horizon = round(horizon / params.dt) * params.dt
        runs.append(replace(base, name=f"{param}{_tag(v)}", params=params, horizon=horizon))
    return runs


SWEEPABLE = ("tau", "phi", "dt", "n_max", "gamma_L", "gamma_R")


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wgmps", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a preset or a JSON config")
    r.add_argument("target", help=f"preset ({', '.join(PRESETS)}) or path to a JSON config")
    r.add_argument("--out", help="output directory (default results/<target>)")
    r.add_argument("--dt", type=float, help="override the time step")
    r.add_argument("--oracle-check", action="store_true", help="compare every run against the dense oracle")
    r.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    r.add_argument("--jobs", type=int, help="worker processes (default: one per CPU)")

    s = sub.add_parser("sweep", help="vary one parameter of a base run")
    s.add_argument("--param", required=True, choices=SWEEPABLE)
    s.add_argument("--values", required=True, type=float, nargs="+")
    s.add_argument("--base", default="fig2b", help="preset with a single run, or a JSON config")
    s.add_argument("--out")
    s.add_argument("--oracle-check", action="store_true")
    s.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--jobs", type=int)

    v = sub.add_parser("validate", help="run the acceptance suite")
    v.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")

    sub.add_parser("schema", help="print the JSON config schema")
    return ap


def _report(results: list[dict]) -> int:
    status = EXIT_OK
    for res in results:
        line = f"{res['name']}: {res['csv']} ({res['wall_time']:.1f} s)"
        orc = res["oracle"]
        if orc is not None:
            line += f" oracle {orc['status']}"
            if "max_deviation" in orc:
                line += f" (max dev {orc['max_deviation']:.2e} in {orc['worst_field']})"
            if orc["status"] == "fail":
                status = EXIT_INVALID
        print(line)
    return status


def _cmd_run(args) -> int:
    label, runs, opts = load_config(args.target)
    if args.dt is not None:
        runs = [r.with_dt(args.dt) for r in runs]
    if args.oracle_check:
        runs = [replace(r, oracle_check=True) for r in runs]
    det = opts.get("deterministic", True) if args.deterministic is None else args.deterministic
    out = args.out or opts.get("out") or os.path.join("results", label)
    return _report(run_all(runs, out, args.jobs or opts.get("jobs"), det))


def _cmd_sweep(args) -> int:
    _, runs, opts = load_config(args.base)
    if len(runs) != 1:
        raise ConfigError("sweep base must describe exactly one run")
    runs = sweep_runs(runs[0], args.param, args.values)
    if args.oracle_check:
        runs = [replace(r, oracle_check=True) for r in runs]
    det = opts.get("deterministic", True) if args.deterministic is None else args.deterministic
    out = args.out or os.path.join("results", f"sweep_{args.param}")
    return _report(run_all(runs, out, args.jobs, det))


def _cmd_validate(args) -> int:
    from .acceptance import run_suite

    results = run_suite(only=args.only, stream=sys.stdout)
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        if args.command == "run":
            code = _cmd_run(args)
        elif args.command == "sweep":
            code = _cmd_sweep(args)
        elif args.command == "validate":
            code = _cmd_validate(args)
        else:
            print(json.dumps(CONFIG_SCHEMA, indent=2))
            code = EXIT_OK
    except Exception as exc:  # any failure maps to exit status 1
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    log.info("done in %.1f s", time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
