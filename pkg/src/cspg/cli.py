"""Command-line front end.

Configuration is a YAML mapping; unknown keys are rejected so that a typo
never silently falls back to a default. Exit codes: 0 success, 2 bad
configuration, 3 numerical failure, 4 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import verify
from .csrecovery import RecoveryError, RecoveryParams
from .multiindex import (
    MAX_SUBSET_DIM,
    UnboundedIndexSetError,
    WeightParams,
    active_dimension,
    corollary_bound,
    enumerate_index_set,
    index_set_size_bound,
)
from .pde import (
    Calibration,
    DiffusionModel,
    EllipticityError,
    FemDiscretization,
    SolveError,
    default_model,
    model_from_config,
)
from .pipeline import estimate_errors, plan_experiment, rate_fit, run_cspg, sample_count, sweep_oversample

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

RATE_COLUMNS = ["s", "N", "m", "l2", "l2_se", "linf", "wall_ms"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: dict | str = "default"
    weights: dict = field(default_factory=lambda: {"kind": "polynomial", "c": 1.2, "alpha": 0.25})
    s: list = field(default_factory=lambda: [8, 16, 32, 64])
    oversample_C: float = 1.0
    epsilon: float = 1e-4
    seed: int = 0
    test_seed: int = 1
    n_test: int = 200
    recovery: str = "bpdn"
    method: str = "auto"
    target_p: float | None = None
    workers: int = 1
    out: str = "cspg-out"
    calibration: dict = field(default_factory=dict)
    discretization: dict | None = None
    h_ref: float | None = None
    sweep: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


SWEEP_KEYS = {"s", "index_s", "N", "C", "trials", "seed"}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def parse_config(data: dict | None) -> RunConfig:
    """Validate a raw mapping and turn it into a :class:`RunConfig`."""
    data = dict(data or {})
    known = set(RunConfig.__dataclass_fields__)
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"unknown config key(s): {', '.join(extra)}")
    cfg = RunConfig(**data)
    _require(isinstance(cfg.seed, int) and cfg.seed >= 0, "seed must be a nonnegative integer")
    _require(isinstance(cfg.test_seed, int) and cfg.test_seed >= 0, "test_seed must be a nonnegative integer")
    if isinstance(cfg.s, (int, float)):
        cfg.s = [cfg.s]
    _require(len(cfg.s) > 0 and all(float(v) >= 2 for v in cfg.s), "s values must be >= 2")
    cfg.s = [int(v) if float(v).is_integer() else float(v) for v in cfg.s]
    _require(float(cfg.oversample_C) > 0, "oversample_C must be positive")
    _require(float(cfg.epsilon) > 0, "epsilon must be positive")
    cfg.oversample_C, cfg.epsilon = float(cfg.oversample_C), float(cfg.epsilon)
    _require(int(cfg.n_test) >= 2, "n_test must be >= 2")
    _require(cfg.recovery in ("bpdn", "iht"), f"recovery must be bpdn or iht, got {cfg.recovery!r}")
    _require(int(cfg.workers) >= 1, "workers must be >= 1")
    try:
        RecoveryParams(method=cfg.method)
        build_weights(cfg)
        build_model(cfg)
        build_calibration(cfg)
        build_disc(cfg)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    extra = sorted(set(cfg.sweep) - SWEEP_KEYS)
    if extra:
        raise ConfigError(f"unknown sweep key(s): {', '.join(extra)}")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return parse_config(data)


def build_weights(cfg: RunConfig) -> WeightParams:
    if not isinstance(cfg.weights, dict) or "kind" not in cfg.weights:
        raise ConfigError("weights must be a mapping with a 'kind'")
    return WeightParams.from_dict(cfg.weights)


def build_model(cfg: RunConfig) -> DiffusionModel:
    if cfg.model == "default":
        return default_model()
    if isinstance(cfg.model, dict) and "default" in cfg.model:
        opts = dict(cfg.model["default"] or {})
        bad = sorted(set(opts) - {"count", "tau"})
        if bad or len(cfg.model) > 1:
            raise ConfigError(f"unknown model key(s): {', '.join(bad or sorted(set(cfg.model) - {'default'}))}")
        return default_model(**opts)
    if not isinstance(cfg.model, dict):
        raise ConfigError("model must be 'default' or a mapping")
    return model_from_config(cfg.model)


def build_calibration(cfg: RunConfig) -> Calibration:
    bad = sorted(set(cfg.calibration) - {"c_h", "c_B", "p0"})
    if bad:
        raise ConfigError(f"unknown calibration key(s): {', '.join(bad)}")
    return Calibration(**{k: float(v) for k, v in cfg.calibration.items()})


def build_disc(cfg: RunConfig) -> FemDiscretization | None:
    if cfg.discretization is None:
        return None
    bad = sorted(set(cfg.discretization) - {"n_cells", "B"})
    if bad:
        raise ConfigError(f"unknown discretization key(s): {', '.join(bad)}")
    return FemDiscretization(int(cfg.discretization["n_cells"]), int(cfg.discretization["B"]))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _tag(s) -> str:
    return f"{s:g}"


# --- commands ---------------------------------------------------------------


def size_row(w: WeightParams, s: float):
    """Size-vs-bound table row for one ``s``, plus the enumerated set."""
    iset = enumerate_index_set(s, w)
    v = [w.v(j) for j in range(1, active_dimension(s, w) + 1)]
    if not v:
        subset = 1.0
    elif len(v) <= MAX_SUBSET_DIM:
        subset = index_set_size_bound(s / 2, v)
    else:
        subset = None
    try:
        cor = corollary_bound(w, s) if w.kind != "explicit" else None
    except ValueError:
        cor = None
    return {"s": s, "N": len(iset), "active_dim": iset.max_dim, "subset_bound": subset, "closed_form": cor}, iset


def cmd_enumerate(cfg: RunConfig, out: Path) -> int:
    w = build_weights(cfg)
    rows = []
    for s in cfg.s:
        row, iset = size_row(w, s)
        path = out / f"index_set_s{_tag(s)}.json"
        path.write_text(iset.to_json())
        row["sha256"] = iset.digest()
        rows.append(row)
        print(f"s={_tag(s)} N={row['N']} subset_bound={row['subset_bound']} closed_form={row['closed_form']}")
    _write_csv(out / "sizes.csv", ["s", "N", "active_dim", "subset_bound", "closed_form"], rows)
    _write_json(out / "sizes.json", {"weights": w.to_dict(), "rows": rows})
    return EXIT_OK


def cmd_bounds(cfg: RunConfig, out: Path) -> int:
    w = build_weights(cfg)
    rows = []
    for s in cfg.s:
        row, iset = size_row(w, s)
        row["m"] = sample_count(cfg.oversample_C, s, row["N"])
        ok_subset = row["subset_bound"] is None or row["N"] <= row["subset_bound"] * (1 + 1e-12)
        ok_cor = row["closed_form"] is None or row["N"] <= row["closed_form"] * (1 + 1e-12)
        row["consistent"] = ok_subset and ok_cor
        rows.append(row)
        print(f"s={_tag(s)} N={row['N']} m={row['m']} subset_bound={row['subset_bound']} "
              f"closed_form={row['closed_form']} {'ok' if row['consistent'] else 'VIOLATED'}")
    _write_csv(out / "bounds.csv", ["s", "N", "m", "subset_bound", "closed_form", "consistent"], rows)
    return EXIT_OK if all(r["consistent"] for r in rows) else EXIT_VERIFY


def _write_csv(path: Path, cols: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})


def cmd_run(cfg: RunConfig, out: Path) -> int:
    w = build_weights(cfg)
    model = build_model(cfg)
    cal = build_calibration(cfg)
    disc = build_disc(cfg)
    params = RecoveryParams(method=cfg.method)
    rows, runs = [], []
    for s in cfg.s:
        t0 = time.perf_counter()
        plan = plan_experiment(s, w, cfg.oversample_C, cfg.epsilon, cfg.seed, model, cal, disc=disc)
        sur = run_cspg(model, plan, cfg.recovery, cfg.workers, params=params)
        rep = estimate_errors(sur, model, cfg.n_test, cfg.test_seed, cfg.h_ref, cfg.workers)
        wall = (time.perf_counter() - t0) * 1e3
        path = out / f"coeffs_s{_tag(s)}.bin"
        sur.save(path)
        rows.append({"s": s, "N": plan.N, "m": plan.m, "l2": rep.l2_estimate, "l2_se": rep.l2_stderr,
                     "linf": rep.linf_estimate, "wall_ms": round(wall, 3)})
        runs.append({"plan": plan.to_dict(), "stats": sur.provenance["stats"], "errors": rep.to_dict(),
                     "coeffs_file": path.name, "coeffs_sha256": _sha256(path), "coeffs_digest": sur.digest()})
        print(f"s={_tag(s)} N={plan.N} m={plan.m} l2={rep.l2_estimate:.3e} +- {rep.l2_stderr:.1e} "
              f"linf={rep.linf_estimate:.3e}")
    _write_csv(out / "rates.csv", RATE_COLUMNS, rows)
    report = {"config": cfg.to_dict(), "runs": runs}
    if len(rows) >= 3 and all(r["l2"] > 0 for r in rows):
        slope, r2 = rate_fit([(r["m"], r["l2"]) for r in rows])
        report["rate"] = {"l2_vs_m_exponent": slope, "r2": r2}
        if cfg.target_p is not None:
            report["rate"]["target_exponent"] = -(1 / cfg.target_p - 0.5)
        print(f"fitted L2-vs-m exponent {slope:.3f} (r2 {r2:.3f})")
    _write_json(out / "results.json", report)
    (out / "config.resolved.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_verify(suite: str) -> int:
    checks = verify.SUITES[suite]()
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print(f"suite {suite}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    w = build_weights(cfg)
    sw = cfg.sweep
    s = float(sw.get("s", cfg.s[0]))
    iset = enumerate_index_set(float(sw.get("index_s", max(4 * s, 2))), w)
    nus = list(iset)[: int(sw["N"])] if "N" in sw else list(iset)
    om = iset.omegas()[: len(nus)]
    Cs = [float(c) for c in sw.get("C", [0.01, 0.02, 0.05, 0.1])]
    trials = int(sw.get("trials", 20))
    rows = sweep_oversample(nus, om, s, Cs, trials, int(sw.get("seed", cfg.seed)))
    for r in rows:
        r["rate"] = r["successes"] / r["trials"]
        print(f"C={r['C']:g} m={r['m']} successes={r['successes']}/{r['trials']}")
    good = [r["C"] for r in rows if r["rate"] >= 0.95]
    _write_csv(out / "sweep.csv", ["C", "m", "successes", "trials", "rate"], rows)
    _write_json(out / "sweep.json", {"s": s, "N": len(nus), "rows": rows, "smallest_C_95": min(good, default=None)})
    print(f"smallest C with >= 95% success: {min(good) if good else 'none'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cspg", description="Sparse Chebyshev surrogates of parametric PDE functionals.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="override the sampling seed")
    common.add_argument("--workers", type=int, help="worker threads for sample solves")
    common.add_argument("--out", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("enumerate", parents=[common], help="write index sets and size-vs-bound tables")
    sub.add_parser("run", parents=[common], help="fit surrogates and estimate errors for each s")
    v = sub.add_parser("verify", parents=[common], help="run a seeded property suite")
    v.add_argument("suite", choices=sorted(verify.SUITES))
    sub.add_parser("bounds", parents=[common], help="compare index-set sizes with the cardinality bounds")
    sub.add_parser("sweep-oversample", parents=[common], help="success rate of exact recovery against C")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.suite)
        cfg = load_config(args.config) if args.config else parse_config({})
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.out is not None:
            cfg.out = args.out
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        handlers = {"enumerate": cmd_enumerate, "run": cmd_run, "bounds": cmd_bounds, "sweep-oversample": cmd_sweep}
        return handlers[args.command](cfg, out)
    except (ConfigError, UnboundedIndexSetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RecoveryError, SolveError, EllipticityError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
