"""Command-line interface: ``bingof <command> ...``.

Commands
--------
test-one     uniformity test of one data file
test-two     two-sample test of two data files
multiscale   dyadic multiscale two-sample test
simulate     run an experiment described by a JSON config
curse-demo   empty inner cube: closed-form bound against simulation

Exit codes are 0 when a command ran (whatever the decision), 2 for usage
errors and 3 for data errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shlex
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from ._rng import fresh_seed
from .binning import DomainError
from .calibration import (
    CalibrationConfig,
    Gamma2Statistic,
    NormalizedStatistic,
    one_sample_monte_carlo_test,
    permutation_multiscale,
    permutation_test,
)
from .experiments import (
    ExperimentConfig,
    curse_demo,
    intrinsic_dim_experiment,
    rate_experiment,
    rate_table,
    risk_experiment,
)
from .statistics import (
    ContractError,
    SmoothnessParams,
    kappa_for,
    multiscale_test,
    one_sample_test,
    two_sample_test,
)

SCHEMA_VERSION = 1
THREADS_ENV = "BINGOF_THREADS"

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


class DataError(Exception):
    """Unreadable or out-of-domain input data."""


class UsageError(Exception):
    """Inconsistent flags or an invalid config file."""


# -- input -------------------------------------------------------------------------

def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_dataset(path, delimiter: str = ",", unit_cube: bool = False) -> np.ndarray:
    """Parse a delimiter-separated numeric file, skipping an optional header row.

    With ``unit_cube`` every value must lie in ``[0, 1]``; the error cites the
    offending line.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot read file ({exc})") from None
    rows, width = [], None
    for lineno, row in enumerate(csv.reader(text.splitlines(), delimiter=delimiter), start=1):
        if not row or all(not tok.strip() for tok in row):
            continue
        toks = [tok.strip() for tok in row]
        if width is None and not rows and not all(_is_number(t) for t in toks):
            width = len(toks)  # header
            continue
        if width is not None and len(toks) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, found {len(toks)}")
        width = len(toks)
        try:
            values = [float(t) for t in toks]
        except ValueError:
            bad = next(t for t in toks if not _is_number(t))
            raise DataError(f"{path}:{lineno}: cannot parse {bad!r} as a number") from None
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"{path}:{lineno}: non-finite value")
        if unit_cube:
            for col, v in enumerate(values, start=1):
                if not 0.0 <= v <= 1.0:
                    raise DataError(
                        f"{path}:{lineno}: value {v!r} in column {col} lies outside [0, 1]; "
                        "pass --rescale to map the data onto the unit cube"
                    )
        rows.append(values)
    if not rows:
        raise DataError(f"{path}: no observations")
    return np.array(rows, dtype=np.float64)


def rescale(samples: list[np.ndarray]) -> tuple[list[np.ndarray], dict]:
    """Affine map of every column onto ``[0, 1]`` by the pooled min and max."""
    pooled = np.vstack(samples)
    lo, hi = pooled.min(axis=0), pooled.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    out = [np.clip((s - lo) / span, 0.0, 1.0) for s in samples]
    return out, {"min": lo.tolist(), "max": hi.tolist()}


def load_samples(args, paths) -> tuple[list[np.ndarray], dict | None]:
    samples = [read_dataset(p, args.delimiter, unit_cube=not args.rescale) for p in paths]
    dims = {s.shape[1] for s in samples}
    if len(dims) > 1:
        raise DataError(f"files have different column counts: {[s.shape[1] for s in samples]}")
    if args.rescale:
        return rescale(samples)
    return samples, None


# -- output ------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _echo(argv: list[str], seed: int) -> str:
    """The invoking command with the seed made explicit."""
    argv = list(argv)
    if "--seed" not in argv and not any(a.startswith("--seed=") for a in argv):
        argv += ["--seed", str(seed)]
    return shlex.join(["bingof", *argv])


def result_document(args, argv, test: str, body: dict, started: float, transform=None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": _echo(argv, args.seed),
        "seed": args.seed,
        "test": test,
        **body,
        "rescale": transform,
        "version": __version__,
        "runtime_s": round(time.perf_counter() - started, 6),
    }
    return _jsonable(doc)


def _emit(doc: dict, out) -> None:
    text = json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- commands ----------------------------------------------------------------------

def _calibration(args) -> CalibrationConfig:
    return CalibrationConfig(B=args.B, seed=args.seed, alpha=args.alpha)


def cmd_test_one(args, argv) -> int:
    t0 = time.perf_counter()
    (x,), transform = load_samples(args, [args.data])
    params = SmoothnessParams(args.s)
    if args.calibrate == "analytic":
        res = one_sample_test(x, params, args.a)
    elif args.calibrate == "mc":
        res = one_sample_monte_carlo_test(x, params, _calibration(args))
    else:
        raise UsageError("test-one supports --calibrate analytic or mc")
    _emit(result_document(args, argv, "one-sample", _result_body(res), t0, transform), args.output)
    return EXIT_OK


def _result_body(res) -> dict:
    d = res.to_dict()
    return {
        "kappa": d.pop("kappa"),
        "statistic": d.pop("statistic"),
        "threshold": d.pop("threshold"),
        "p_value": d.pop("p_value"),
        "decision": "reject" if d.pop("reject") else "accept",
        "calibration": d.pop("calibration"),
        "warnings": d.pop("warnings"),
        "details": d,
    }


def cmd_test_two(args, argv) -> int:
    t0 = time.perf_counter()
    (x, y), transform = load_samples(args, [args.x, args.y])
    m, d = x.shape
    n = y.shape[0]
    params = SmoothnessParams(args.s)
    if args.calibrate == "analytic":
        if args.stat != "gamma":
            raise UsageError("the normalized statistic has no analytic threshold; use --calibrate permutation")
        if m != n:
            raise DataError(
                f"the analytic threshold assumes equal sample sizes (m = n); got m={m}, n={n}. "
                "Use --calibrate permutation or subsample the larger file"
            )
        res = two_sample_test(x, y, params, args.a)
    elif args.calibrate == "permutation":
        kappa = kappa_for(min(m, n), args.s, d)
        stat = Gamma2Statistic(kappa) if args.stat == "gamma" else NormalizedStatistic(kappa)
        res = permutation_test(x, y, stat, _calibration(args), kappa)
    else:
        raise UsageError("test-two supports --calibrate analytic or permutation")
    body = {"statistic_name": args.stat, **_result_body(res)}
    _emit(result_document(args, argv, "two-sample", body, t0, transform), args.output)
    return EXIT_OK


def cmd_multiscale(args, argv) -> int:
    t0 = time.perf_counter()
    (x, y), transform = load_samples(args, [args.x, args.y])
    d = x.shape[1]
    if args.calibrate == "analytic":
        if len(x) != len(y):
            raise DataError(
                f"analytic multiscale thresholds assume m = n; got m={len(x)}, n={len(y)}. "
                "Use --calibrate permutation"
            )
        res = multiscale_test(x, y, d, args.a)
        body = {
            "kappa": [r.kappa for r in res.per_scale],
            "statistic": [r.statistic for r in res.per_scale],
            "threshold": [r.threshold for r in res.per_scale],
            "p_value": None,
            "decision": "reject" if res.reject else "accept",
            "calibration": "analytic",
            "warnings": list(res.warnings),
            "details": {"b_max": res.b_max, "a": args.a},
        }
    elif args.calibrate == "permutation":
        body = _result_body(permutation_multiscale(x, y, d, _calibration(args)))
    else:
        raise UsageError("multiscale supports --calibrate analytic or permutation")
    _emit(result_document(args, argv, "multiscale", body, t0, transform), args.output)
    return EXIT_OK


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["experiment", "dims", "sizes"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": ["risk", "rate", "intrinsic"]},
        "dims": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "sizes": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 2}},
        "s": {"type": "number", "exclusiveMinimum": 0},
        "epsilons": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "replicates": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "test": {"enum": ["one-sample", "two-sample", "normalized"]},
        "calibration": {"enum": ["analytic", "monte_carlo", "permutation"]},
        "a": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "B": {"type": "integer", "minimum": 1},
        "alt_scale": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "profile": {"enum": ["plateau", "mollifier"]},
        "width": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "intrinsic_dim": {"type": "integer", "minimum": 1},
        "embedding": {"enum": ["axis", "identity", "curve"]},
        "n_jobs": {"type": "integer"},
        "bisection_steps": {"type": "integer", "minimum": 1},
        "target_risk": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
}


def load_config(path) -> dict:
    """Read and validate a simulate config; errors name the offending field."""
    if str(path).startswith("builtin:"):
        name = str(path).split(":", 1)[1]
        try:
            text = resources.files("bingof").joinpath("configs", f"{name}.json").read_text(encoding="utf-8")
        except FileNotFoundError:
            raise UsageError(f"no built-in config named {name!r}") from None
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"{path}: cannot read config ({exc})") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        lines = [f"  {'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors]
        raise UsageError(f"{path}: config does not match the schema\n" + "\n".join(lines))
    if cfg["experiment"] == "intrinsic" and "intrinsic_dim" not in cfg:
        raise UsageError(f"{path}: intrinsic_dim: required for the intrinsic experiment")
    return cfg


def cmd_simulate(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    kind = cfg.pop("experiment")
    if args.seed_given:
        cfg["seed"] = args.seed
    else:
        cfg.setdefault("seed", args.seed)
    cfg["n_jobs"] = args.threads
    try:
        config = ExperimentConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"experiment": kind, "seed": config.seed}
    if kind == "risk":
        table = risk_experiment(config)
    elif kind == "intrinsic":
        tables = [intrinsic_dim_experiment(d, config.intrinsic_dim, None, config) for d in config.dims]
        table = tables[0]
        for t in tables[1:]:
            table.rows += t.rows
    else:
        points, fits = rate_experiment(config)
        table = rate_table(points)
        table.metadata = {"note": "critical signal at the target risk; type2 column is risk minus type1"}
        summary["exponents"] = [
            {"d": d, "slope": f.slope, "stderr": f.stderr, "expected": f.expected} for d, f in fits.items()
        ]
        (out / "exponents.json").write_text(json.dumps(_jsonable(summary["exponents"]), indent=2) + "\n")
    (out / "risk_table.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "risk_table.json").write_text(table.to_json() + "\n", encoding="utf-8")
    summary["files"] = sorted(p.name for p in out.iterdir())
    body = {"summary": summary}
    _emit(result_document(args, argv, f"simulate:{kind}", body, t0), args.output)
    return EXIT_OK


def _int_range(text: str) -> list[int]:
    """``"1-15"`` or ``"1,2,5"``."""
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 1-15 or a list like 1,2,5, got {text!r}") from None


def cmd_curse_demo(args, argv) -> int:
    t0 = time.perf_counter()
    rows = curse_demo(args.m, args.dims, args.epsilon, args.runs, args.seed)
    w = sys.stderr
    w.write(f"{'d':>3} {'bound':>10} {'empirical':>10} {'se':>8}\n")
    for r in rows:
        w.write(f"{r.d:>3} {r.bound:>10.4f} {r.empirical:>10.4f} {r.se:>8.4f}\n")
    body = {"m": args.m, "epsilon": args.epsilon, "runs": args.runs,
            "rows": [{"d": r.d, "bound": r.bound, "empirical": r.empirical, "se": r.se} for r in rows]}
    _emit(result_document(args, argv, "curse-demo", body, t0), args.output)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return int(raw)
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bingof", description="Bin-counting chi-squared tests on [0,1]^d.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed; drawn and printed when omitted")
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help=f"worker count (default ${THREADS_ENV} or 1); never changes results")
    common.add_argument("--output", "-o", default=None, help="write the JSON document here instead of stdout")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--delimiter", default=",")
    data.add_argument("--rescale", action="store_true",
                      help="map each column onto [0,1] by the pooled min and max")
    data.add_argument("--alpha", type=float, default=0.05)
    data.add_argument("--B", type=int, default=999, help="Monte Carlo or permutation replicates")
    data.add_argument("--a", type=float, default=3.0, help="threshold tuning constant (analytic path)")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("test-one", parents=[common, data], help="uniformity test of one file")
    q.add_argument("data")
    q.add_argument("--s", type=float, default=1.0, help="assumed smoothness")
    q.add_argument("--calibrate", choices=["analytic", "mc"], default="analytic")
    q.set_defaults(func=cmd_test_one)

    q = sub.add_parser("test-two", parents=[common, data], help="two-sample test")
    q.add_argument("x")
    q.add_argument("y")
    q.add_argument("--s", type=float, default=1.0)
    q.add_argument("--stat", choices=["gamma", "normalized"], default="gamma")
    q.add_argument("--calibrate", choices=["analytic", "permutation"], default="permutation")
    q.add_argument("--analytic", dest="calibrate", action="store_const", const="analytic",
                   help="shorthand for --calibrate analytic")
    q.set_defaults(func=cmd_test_two)

    q = sub.add_parser("multiscale", parents=[common, data], help="dyadic multiscale two-sample test")
    q.add_argument("x")
    q.add_argument("y")
    q.add_argument("--calibrate", choices=["analytic", "permutation"], default="permutation")
    q.set_defaults(func=cmd_multiscale)

    q = sub.add_parser("simulate", parents=[common], help="run an experiment from a JSON config")
    q.add_argument("config", help="path to a JSON config, or builtin:rate_fit")
    q.add_argument("--out-dir", default="results")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("curse-demo", parents=[common], help="empty inner cube probability per dimension")
    q.add_argument("--m", type=int, default=100)
    q.add_argument("--epsilon", type=float, default=0.25)
    q.add_argument("--dims", type=_int_range, default=list(range(1, 16)))
    q.add_argument("--runs", type=int, default=2000)
    q.set_defaults(func=cmd_curse_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = fresh_seed()
        sys.stderr.write(f"seed: {args.seed}\n")
    try:
        return args.func(args, argv)
    except UsageError as exc:
        sys.stderr.write(f"bingof: error: {exc}\n")
        return EXIT_USAGE
    except (DataError, DomainError, ContractError) as exc:
        sys.stderr.write(f"bingof: data error: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(f"bingof: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
