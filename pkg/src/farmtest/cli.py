"""
Command-line interface: ``farmtest {test,test2,simulate,calibrate}``.

Exit codes are 0 on success, 2 for bad input (unreadable CSV, invalid flags)
and 3 for a numerical failure, reported with the pipeline stage that failed.
Output is byte-for-byte reproducible for a given input, flag set and seed.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .exceptions import FarmTestError, StageError
from .simulation import ERRORS, METHODS, Scenario, run_experiment
from .testing import (COVARIANCE_KINDS, VARIANCE_SCALES, RobustConfig, farmtest,
                      farmtest_two_sample)
from .tuning import CvPlan, calibrate_config

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

SCHEMA_IDS = {
    "test": "farmtest/test-result/1",
    "simulate": "farmtest/experiment-report/1",
    "calibrate": "farmtest/config-fragment/1",
}

SCHEMA_FILES = {
    "test": "test-result.schema.json",
    "simulate": "experiment-report.schema.json",
    "calibrate": "config-fragment.schema.json",
}

_MODEL_FLAGS = {"m1": "M1", "m2": "M2_synthetic", "m3": "M3_var1"}
_CONFIG_KEYS = ("c_mean", "c_cov", "c_var", "c_utype", "c_factor")


def load_schema(kind):
    """JSON schema (as a dict) for the output of subcommand ``kind``."""
    from importlib.resources import files
    return json.loads((files("farmtest") / "schemas" / SCHEMA_FILES[kind]).read_text())


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


# -- JSON ---------------------------------------------------------------------

def _encode(obj):
    # floats get 17 significant digits; non-finite values become strings
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return '"nan"'
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return format(x, ".17g")
    return json.dumps(str(obj))


def dumps(obj):
    """Serialize ``obj`` to JSON text with ``.17g`` floats and a trailing newline."""
    return _encode(obj) + "\n"


def _decode_floats(d):
    return {k: float(v) if isinstance(v, str) and v in ("inf", "-inf", "nan") else v
            for k, v in d.items()}


# -- CSV ----------------------------------------------------------------------

def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_matrix(path, header="auto"):
    """Read a numeric CSV (rows are observations).

    ``header`` is ``"auto"`` (header present iff some first-line cell is not
    a number), ``"yes"`` or ``"no"``. Returns ``(X, names)``; ``names`` is
    None without a header.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: no data")
    first = rows[0][1]
    has_header = header == "yes" or (
        header == "auto" and not all(_is_number(c) for c in first))
    names = [c.strip() for c in first] if has_header else None
    body = rows[1:] if has_header else rows
    if not body:
        raise InputError(f"{path}: header but no data rows")
    p = len(first)
    X = np.empty((len(body), p))
    for r, (line, cells) in enumerate(body):
        if len(cells) != p:
            raise InputError(f"{path}: row {line} has {len(cells)} fields, expected {p}")
        for c, cell in enumerate(cells):
            try:
                X[r, c] = float(cell)
            except ValueError:
                raise InputError(
                    f"{path}: row {line}, column {c + 1}: cannot parse {cell.strip()!r}"
                ) from None
            if not math.isfinite(X[r, c]):
                raise InputError(f"{path}: row {line}, column {c + 1}: non-finite value")
    return X, names


def write_rejected_csv(path, result, names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "name", "statistic", "pvalue"])
        for j in result.rejected:
            w.writerow([int(j), names[j] if names else "",
                        format(float(result.statistics[j]), ".17g"),
                        format(float(result.pvalues[j]), ".17g")])


def _emit(text, output):
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(output, "w") as fh:
            fh.write(text)


# -- threads ------------------------------------------------------------------

def resolve_threads(flag):
    if flag is not None:
        n = flag
    elif os.environ.get("FARMTEST_THREADS"):
        try:
            n = int(os.environ["FARMTEST_THREADS"])
        except ValueError:
            raise InputError("FARMTEST_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise InputError("thread count must be at least 1")
    return n


def _single_threaded_blas():
    # BLAS reductions may depend on the thread count; one thread keeps output
    # identical whatever --threads says (parallelism is across replications)
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


# -- subcommands --------------------------------------------------------------

def _load_config_file(path):
    try:
        with open(path) as fh:
            frag = json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(frag, dict):
        raise InputError(f"{path}: expected a JSON object")
    frag = frag.get("config", frag)
    known = set(RobustConfig.__dataclass_fields__)
    return {k: v for k, v in _decode_floats(frag).items() if k in known}


def build_config(args):
    kw = _load_config_file(args.config) if args.config else {}
    flags = {
        "alpha": args.alpha, "eta": args.eta, "covariance_kind": args.cov,
        "K": args.k, "k_max": args.kmax, "seed": args.seed,
        "variance_scale": args.variance_scale,
        **{k: getattr(args, k) for k in _CONFIG_KEYS},
    }
    kw.update({k: v for k, v in flags.items() if v is not None})
    if args.tau_inf:
        kw["tau_inf"] = True
    if "cv_grid" in kw:
        kw["cv_grid"] = tuple(kw["cv_grid"])
    try:
        return RobustConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid configuration: {exc}") from exc


def _result_document(result, config, names, inputs):
    doc = {"schema": SCHEMA_IDS["test"], "version": __version__, "inputs": inputs}
    doc.update(result.to_dict(names))
    doc["config"] = config.to_dict()
    return doc


def cmd_test(args):
    X, names = read_matrix(args.csv, args.header)
    config = build_config(args)
    with _single_threaded_blas():
        result = farmtest(X, config)
    inputs = {"n": X.shape[0], "p": X.shape[1]}
    _emit(dumps(_result_document(result, config, names, inputs)), args.output)
    if args.rejected_csv:
        write_rejected_csv(args.rejected_csv, result, names)
    return EXIT_OK


def cmd_test2(args):
    X1, names1 = read_matrix(args.csv1, args.header)
    X2, names2 = read_matrix(args.csv2, args.header)
    if X1.shape[1] != X2.shape[1]:
        raise InputError(f"column count differs: {X1.shape[1]} vs {X2.shape[1]}")
    if names1 is not None and names2 is not None and names1 != names2:
        raise InputError("header rows differ between the two files")
    config = build_config(args)
    with _single_threaded_blas():
        result = farmtest_two_sample(X1, X2, config)
    names = names1 or names2
    inputs = {"n1": X1.shape[0], "n2": X2.shape[0], "p": X1.shape[1]}
    _emit(dumps(_result_document(result, config, names, inputs)), args.output)
    if args.rejected_csv:
        write_rejected_csv(args.rejected_csv, result, names)
    return EXIT_OK


def cmd_simulate(args):
    if args.reps < 1:
        raise InputError("--reps must be at least 1")
    if not 0 < args.alpha < 1:
        raise InputError("--alpha must lie in (0, 1)")
    if not 0 < args.pthresh < 1:
        raise InputError("--pthresh must lie in (0, 1)")
    try:
        scenario = Scenario(model=_MODEL_FLAGS[args.model], error=args.error, n=args.n,
                            p=args.p, p1=args.p1, signal=args.signal, seed=args.seed)
    except ValueError as exc:
        raise InputError(f"invalid scenario: {exc}") from exc
    methods = args.methods.split(",") if args.methods else list(METHODS)
    if set(methods) - set(METHODS):
        raise InputError(f"--methods must be a subset of {','.join(METHODS)}")
    threads = resolve_threads(args.threads)
    with _single_threaded_blas():
        try:
            report = run_experiment(scenario, methods=methods, reps=args.reps,
                                    alpha=args.alpha, threshold_t=args.pthresh, eta=args.eta,
                                    select_k=args.select_k, n_jobs=threads)
        except RuntimeError as exc:
            raise StageError("simulate", exc) from exc
    doc = {"schema": SCHEMA_IDS["simulate"]}
    doc.update(report.to_dict())
    _emit(dumps(doc), args.output)
    return EXIT_OK


def cmd_calibrate(args):
    X, _ = read_matrix(args.csv, args.header)
    try:
        plan = CvPlan(folds=args.folds, seed=args.seed, standardize=args.standardize,
                      column_scaled_variance=args.variance_scale == "column")
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if X.shape[0] < plan.folds:
        raise InputError(f"need at least {plan.folds} rows for {plan.folds}-fold CV")
    with _single_threaded_blas():
        try:
            cal = calibrate_config(X, plan)
        except (FarmTestError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise StageError("calibrate", exc) from exc
    doc = {
        "schema": SCHEMA_IDS["calibrate"],
        "version": __version__,
        "config": {
            "c_mean": cal.c_mean, "c_cov": cal.c_cov, "c_var": cal.c_var,
            "c_utype": cal.c_utype, "c_factor": cal.c_factor,
            "cv_folds": plan.folds, "cv_grid": list(plan.grid),
            "cv_standardize": plan.standardize, "variance_scale": args.variance_scale,
            "seed": plan.seed,
        },
        "n": cal.n, "p": cal.p,
        "rates": cal.rates,
        "scales": cal.scales,
        "taus": cal.taus(),
    }
    _emit(dumps(doc), args.output)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def _add_test_flags(sp):
    sp.add_argument("--alpha", type=float, help="target FDR level (default 0.05)")
    sp.add_argument("--eta", type=float, help="p-value cut for the null proportion "
                                              "(default 0.5; 0 fixes it at 1)")
    sp.add_argument("--cov", choices=COVARIANCE_KINDS, help="covariance estimator")
    sp.add_argument("--k", type=int, help="number of factors (default: eigenvalue ratio)")
    sp.add_argument("--kmax", type=int, help="largest K considered by the ratio rule")
    sp.add_argument("--tau-inf", action="store_true",
                    help="disable robustification (infinite tau everywhere)")
    for key in _CONFIG_KEYS:
        sp.add_argument("--" + key.replace("_", "-"), dest=key, type=float,
                        help=f"fixed CV constant {key} (skips its calibration)")
    sp.add_argument("--variance-scale", choices=VARIANCE_SCALES,
                    help="scale the variance-stage tau per column (default column)")
    sp.add_argument("--config", help="JSON config fragment (e.g. from 'calibrate')")
    sp.add_argument("--header", choices=("auto", "yes", "no"), default="auto")
    sp.add_argument("--output", "-o", help="JSON report path (default stdout)")
    sp.add_argument("--rejected-csv", help="write rejected features to this CSV")
    sp.add_argument("--seed", type=int, help="seed for CV fold assignment")
    sp.add_argument("--threads", type=int, help="worker threads "
                                                "(default $FARMTEST_THREADS or all cores)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="farmtest", description="Factor-adjusted robust multiple testing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("test", help="one-sample test of zero means")
    sp.add_argument("csv")
    _add_test_flags(sp)
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("test2", help="two-sample test of equal means")
    sp.add_argument("csv1")
    sp.add_argument("csv2")
    _add_test_flags(sp)
    sp.set_defaults(func=cmd_test2)

    sp = sub.add_parser("simulate", help="Monte Carlo comparison of the methods")
    sp.add_argument("--model", choices=tuple(_MODEL_FLAGS), default="m1")
    sp.add_argument("--error", choices=ERRORS, default="normal")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--p", type=int, default=100)
    sp.add_argument("--p1", type=int, help="number of true signals (default 5%% of p)")
    sp.add_argument("--signal", type=float, default=0.5)
    sp.add_argument("--reps", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--eta", type=float, default=0.0)
    sp.add_argument("--pthresh", type=float, default=0.01,
                    help="p-value threshold for FDP estimation accuracy")
    sp.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    sp.add_argument("--select-k", action="store_true",
                    help="estimate K by the eigenvalue ratio instead of using the truth")
    sp.add_argument("--output", "-o")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="cross-validate the robustification constants")
    sp.add_argument("csv")
    sp.add_argument("--header", choices=("auto", "yes", "no"), default="auto")
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--standardize", action="store_true",
                    help="measure constants in standard-deviation units")
    sp.add_argument("--variance-scale", choices=VARIANCE_SCALES, default="column")
    sp.add_argument("--output", "-o")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        if getattr(args, "threads", None) is not None or args.command == "simulate":
            resolve_threads(args.threads)
        return args.func(args)
    except InputError as exc:
        print(f"farmtest: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"farmtest: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FarmTestError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"farmtest: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"farmtest: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
