"""Command-line interface.

Commands
--------
offline        debiased inference on one dataset
online         streaming inference over ordered batches, with resume
simulate       Monte-Carlo campaigns over simulated scenarios
state-inspect  summary or JSON export of an online state file

Exit codes
----------
0 success, 2 usage or configuration error, 3 input parse error,
4 I/O error, 5 Lasso solver failure, 6 CLIME failure,
7 state file error (version, truncation, checksum), 8 dimension mismatch,
9 other numerical failure.

``SMOOTHSVM_WORKERS`` sets the default worker count; ``--workers`` wins.
Flags also win over keys of the optional ``--config`` key=value file.
"""

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .exceptions import (
    ConvergenceError,
    DimensionError,
    InfeasibleError,
    NumericalError,
    ParseError,
    SmoothSVMError,
    StateFormatError,
)
from .ingest import FORMATS, ingest
from .offline import InferenceConfig, run_offline
from .online import deserialize_state, init_state, serialize_state, state_to_json, update_batch
from .simgen import METRICS, ScenarioConfig, compute_metrics, oracle_beta_star, run_replication

log = logging.getLogger("smoothsvm")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_IO = 4
EXIT_SOLVER = 5
EXIT_CLIME = 6
EXIT_STATE = 7
EXIT_DIMENSION = 8
EXIT_NUMERICAL = 9

WORKERS_ENV = "SMOOTHSVM_WORKERS"
RESULT_COLUMNS = ("coordinate", "estimate", "se", "ci_lower", "ci_upper", "lasso_beta")
TRAJECTORY_COLUMNS = ("b", "N_b", "coordinate", "estimate", "se", "ci_lower", "ci_upper", "lasso_beta")


class UsageError(Exception):
    pass


def exit_code(exc):
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, ParseError):
        return EXIT_PARSE
    if isinstance(exc, StateFormatError):
        return EXIT_STATE
    if isinstance(exc, DimensionError):
        return EXIT_DIMENSION
    if isinstance(exc, SmoothSVMError) and exc.stage in ("clime", "delta-cv") or isinstance(exc, InfeasibleError):
        return EXIT_CLIME
    if isinstance(exc, ConvergenceError) or isinstance(exc, SmoothSVMError) and exc.stage in ("lasso", "lambda-cv"):
        return EXIT_SOLVER
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (SmoothSVMError, NumericalError)):
        return EXIT_NUMERICAL
    return EXIT_USAGE if isinstance(exc, ValueError) else EXIT_NUMERICAL


# ---------------------------------------------------------------- output


def _fmt(x):
    # repr round-trips doubles exactly
    return repr(float(x))


def write_atomic(path, data):
    """Write ``data`` (str or bytes) to a temp file beside ``path`` and rename."""
    path = os.path.abspath(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=os.path.dirname(path))
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows, comment=None):
    buf = io.StringIO()
    if comment is not None:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def result_rows(result):
    for j in range(result.estimate.size):
        yield [j, _fmt(result.estimate[j]), _fmt(result.se[j]), _fmt(result.ci_lower[j]),
               _fmt(result.ci_upper[j]), _fmt(result.lasso_beta[j])]


def result_document(result, run_config, wall_time):
    return {
        "config": run_config,
        "metadata": {
            "lam": result.lam,
            "delta": result.delta,
            "h": result.h,
            "n": result.n,
            "p": result.p,
            "level": result.level,
            "cv_seed": run_config.get("seed"),
            "wall_time": wall_time,
            "version": __version__,
        },
        "coordinates": {
            "estimate": result.estimate.tolist(),
            "se": result.se.tolist(),
            "ci_lower": result.ci_lower.tolist(),
            "ci_upper": result.ci_upper.tolist(),
            "lasso_beta": result.lasso_beta.tolist(),
        },
    }


def write_results(prefix, result, run_config, wall_time):
    """``prefix.json`` (coordinates + metadata) and ``prefix.csv`` (coordinates)."""
    doc = result_document(result, run_config, wall_time)
    comment = "config " + json.dumps(run_config, sort_keys=True)
    write_atomic(prefix + ".csv", _csv_text(RESULT_COLUMNS, result_rows(result), comment))
    write_atomic(prefix + ".json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- config


def _check_output(path):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d):
        raise FileNotFoundError(f"output directory {d} does not exist")
    if not os.access(d, os.W_OK):
        raise PermissionError(f"output directory {d} is not writable")


def _check_input(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"input file {path} not found")


def read_config_file(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{line_no}: expected key = value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config_file(parser, sub, argv):
    """Re-parse with defaults taken from ``--config`` so explicit flags win."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    values = read_config_file(args.config)
    actions = {a.dest: a for a in sub[args.command]._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in actions or key in ("help", "config"):
            raise UsageError(f"unknown configuration key {key!r}")
        act = actions[key]
        if act.nargs in ("+", "*"):
            items = raw.split()
            defaults[key] = [act.type(v) if act.type else v for v in items]
        elif isinstance(act, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = act.type(raw) if act.type else raw
    sub[args.command].set_defaults(**defaults)
    return parser.parse_args(argv)


def _workers(args):
    if args.workers is not None:
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return 1


def _inference_config(args, workers):
    grid = tuple(args.delta_grid) if args.delta_grid else None
    return InferenceConfig(
        lam=args.lam,
        delta=args.delta,
        h=args.h,
        level=args.level,
        cv_folds=args.folds,
        cv_seed=args.seed,
        lambda_grid_size=args.lambda_grid_size,
        delta_grid=grid,
        n_jobs=workers,
    )


def _tuning_record(args):
    return {
        "lam": args.lam,
        "delta": args.delta,
        "h": args.h,
        "level": args.level,
        "folds": args.folds,
        "seed": args.seed,
        "lambda_grid_size": args.lambda_grid_size,
        "delta_grid": list(args.delta_grid) if args.delta_grid else None,
    }


# ---------------------------------------------------------------- commands


def cmd_offline(args):
    _check_input(args.input)
    _check_output(args.out + ".json")
    workers = _workers(args)
    data = ingest(args.input, args.format, args.p)
    run_config = {"command": "offline", "format": args.format, "p": data.p, **_tuning_record(args)}
    t0 = time.perf_counter()
    result = run_offline(data, _inference_config(args, workers))
    wall = time.perf_counter() - t0
    write_results(args.out, result, run_config, wall)
    log.info("offline: n=%d p=%d lambda=%.6g delta=%.6g h=%.6g (%.2fs)", data.n, data.p, result.lam,
             result.delta, result.h, wall)
    return EXIT_OK


def _batches(args):
    if len(args.input) > 1:
        if args.batches is not None:
            raise UsageError("--batches partitions a single input file; pass one file")
        return [ingest(path, args.format, args.p) for path in args.input]
    data = ingest(args.input[0], args.format, args.p)
    B = args.batches or 1
    if not 1 <= B <= data.n:
        raise UsageError(f"--batches must lie in [1, {data.n}]")
    # contiguous equal blocks in file order
    return [data.subset(idx) for idx in np.array_split(np.arange(data.n), B)]


def _read_trajectory(path, upto):
    """Header comment and rows with ``b <= upto`` from an existing trajectory."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comment = lines[0][2:] if lines and lines[0].startswith("# ") else None
    body = lines[1:] if comment is not None else lines
    if not body or body[0].split(",") != list(TRAJECTORY_COLUMNS):
        raise ParseError(f"{path} is not a trajectory file", 1)
    keep = [r for r in body[1:] if r and int(r.split(",", 1)[0]) <= upto]
    return comment, keep


def cmd_online(args):
    for path in args.input:
        _check_input(path)
    for path in (args.state, args.trajectory, args.out + ".json" if args.out else None):
        if path:
            _check_output(path)
    if args.resume:
        _check_input(args.resume)
    workers = _workers(args)
    batches = _batches(args)
    p = batches[0].p
    for k, batch in enumerate(batches, start=1):
        if batch.p != p:
            raise DimensionError(f"batch {k} has p={batch.p}, batch 1 has p={p}")

    run_config = {"command": "online", "format": args.format, "p": p, "batches": len(batches), **_tuning_record(args)}
    comment = "config " + json.dumps(run_config, sort_keys=True)
    rows = []
    if args.resume:
        with open(args.resume, "rb") as fh:
            state = deserialize_state(fh.read())
        if state.p != p:
            raise DimensionError(f"resume state has p={state.p}, batches have p={p}")
        if state.b > len(batches):
            raise UsageError(f"state has consumed {state.b} batches, only {len(batches)} given")
        if os.path.exists(args.trajectory):
            comment, rows = _read_trajectory(args.trajectory, state.b)
        log.info("resuming after batch %d (N=%d)", state.b, state.N)
    else:
        state = init_state(p)

    config = _inference_config(args, workers)
    stop = len(batches) if args.max_batches is None else min(len(batches), state.b + args.max_batches)
    result, wall = None, 0.0
    for k in range(state.b, stop):
        t0 = time.perf_counter()
        state, out = update_batch(state, batches[k], config)
        wall = time.perf_counter() - t0
        result = out.result
        for line in result_rows(result):
            rows.append(",".join(str(v) for v in [out.b, out.N, *line]))
        # trajectory first: a crash between the two writes is repaired on
        # resume by dropping rows past the state's batch count
        write_atomic(args.trajectory, _csv_text(TRAJECTORY_COLUMNS, [], comment) + "".join(r + "\n" for r in rows))
        write_atomic(args.state, serialize_state(state))
        log.info("batch %d: N=%d lambda=%.6g delta=%.6g (%.2fs)", out.b, out.N, result.lam, result.delta, wall)
    if result is not None and args.out:
        write_results(args.out, result, {**run_config, "batch": state.b}, wall)
    return EXIT_OK


def _replicate(job):
    cfg, method, level = job
    result, elapsed = run_replication(cfg, method, InferenceConfig(level=level))
    return result, elapsed


def scenario_grid(args):
    out = []
    for case, cov in itertools.product(args.case, args.cov):
        out.append(ScenarioConfig(case, cov, args.p_dim, n=args.n, B=args.B, n_b=args.nb, seed=args.seed))
    return out


def cmd_simulate(args):
    _check_output(args.out)
    if args.per_rep:
        _check_output(args.per_rep)
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    methods = args.methods
    if "online" in methods and (args.B is None or args.nb is None):
        raise UsageError("online replications need --B and --nb")
    if args.n is None and (args.B is None or args.nb is None):
        raise UsageError("give --n, or --B and --nb")
    if args.n is not None and args.B is not None and args.n != args.B * args.nb:
        raise UsageError("--n must equal B * nb when both are given")
    workers = _workers(args)
    run_config = {
        "command": "simulate",
        "case": args.case,
        "cov": args.cov,
        "p": args.p_dim,
        "n": args.n,
        "B": args.B,
        "nb": args.nb,
        "reps": args.reps,
        "seed": args.seed,
        "methods": methods,
        "level": args.level,
    }
    jobs = []
    for cfg in scenario_grid(args):
        for method in methods:
            for r in range(args.reps):
                # replication r of every method sees the same draw
                jobs.append((cfg.with_seed(args.seed + r), method, args.level))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate, jobs, chunksize=1))
    else:
        outcomes = [_replicate(j) for j in jobs]

    table, per_rep = [], []
    pos = 0
    for cfg in scenario_grid(args):
        beta_star = oracle_beta_star(cfg)
        for method in methods:
            chunk = outcomes[pos : pos + args.reps]
            pos += args.reps
            report = compute_metrics([c[0] for c in chunk], beta_star, cfg.s, [c[1] for c in chunk])
            label = cfg.with_seed(args.seed).label()
            for name in METRICS:
                table.append([label, method, name, _fmt(report.mean(name))])
            for r in range(args.reps):
                for name in METRICS:
                    per_rep.append([label, method, r, args.seed + r, name, _fmt(report.per_rep[name][r])])
            log.info("%s %s: %s", label, method,
                     " ".join(f"{k}={report.mean(k):.4f}" for k in ("cov_non", "cov_zero", "abias_non")))
    comment = "config " + json.dumps(run_config, sort_keys=True)
    write_atomic(args.out, _csv_text(("scenario", "method", "metric", "value"), table, comment))
    if args.per_rep:
        write_atomic(args.per_rep, _csv_text(("scenario", "method", "rep", "seed", "metric", "value"), per_rep, comment))
    return EXIT_OK


def cmd_state_inspect(args):
    _check_input(args.state)
    with open(args.state, "rb") as fh:
        state = deserialize_state(fh.read())
    if args.json:
        _check_output(args.json)
        write_atomic(args.json, state_to_json(state) + "\n")
    summary = {
        "schema_version": state.schema_version,
        "p": state.p,
        "batches": state.b,
        "N": state.N,
        "h_history": state.h_history.tolist(),
        "lam_history": state.lam_history.tolist(),
        "delta_history": state.delta_history.tolist(),
        "beta_nonzero": int(np.count_nonzero(state.beta[1:])),
        "checksum": "ok",
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _tuning_args(p):
    p.add_argument("--lam", type=float, help="Lasso penalty (default: cross-validated)")
    p.add_argument("--delta", type=float, help="CLIME level (default: cross-validated)")
    p.add_argument("--h", type=float, help="bandwidth (default: (5 log p / n)^(1/4))")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="fold-assignment seed")
    p.add_argument("--lambda-grid-size", dest="lambda_grid_size", type=int, default=20)
    p.add_argument("--delta-grid", dest="delta_grid", type=float, nargs="+")


def build_parser():
    parser = argparse.ArgumentParser(prog="smoothsvm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    cmds = {}

    def common(p):
        p.add_argument("--config", help="key = value file; flags win")
        p.add_argument("--workers", type=int, help=f"worker count (default ${WORKERS_ENV} or 1)")

    p = cmds["offline"] = sub.add_parser("offline", help="debiased inference on one dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--p", type=int, help="feature count for sparse input")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.json and PREFIX.csv")
    _tuning_args(p)
    common(p)

    p = cmds["online"] = sub.add_parser("online", help="streaming inference over batches")
    p.add_argument("--input", required=True, nargs="+", help="batch files in order, or one file with --batches")
    p.add_argument("--batches", type=int, help="split a single file into this many contiguous blocks")
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--p", type=int, help="feature count for sparse input")
    p.add_argument("--state", required=True, help="state file written after every batch")
    p.add_argument("--trajectory", required=True, help="long-format per-batch CSV")
    p.add_argument("--out", help="prefix for the final batch's JSON/CSV results")
    p.add_argument("--resume", help="state file to continue from")
    p.add_argument("--max-batches", dest="max_batches", type=int, help="stop after this many new batches")
    _tuning_args(p)
    common(p)

    p = cmds["simulate"] = sub.add_parser("simulate", help="Monte-Carlo campaign")
    p.add_argument("--case", type=int, nargs="+", default=[1], choices=(1, 2))
    p.add_argument("--cov", nargs="+", default=["III"], choices=("I", "II", "III"))
    p.add_argument("--p", dest="p_dim", type=int, default=60)
    p.add_argument("--n", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--nb", type=int)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0, help="replication r uses seed + r")
    p.add_argument("--methods", nargs="+", default=["offline", "online"], choices=("offline", "online"))
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True, help="long-format metrics CSV")
    p.add_argument("--per-rep", dest="per_rep", help="optional per-replication CSV")
    common(p)

    p = cmds["state-inspect"] = sub.add_parser("state-inspect", help="validate and summarise a state file")
    p.add_argument("state")
    p.add_argument("--json", help="write a lossless JSON export here")
    p.add_argument("--config", help=argparse.SUPPRESS)
    return parser, cmds


COMMANDS = {
    "offline": cmd_offline,
    "online": cmd_online,
    "simulate": cmd_simulate,
    "state-inspect": cmd_state_inspect,
}


def main(argv=None):
    parser, cmds = build_parser()
    try:
        args = _apply_config_file(parser, cmds, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"smoothsvm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"smoothsvm: error: [config] {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s",
                        stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - mapped to a documented exit code
        code = exit_code(exc)
        stage = getattr(exc, "stage", None) or {EXIT_IO: "io", EXIT_PARSE: "ingest", EXIT_USAGE: "config"}.get(code, "run")
        msg = str(exc)
        if not msg.startswith("["):
            msg = f"[{stage}] {msg}"
        print(f"smoothsvm: error: {msg}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
