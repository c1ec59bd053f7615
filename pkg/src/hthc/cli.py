"""Command-line surface: convert, profile, tune, train, compare, bench.

Exit codes: 0 on convergence (or clean completion for non-training
subcommands), 2 when training stops on the epoch limit or timeout, 1 on any
error including bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from hthc import glm, kernels
from hthc.baselines import StopConfig, st_train
from hthc.coordinator import (TrainConfig, TrainResult, suboptimality, train,
                              write_trace_csv)
from hthc.data import (load_binary, load_libsvm, load_vector,
                       save_binary, save_vector, scale_columns_by_labels,
                       synth_lasso, synth_svm)
from hthc.gap_task import GapTaskConfig
from hthc.solver_task import SolverConfig
from hthc.tuner import TimingTable, choose_parameters, profile_tasks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class CliError(Exception):
    """Usage or runtime error that should terminate with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the documented mapping reserves 2
    # for timeout/epoch-limit, so route usage errors through CliError.
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["lasso", "svm"], required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True,
                   help="regularization strength")
    p.add_argument("--data", required=True,
                   help="dataset path, or synth:n=..,d=..[,support=..][,noise=..][,seed=..]")
    p.add_argument("--format", choices=["libsvm", "bin"], default="libsvm")
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    batch = p.add_mutually_exclusive_group()
    batch.add_argument("--batch-frac", type=float, default=None)
    batch.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--ta", type=int, default=1, help="scoring-task workers")
    p.add_argument("--tb", type=int, default=1, help="parallel coordinate updates")
    p.add_argument("--vb", type=int, default=1, help="workers per update")
    p.add_argument("--auto-tune", metavar="TABLE", default=None,
                   help="timing-table JSON; overrides batch/worker flags")
    p.add_argument("--cores", type=int, default=None,
                   help="core budget for --auto-tune (default: all)")
    p.add_argument("--sync", choices=["atomic", "wild"], default="atomic")
    p.add_argument("--r-tilde", type=float, default=0.15)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--timeout-s", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gap-every", type=int, default=1)
    p.add_argument("--deterministic", choices=["auto", "yes", "no"], default="auto")
    p.add_argument("--trace", default=None, help="trace CSV output path")
    p.add_argument("--summary", default=None, help="summary JSON output path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hthc", description=__doc__)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[], help="run one training job")
    _add_dataset_flags(p_train)
    p_train.add_argument("--mode", choices=["hthc", "st"], default="hthc")
    _add_train_flags(p_train)

    p_cmp = sub.add_parser("compare", help="run several modes on one dataset")
    _add_dataset_flags(p_cmp)
    p_cmp.add_argument("--modes", default="hthc,st",
                       help="comma-separated subset of hthc,st")
    p_cmp.add_argument("--reference", action="store_true",
                       help="solve to high precision first and fill the "
                            "suboptimality column")
    _add_train_flags(p_cmp)

    p_prof = sub.add_parser("profile", help="measure per-update task costs")
    p_prof.add_argument("--d-grid", default="10000,100000",
                        help="comma-separated vector lengths")
    p_prof.add_argument("--ta-grid", default="1,2,4")
    p_prof.add_argument("--tb-grid", default="1,2,4")
    p_prof.add_argument("--vb-grid", default="1")
    p_prof.add_argument("--reps", type=int, default=3)
    p_prof.add_argument("--n", type=int, default=600)
    p_prof.add_argument("--a-updates", type=int, default=4000)
    p_prof.add_argument("--seed", type=int, default=0)
    p_prof.add_argument("--out", required=True, help="timing-table JSON path")

    p_tune = sub.add_parser("tune", help="pick parameters from a timing table")
    p_tune.add_argument("--table", required=True)
    p_tune.add_argument("--n", type=int, required=True)
    p_tune.add_argument("--d", type=int, required=True)
    p_tune.add_argument("--r-tilde", type=float, default=0.15)
    p_tune.add_argument("--cores", type=int, default=None)

    p_conv = sub.add_parser("convert", help="LIBSVM text to binary container")
    p_conv.add_argument("--in", dest="src", required=True)
    p_conv.add_argument("--out", dest="dst", required=True)
    p_conv.add_argument("--labels-out", default=None,
                        help="labels vector path (default: OUT.y)")
    p_conv.add_argument("--precision", choices=["f32", "f64"], default="f32")

    p_bench = sub.add_parser("bench", help="compare kernel backends")
    p_bench.add_argument("--d", type=int, default=100_000)
    p_bench.add_argument("--n", type=int, default=600)
    p_bench.add_argument("--updates", type=int, default=2000)
    p_bench.add_argument("--seed", type=int, default=0)

    return parser


# ---------------------------------------------------------------------------
# Dataset loading.
# ---------------------------------------------------------------------------

def _parse_synth_spec(spec: str) -> dict:
    out: dict[str, float] = {}
    body = spec[len("synth:"):]
    if body:
        for part in body.split(","):
            key, sep, val = part.partition("=")
            if not sep:
                raise CliError(f"bad synth spec item {part!r}")
            out[key.strip()] = float(val)
    return out

def _load_dataset(args) -> tuple:
    """Returns (matrix, targets) ready for the chosen model: for SVM the
    labels are folded into the columns; for Lasso the loaded sample-column
    matrix is transposed so coordinates run over features."""
    dtype = np.float32 if args.precision == "f32" else np.float64
    if args.data.startswith("synth:"):
        spec = _parse_synth_spec(args.data)
        n = int(spec.get("n", 1000))
        d = int(spec.get("d", 200))
        seed = int(spec.get("seed", 0))
        if args.model == "lasso":
            matrix, targets, _ = synth_lasso(
                n=n, d=d, support_frac=spec.get("support", 0.05),
                noise_sd=spec.get("noise", 0.01), seed=seed, dtype=dtype)
            return matrix, targets
        matrix, labels = synth_svm(n=n, d=d, seed=seed,
                                   flip_frac=spec.get("flip", 0.02),
                                   dtype=dtype)
        return scale_columns_by_labels(matrix, labels), None
    if args.format == "libsvm":
        matrix, labels = load_libsvm(args.data, dtype=dtype)
    else:
        matrix = load_binary(args.data)
        if matrix.dtype != dtype:
            from hthc.data import DataMatrix
            matrix = DataMatrix(matrix.values, dtype=dtype)
        labels = load_vector(args.data + ".y")
    if args.model == "svm":
        return scale_columns_by_labels(matrix, labels), None
    # Lasso coordinates run over features: transpose the sample-column
    # matrix and regress the labels.
    return matrix.transposed(), labels.astype(np.float64)


def _build_problem(args, matrix, targets) -> glm.ProblemDefinition:
    if args.model == "lasso":
        return glm.lasso_problem(args.lam, matrix.n)
    return glm.svm_problem(args.lam, matrix.n)


def _train_config(args, matrix) -> tuple[TrainConfig, dict]:
    tuned_echo = {}
    batch_size = args.batch_size
    batch_frac = args.batch_frac
    ta, tb, vb = args.ta, args.tb, args.vb
    if args.auto_tune:
        if not os.path.exists(args.auto_tune):
            raise CliError(f"timing table not found: {args.auto_tune}")
        table = TimingTable.load(args.auto_tune)
        cores = args.cores or os.cpu_count() or 2
        tuned = choose_parameters(table, n=matrix.n, d=matrix.d,
                                  r_tilde=args.r_tilde, core_budget=cores)
        batch_size, batch_frac = tuned.m, None
        ta, tb, vb = tuned.t_a, tuned.t_b, tuned.v_b
        tuned_echo = tuned.to_json_dict()
        if not tuned.feasible:
            logger.warning("no feasible tuning; using coverage-maximizing "
                           "parameters %s", tuned_echo)
    deterministic = {"auto": None, "yes": True, "no": False}[args.deterministic]
    cfg = TrainConfig(
        batch_size=batch_size, batch_frac=batch_frac, r_tilde=args.r_tilde,
        tol=args.tol, max_epochs=args.max_epochs, timeout_s=args.timeout_s,
        seed=args.seed,
        solver=SolverConfig(t_b=tb, v_b=vb, mode=args.sync),
        gap=GapTaskConfig(t_a=ta, seed=args.seed),
        gap_eval_every=args.gap_every, deterministic=deterministic)
    return cfg, tuned_echo


def _summary_dict(args, result: TrainResult, cfg: TrainConfig,
                  tuned_echo: dict, matrix) -> dict:
    config = {
        "batch_size": cfg.resolve_batch_size(matrix.n),
        "batch_frac": cfg.resolve_batch_size(matrix.n) / matrix.n,
        "t_a": cfg.gap.t_a, "t_b": cfg.solver.t_b, "v_b": cfg.solver.v_b,
        "sync": cfg.solver.mode, "r_tilde": cfg.r_tilde, "tol": cfg.tol,
        "max_epochs": cfg.max_epochs, "seed": cfg.seed,
        "precision": args.precision, "lambda": args.lam,
        "backend": kernels.backend_name,
    }
    if tuned_echo:
        config["auto_tune"] = tuned_echo
    return {
        "model": args.model,
        "mode": result.mode,
        "config": config,
        "epochs": [row.json_dict() for row in result.trace],
        "wall_s": result.wall_s,
        "final_gap": result.final_gap,
        "final_objective": result.final_objective,
        "converged": result.converged,
    }


def _run_one_mode(mode, args, matrix, targets, problem, cfg) -> TrainResult:
    if mode == "hthc":
        return train(matrix, targets, problem, cfg)
    stop = StopConfig(tol=cfg.tol, max_epochs=cfg.max_epochs,
                      timeout_s=cfg.timeout_s, seed=cfg.seed,
                      gap_eval_every=cfg.gap_eval_every)
    return st_train(matrix, targets, problem, cfg.solver, stop)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def _cmd_train(args) -> int:
    matrix, targets = _load_dataset(args)
    problem = _build_problem(args, matrix, targets)
    cfg, tuned_echo = _train_config(args, matrix)
    result = _run_one_mode(args.mode, args, matrix, targets, problem, cfg)
    if args.trace:
        write_trace_csv(result.trace, args.trace)
    summary = _summary_dict(args, result, cfg, tuned_echo, matrix)
    text = json.dumps(summary, indent=2)
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_compare(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in ("hthc", "st"):
            raise CliError(f"unknown mode {mode!r}")
    matrix, targets = _load_dataset(args)
    problem = _build_problem(args, matrix, targets)
    cfg, tuned_echo = _train_config(args, matrix)
    f_star = None
    if args.reference:
        from hthc.baselines import reference_scd
        ref = reference_scd(matrix, targets, problem,
                            tol=min(1e-9, args.tol / 10))
        if not ref.converged:
            logger.warning("reference solve stopped at gap %.3e", ref.gap)
        f_star = ref.f_star
    rows = []
    summaries = []
    all_converged = True
    for mode in modes:
        result = _run_one_mode(mode, args, matrix, targets, problem, cfg)
        if f_star is not None:
            suboptimality(result.trace, f_star)
        rows.extend(result.trace)
        summaries.append(_summary_dict(args, result, cfg, tuned_echo, matrix))
        all_converged = all_converged and result.converged
    if args.trace:
        write_trace_csv(rows, args.trace)
    print(json.dumps(summaries, indent=2))
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def _parse_grid(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad grid {text!r}") from None


def _cmd_profile(args) -> int:
    table = profile_tasks(_parse_grid(args.d_grid), _parse_grid(args.ta_grid),
                          _parse_grid(args.tb_grid), _parse_grid(args.vb_grid),
                          reps=args.reps, n=args.n, seed=args.seed,
                          a_updates=args.a_updates)
    table.save(args.out)
    print(json.dumps(table.to_json_dict(), indent=2))
    return EXIT_OK


def _cmd_tune(args) -> int:
    if not os.path.exists(args.table):
        raise CliError(f"timing table not found: {args.table}")
    table = TimingTable.load(args.table)
    cores = args.cores or os.cpu_count() or 2
    tuned = choose_parameters(table, n=args.n, d=args.d,
                              r_tilde=args.r_tilde, core_budget=cores)
    print(json.dumps(tuned.to_json_dict(), indent=2))
    return EXIT_OK


def _cmd_convert(args) -> int:
    dtype = np.float32 if args.precision == "f32" else np.float64
    matrix, labels = load_libsvm(args.src, dtype=dtype)
    save_binary(matrix, args.dst)
    save_vector(labels, args.labels_out or args.dst + ".y")
    print(f"wrote {matrix.d}x{matrix.n} matrix to {args.dst}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    from hthc.bench import bench_backends, format_report
    rows = bench_backends(d=args.d, n=args.n, updates=args.updates,
                          seed=args.seed)
    print(format_report(rows))
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "compare": _cmd_compare,
    "profile": _cmd_profile,
    "tune": _cmd_tune,
    "convert": _cmd_convert,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s")
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # surface as documented error exit, not traceback
        if os.environ.get("HTHC_DEBUG"):
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
