"""Training loop: overlap gap scoring with batch solves.

Each epoch selects the top-m coordinates by gap score, snapshots the model,
then runs the scoring task and the solver concurrently on disjoint,
long-lived worker pools. When the solver finishes its batch, the scoring
task is signalled to stop; the partially refreshed gap memory ranks the
next batch. Stopping is certified by the full duality gap.

Runs with at most one scoring worker and a single solver lane are
reproducible: the scoring task is then given a fixed per-epoch sample
quota (a timed race could not replay bit-for-bit), so two runs with the
same seed produce identical traces.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from hthc import glm, kernels
from hthc.data import DataMatrix, GapMemory, ModelState
from hthc.gap_task import GapTaskConfig, snapshot_for_epoch, start_gap_sampling
from hthc.solver_task import SolverConfig, run_epoch, stage_batch

logger = logging.getLogger(__name__)

TRACE_FIELDS = ("epoch", "wall_s", "duality_gap", "suboptimality",
                "updates_A", "coverage_A", "updates_B", "mode")


class ConsistencyError(RuntimeError):
    """The shared vector drifted from D alpha beyond the atomic-mode bound."""


@dataclass(frozen=True)
class TrainConfig:
    """Batch size, coverage target, stopping criteria, and worker layouts."""

    batch_size: Optional[int] = None
    batch_frac: Optional[float] = None
    r_tilde: float = 0.15
    tol: float = 1e-5
    max_epochs: int = 1000
    timeout_s: Optional[float] = None
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    gap: GapTaskConfig = field(default_factory=GapTaskConfig)
    gap_eval_every: int = 1
    deterministic: Optional[bool] = None  # None: auto from worker counts
    det_a_quota: Optional[int] = None     # per-epoch scoring quota when deterministic
    check_consistency: bool = False

    def __post_init__(self):
        if self.batch_size is not None and self.batch_frac is not None:
            raise ValueError("give batch_size or batch_frac, not both")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.batch_frac is not None and not (0.0 < self.batch_frac <= 1.0):
            raise ValueError("batch_frac must be in (0, 1]")
        if not (0.0 < self.r_tilde <= 1.0):
            raise ValueError("r_tilde must be in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.gap_eval_every < 1:
            raise ValueError("gap_eval_every must be >= 1")

    def resolve_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            m = self.batch_size
        else:
            frac = self.batch_frac if self.batch_frac is not None else self.r_tilde
            m = math.ceil(frac * n)
        m = max(1, min(m, n))
        return m

    def is_deterministic(self) -> bool:
        if self.deterministic is not None:
            return self.deterministic
        return (self.gap.t_a <= 1 and self.solver.t_b == 1
                and self.solver.v_b == 1)


@dataclass
class TraceRow:
    epoch: int
    wall_s: float
    duality_gap: Optional[float]
    updates_a: int
    coverage_a: float
    updates_b: int
    mode: str
    suboptimality: Optional[float] = None
    objective: Optional[float] = None          # kept in memory, not in CSV
    consistency_inf: Optional[float] = None    # recorded when checking is on

    def csv_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "wall_s": repr(self.wall_s),
            "duality_gap": "" if self.duality_gap is None else repr(self.duality_gap),
            "suboptimality": "" if self.suboptimality is None else repr(self.suboptimality),
            "updates_A": self.updates_a,
            "coverage_A": repr(self.coverage_a),
            "updates_B": self.updates_b,
            "mode": self.mode,
        }

    def json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "wall_s": self.wall_s,
            "duality_gap": self.duality_gap,
            "suboptimality": self.suboptimality,
            "updates_A": self.updates_a,
            "coverage_A": self.coverage_a,
            "updates_B": self.updates_b,
            "mode": self.mode,
        }


@dataclass
class TrainResult:
    alpha: np.ndarray
    state: ModelState
    trace: list[TraceRow]
    converged: bool
    stop_reason: str
    final_gap: float
    final_objective: float
    wall_s: float
    config: Optional[TrainConfig]
    mode: str


def write_trace_csv(rows: list[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.csv_dict())


def select_top_m(z, m: int) -> np.ndarray:
    """Indices of the m largest gap scores; ties broken by lower index.

    Every selected score is >= every rejected one.
    """
    scores = z.z if isinstance(z, GapMemory) else np.asarray(z)
    n = scores.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    order = np.lexsort((np.arange(n), -scores))
    return order[:m].astype(np.int64)


def full_duality_gap(matrix: DataMatrix, state: ModelState,
                     problem: glm.ProblemDefinition,
                     targets: np.ndarray | None = None, *,
                     recompute_v: bool = False) -> float:
    """Sum of all coordinate gaps with a freshly computed w.

    Equals primal minus dual up to floating-point error. With
    `recompute_v`, certification uses v = D alpha computed from scratch
    (required in wild mode, where the incrementally maintained v drifts).
    """
    v = matrix.values @ state.alpha if recompute_v else state.v
    w = glm.w_from_v(problem, v, targets)
    dots = w @ matrix.values
    return float(np.sum(glm.gap_vector(problem, dots, state.alpha)))


def suboptimality(trace: list[TraceRow], f_star: float) -> list[Optional[float]]:
    """Attach F(alpha_t) - F* to every trace row carrying an objective.

    `f_star` must come from a high-precision reference run; a reference
    above any observed objective is rejected.
    """
    slack = 1e-9 * max(1.0, abs(f_star))
    out: list[Optional[float]] = []
    for row in trace:
        if row.objective is None:
            out.append(None)
            continue
        sub = row.objective - f_star
        if sub < -slack:
            raise ValueError(
                f"reference optimum {f_star!r} exceeds observed objective "
                f"{row.objective!r} at epoch {row.epoch}")
        row.suboptimality = max(sub, 0.0)
        out.append(row.suboptimality)
    return out


def consistency_residual(matrix: DataMatrix, state: ModelState) -> tuple[float, float]:
    """(||v - D alpha||_inf, allowed bound) for the atomic-mode invariant."""
    resid = float(np.max(np.abs(state.v - matrix.values @ state.alpha)))
    scale = float(np.sqrt(matrix.col_sq_norms.max())
                  * np.max(np.abs(state.alpha), initial=0.0))
    rel = 1e-3 if state.v.dtype == np.float32 else 1e-8
    return resid, rel * scale


def _prepared_problem(problem: glm.ProblemDefinition, targets) -> glm.ProblemDefinition:
    if problem.is_lasso and problem.lipschitz_B <= 0.0:
        return replace(problem, lipschitz_B=glm.init_lipschitz_bound(problem, targets))
    return problem


def _certified_objective(matrix, state, problem, targets, wild: bool) -> float:
    """F(alpha) for reporting; wild mode re-derives v = D alpha because the
    incrementally maintained copy may have drifted."""
    v = matrix.values @ state.alpha if wild else state.v
    return glm.primal_objective(problem, state.alpha, v, targets)


def train(matrix: DataMatrix, targets: np.ndarray | None,
          problem: glm.ProblemDefinition, cfg: TrainConfig, *,
          backend=None, mode_label: str = "hthc") -> TrainResult:
    """Run the two-task loop until the duality gap reaches `cfg.tol`, the
    epoch limit, or the timeout.

    Starts from alpha = 0, v = 0, z = 0; the first batch is the m lowest
    indices (all-ties cold start). Divergence in the solver propagates as
    DivergenceError after the scoring task is stopped.
    """
    be = kernels.get_backend(backend)
    n, d = matrix.n, matrix.d
    if problem.n != n:
        raise ValueError(f"problem.n={problem.n} does not match matrix n={n}")
    dtype = matrix.dtype
    targets_data = None
    ydots = None
    if problem.is_lasso:
        if targets is None:
            raise ValueError("lasso requires targets")
        if np.asarray(targets).shape != (d,):
            raise ValueError(f"targets must have shape ({d},)")
        targets_data = np.ascontiguousarray(targets, dtype=dtype)
        ydots = (targets_data @ matrix.values).astype(np.float64)
    problem = _prepared_problem(problem, targets_data)

    m = cfg.resolve_batch_size(n)
    deterministic = cfg.is_deterministic()
    quota = None
    if deterministic and cfg.gap.t_a > 0:
        quota = cfg.det_a_quota if cfg.det_a_quota is not None else max(
            1, round(cfg.r_tilde * n))

    state = ModelState.zeros(d, n, dtype)
    z_mem = GapMemory.zeros(n)
    mode_tag = f"{mode_label}-{cfg.solver.mode}"

    a_pool = ThreadPoolExecutor(max_workers=cfg.gap.t_a) if cfg.gap.t_a > 0 else None
    b_pool = (ThreadPoolExecutor(max_workers=cfg.solver.workers)
              if cfg.solver.workers > 1 else None)
    trace: list[TraceRow] = []
    converged = False
    stop_reason = "max_epochs"
    gap_val = math.inf
    quiescent_writes = 0
    prev_batch: set[int] = set()
    t_start = time.perf_counter()
    try:
        for t in range(cfg.max_epochs):
            # Boundary phases are single-actor: no scoring write may have
            # landed since the previous epoch's workers were joined.
            assert z_mem.updates_this_epoch == quiescent_writes, \
                "gap memory written during an epoch boundary"
            batch = select_top_m(z_mem.z, m)
            if logger.isEnabledFor(logging.DEBUG) and t > 0:
                # Membership churn: fraction of the batch newly selected.
                entered = len(set(batch.tolist()) - prev_batch)
                logger.debug("epoch %d batch churn %.3f", t, entered / m)
            prev_batch = set(batch.tolist())
            buffer = stage_batch(matrix, batch, ydots=ydots)
            snap = snapshot_for_epoch(state)
            z_mem.begin_epoch()
            stop = be.make_stop_flag()
            gap_run = start_gap_sampling(
                cfg.gap, matrix, snap, z_mem, stop, problem=problem,
                targets=targets_data, pool=a_pool, max_updates=quota,
                backend=be)
            try:
                stats = run_epoch(cfg.solver, buffer, state, problem,
                                  seed=(cfg.seed, 0xB, t), pool=b_pool,
                                  backend=be)
            finally:
                if not deterministic:
                    be.set_stop(stop)
                updates_a = gap_run.join()
            quiescent_writes = z_mem.updates_this_epoch
            if updates_a == 0 and cfg.gap.t_a > 0 and stats.wall_s >= 1e-3:
                logger.warning("scoring task performed no updates this epoch")
            elif cfg.gap.t_a > 0 and updates_a < cfg.r_tilde * n:
                logger.info("epoch %d score coverage %.3f below target %.3f",
                            t, updates_a / n, cfg.r_tilde)

            now = time.perf_counter() - t_start
            row = TraceRow(epoch=t, wall_s=now, duality_gap=None,
                           updates_a=updates_a, coverage_a=updates_a / n,
                           updates_b=stats.updates, mode=mode_tag)
            if cfg.check_consistency and not cfg.solver.wild:
                resid, bound = consistency_residual(matrix, state)
                row.consistency_inf = resid
                if resid > bound:
                    raise ConsistencyError(
                        f"||v - D alpha||_inf = {resid:.3e} exceeds {bound:.3e} "
                        f"after epoch {t}")
            evaluate = ((t + 1) % cfg.gap_eval_every == 0
                        or t + 1 == cfg.max_epochs)
            if evaluate:
                gap_val = full_duality_gap(matrix, state, problem, targets_data,
                                           recompute_v=cfg.solver.wild)
                row.duality_gap = gap_val
                row.objective = _certified_objective(matrix, state, problem,
                                                     targets_data,
                                                     cfg.solver.wild)
            trace.append(row)
            if evaluate and gap_val <= cfg.tol:
                converged = True
                stop_reason = "converged"
                break
            if cfg.timeout_s is not None and now >= cfg.timeout_s:
                stop_reason = "timeout"
                break
    finally:
        if a_pool is not None:
            a_pool.shutdown(wait=True)
        if b_pool is not None:
            b_pool.shutdown(wait=True)

    if trace and trace[-1].duality_gap is None:
        gap_val = full_duality_gap(matrix, state, problem, targets_data,
                                   recompute_v=cfg.solver.wild)
        trace[-1].duality_gap = gap_val
        trace[-1].objective = _certified_objective(matrix, state, problem,
                                                   targets_data,
                                                   cfg.solver.wild)
    final_obj = _certified_objective(matrix, state, problem, targets_data,
                                     cfg.solver.wild)
    return TrainResult(alpha=state.alpha, state=state, trace=trace,
                       converged=converged, stop_reason=stop_reason,
                       final_gap=gap_val, final_objective=final_obj,
                       wall_s=time.perf_counter() - t_start, config=cfg,
                       mode=mode_tag)
