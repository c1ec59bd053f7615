"""Reference solvers: the single-task baseline and a sequential ground
truth used as the oracle in tests and for suboptimality reporting.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from hthc import glm, kernels
from hthc.coordinator import (ConsistencyError, TraceRow, TrainResult,
                              _certified_objective, consistency_residual,
                              full_duality_gap)
from hthc.data import DataMatrix, ModelState
from hthc.solver_task import SolverConfig, run_epoch, stage_batch


@dataclass(frozen=True)
class StopConfig:
    """Stopping criteria shared by the baseline trainer."""

    tol: float = 1e-5
    max_epochs: int = 1000
    timeout_s: Optional[float] = None
    seed: int = 0
    gap_eval_every: int = 1
    check_consistency: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.gap_eval_every < 1:
            raise ValueError("gap_eval_every must be >= 1")


def st_train(matrix: DataMatrix, targets: np.ndarray | None,
             problem: glm.ProblemDefinition, solver_cfg: SolverConfig,
             stop_cfg: StopConfig, *, backend=None) -> TrainResult:
    """Single-task baseline: every epoch updates all n coordinates exactly
    once in a fresh seeded random permutation, using the same solver
    machinery as the two-task loop but with no gap memory and no scoring
    task.
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
        targets_data = np.ascontiguousarray(targets, dtype=dtype)
        ydots = (targets_data @ matrix.values).astype(np.float64)
        if problem.lipschitz_B <= 0.0:
            problem = glm.with_lipschitz_bound(problem, targets_data)

    state = ModelState.zeros(d, n, dtype)
    buffer = stage_batch(matrix, np.arange(n), ydots=ydots)
    pool = (ThreadPoolExecutor(max_workers=solver_cfg.workers)
            if solver_cfg.workers > 1 else None)
    mode_tag = f"st-{solver_cfg.mode}"
    trace: list[TraceRow] = []
    converged = False
    stop_reason = "max_epochs"
    gap_val = math.inf
    t_start = time.perf_counter()
    try:
        for t in range(stop_cfg.max_epochs):
            stats = run_epoch(solver_cfg, buffer, state, problem,
                              seed=(stop_cfg.seed, 0x57, t), pool=pool,
                              backend=be)
            now = time.perf_counter() - t_start
            row = TraceRow(epoch=t, wall_s=now, duality_gap=None,
                           updates_a=0, coverage_a=0.0,
                           updates_b=stats.updates, mode=mode_tag)
            if stop_cfg.check_consistency and not solver_cfg.wild:
                resid, bound = consistency_residual(matrix, state)
                row.consistency_inf = resid
                if resid > bound:
                    raise ConsistencyError(
                        f"||v - D alpha||_inf = {resid:.3e} exceeds {bound:.3e} "
                        f"after epoch {t}")
            evaluate = ((t + 1) % stop_cfg.gap_eval_every == 0
                        or t + 1 == stop_cfg.max_epochs)
            if evaluate:
                gap_val = full_duality_gap(matrix, state, problem, targets_data,
                                           recompute_v=solver_cfg.wild)
                row.duality_gap = gap_val
                row.objective = _certified_objective(matrix, state, problem,
                                                     targets_data,
                                                     solver_cfg.wild)
            trace.append(row)
            if evaluate and gap_val <= stop_cfg.tol:
                converged = True
                stop_reason = "converged"
                break
            if stop_cfg.timeout_s is not None and now >= stop_cfg.timeout_s:
                stop_reason = "timeout"
                break
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    if trace and trace[-1].duality_gap is None:
        gap_val = full_duality_gap(matrix, state, problem, targets_data,
                                   recompute_v=solver_cfg.wild)
        trace[-1].duality_gap = gap_val
        trace[-1].objective = _certified_objective(matrix, state, problem,
                                                   targets_data,
                                                   solver_cfg.wild)
    final_obj = _certified_objective(matrix, state, problem, targets_data,
                                     solver_cfg.wild)
    return TrainResult(alpha=state.alpha, state=state, trace=trace,
                       converged=converged, stop_reason=stop_reason,
                       final_gap=gap_val, final_objective=final_obj,
                       wall_s=time.perf_counter() - t_start, config=None,
                       mode=mode_tag)


@dataclass
class ReferenceResult:
    alpha: np.ndarray
    f_star: float
    gap: float
    passes: int
    converged: bool


def reference_scd(matrix: DataMatrix, targets: np.ndarray | None,
                  problem: glm.ProblemDefinition, tol: float = 1e-9,
                  max_passes: int = 10000) -> ReferenceResult:
    """Strictly sequential cyclic coordinate descent in double precision.

    Ground truth for the parallel solvers: exact v maintenance with a full
    recompute every 100 passes to wash out drift, run until the duality gap
    reaches `tol`. Deliberately independent of the worker/kernel machinery
    (plain numpy throughout).
    """
    vals = matrix.values.astype(np.float64, copy=False)
    n, d = matrix.n, matrix.d
    if problem.n != n:
        raise ValueError(f"problem.n={problem.n} does not match matrix n={n}")
    y = None
    ydots = np.zeros(n)
    if problem.is_lasso:
        if targets is None:
            raise ValueError("lasso requires targets")
        y = np.asarray(targets, dtype=np.float64)
        ydots = y @ vals
        if problem.lipschitz_B <= 0.0:
            problem = glm.with_lipschitz_bound(problem, y)
    sq_norms = matrix.col_sq_norms
    lnn = problem.lam * n * n

    alpha = np.zeros(n)
    v = np.zeros(d)
    gap = math.inf
    converged = False
    passes = 0
    for p_idx in range(max_passes):
        for i in range(n):
            col = vals[:, i]
            raw = float(np.dot(v, col))
            dot = raw - ydots[i] if problem.is_lasso else raw / lnn
            delta = glm.update_i(problem, dot, float(alpha[i]), float(sq_norms[i]))
            if delta != 0.0:
                alpha[i] += delta
                v += delta * col
        passes = p_idx + 1
        if passes % 100 == 0:
            v = vals @ alpha
        w = glm.w_from_v(problem, v, y)
        dots = w @ vals
        gap = float(np.sum(glm.gap_vector(problem, dots, alpha)))
        if gap <= tol:
            converged = True
            break
    f_star = glm.primal_objective(problem, alpha, v, y)
    return ReferenceResult(alpha=alpha, f_star=f_star, gap=gap,
                           passes=passes, converged=converged)
