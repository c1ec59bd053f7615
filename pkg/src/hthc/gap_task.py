"""Gap-scoring task: refresh stale coordinate importance scores.

Workers repeatedly sample coordinates uniformly at random and recompute
their duality gaps against a frozen epoch snapshot of (alpha, v), writing
the scores into the shared gap memory. Writes race benignly: any two
writers of the same entry store idempotent recomputations from the same
snapshot, and each store is a single complete scalar write. A worker checks
the stop signal between coordinate updates, never mid-update, so the signal
is observed after at most one further update.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from hthc import glm, kernels
from hthc.data import DataMatrix, GapMemory, ModelState

DEFAULT_DRAW_BATCH = 256


@dataclass(frozen=True)
class GapTaskConfig:
    """Worker count and sampling seed for the scoring task."""

    t_a: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.t_a < 0:
            raise ValueError("t_a must be >= 0")


@dataclass(frozen=True)
class Snapshot:
    """Frozen epoch-boundary copy of (alpha, v); later solver-side mutation
    does not affect readers."""

    alpha: np.ndarray
    v: np.ndarray
    epoch: int


def snapshot_for_epoch(state: ModelState) -> Snapshot:
    """Immutable copy of the model state, taken while the solver is quiescent."""
    if state.alpha.shape[0] < 1:
        raise ValueError("cannot snapshot an empty model")
    return Snapshot(alpha=state.alpha.copy(), v=state.v.copy(), epoch=state.epoch)


class GapRun:
    """Handle for an in-flight scoring run; `join` blocks and returns the
    total number of gap writes performed."""

    def __init__(self, futures):
        self._futures = futures

    def join(self) -> int:
        return sum(f.result() for f in self._futures)


def start_gap_sampling(cfg: GapTaskConfig, matrix: DataMatrix, frozen: Snapshot,
                       z_mem: GapMemory, stop, *, problem: glm.ProblemDefinition,
                       targets: np.ndarray | None, pool: ThreadPoolExecutor | None,
                       max_updates: int | None = None,
                       draw_batch: int = DEFAULT_DRAW_BATCH,
                       hit_counts: np.ndarray | None = None,
                       backend=None) -> GapRun:
    """Launch cfg.t_a scoring workers on `pool` and return without waiting.

    The pool must have at least t_a threads. `max_updates`, when given,
    caps the total number of writes across workers (used for deterministic
    runs and profiling); otherwise workers run until the stop signal.
    `hit_counts` of shape (t_a, n) collects per-worker sampling frequencies.
    """
    be = kernels.get_backend(backend)
    if cfg.t_a == 0:
        return GapRun([])
    if pool is None:
        raise ValueError("a worker pool is required when t_a > 0")
    if hit_counts is not None and hit_counts.shape != (cfg.t_a, matrix.n):
        raise ValueError(f"hit_counts must have shape ({cfg.t_a}, {matrix.n})")
    if problem.is_lasso:
        if targets is None:
            raise ValueError("lasso requires targets")
        wvec = frozen.v - np.asarray(targets, dtype=frozen.v.dtype)
    else:
        # The 1/(lam n^2) factor is folded into the scalar gap map.
        wvec = frozen.v
    params = glm.kernel_params(problem)
    budgets = _worker_budgets(cfg.t_a, max_updates)
    futures = []
    for wid in range(cfg.t_a):
        counts = hit_counts[wid] if hit_counts is not None else None
        futures.append(pool.submit(
            _gap_worker, be, matrix.values, wvec, frozen.alpha, z_mem,
            stop, (cfg.seed, 0xA, frozen.epoch, wid), budgets[wid],
            draw_batch, counts, params))
    return GapRun(futures)


def run_gap_sampling(cfg: GapTaskConfig, matrix: DataMatrix, frozen: Snapshot,
                     z_mem: GapMemory, stop, *, problem: glm.ProblemDefinition,
                     targets: np.ndarray | None = None,
                     pool: ThreadPoolExecutor | None = None,
                     max_updates: int | None = None,
                     draw_batch: int = DEFAULT_DRAW_BATCH,
                     hit_counts: np.ndarray | None = None,
                     backend=None) -> int:
    """Run the scoring task to quiescence and return the write count.

    Blocks until every worker has observed the stop signal (or exhausted
    its budget). An immediately raised stop yields 0 writes.
    """
    own_pool = None
    if pool is None and cfg.t_a > 0:
        own_pool = ThreadPoolExecutor(max_workers=cfg.t_a)
        pool = own_pool
    try:
        run = start_gap_sampling(
            cfg, matrix, frozen, z_mem, stop, problem=problem, targets=targets,
            pool=pool, max_updates=max_updates, draw_batch=draw_batch,
            hit_counts=hit_counts, backend=backend)
        return run.join()
    finally:
        if own_pool is not None:
            own_pool.shutdown(wait=True)


def _worker_budgets(t_a: int, max_updates: int | None) -> list[int | None]:
    if max_updates is None:
        return [None] * t_a
    base, rem = divmod(max_updates, t_a)
    return [base + (1 if wid < rem else 0) for wid in range(t_a)]


def _gap_worker(be, vals, wvec, alpha_snap, z_mem, stop, seed, budget,
                draw_batch, counts, params):
    """Sample-and-score loop of one worker: draw index batches from an
    independent seeded stream, score them through the kernel (which checks
    the stop flag between coordinates), and flush write counts per batch."""
    rng = np.random.default_rng(seed)
    n = vals.shape[1]
    total = 0
    while not be.stop_raised(stop):
        want = draw_batch if budget is None else min(draw_batch, budget - total)
        if want <= 0:
            break
        idx = rng.integers(0, n, size=want, dtype=np.int64)
        done = be.gap_worker_run(vals, wvec, alpha_snap, z_mem.z, idx, stop,
                                 counts, *params)
        if done:
            z_mem.record_writes(done)
            total += done
        if done < want:
            break
    return total
