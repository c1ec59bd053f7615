"""Batch solver task: asynchronous parallel coordinate descent over a
selected coordinate set.

An epoch processes each coordinate of the batch exactly once. `t_b` updater
lanes pull the next unprocessed coordinate from a shared cursor; each update
reads the live shared vector v (values possibly mid-update from other lanes,
which is the intended asynchrony), applies the closed-form coordinate step,
and increments v under stripe-granular mutual exclusion. With `v_b > 1`,
each update is additionally split across a group of v_b workers that meet
at three rendezvous points per coordinate: after the shared partial-sum
reset, after partial dot accumulation, and after the step size is published.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from hthc import glm, kernels
from hthc.data import DataMatrix, ModelState

logger = logging.getLogger(__name__)

ATOMIC = "atomic"
WILD = "wild"

DEFAULT_STRIPE_LEN = 1024


class DivergenceError(RuntimeError):
    """A lane produced a non-finite update; the epoch was aborted."""

    def __init__(self, t_b: int):
        super().__init__(
            f"non-finite coordinate update with t_b={t_b} parallel lanes; "
            "reduce t_b (or switch to atomic mode) and retry")
        self.t_b = t_b


@dataclass(frozen=True)
class SolverConfig:
    """Worker layout for the solver task.

    t_b parallel coordinate updates, each split across v_b workers; `mode`
    selects stripe-locked (atomic) or unsynchronized (wild) updates of the
    shared vector.
    """

    t_b: int = 1
    v_b: int = 1
    mode: str = ATOMIC
    stripe_len: int = DEFAULT_STRIPE_LEN

    def __post_init__(self):
        if self.t_b < 1:
            raise ValueError("t_b must be >= 1")
        if self.v_b < 1:
            raise ValueError("v_b must be >= 1")
        if self.mode not in (ATOMIC, WILD):
            raise ValueError(f"mode must be 'atomic' or 'wild', got {self.mode!r}")
        if self.stripe_len < 1:
            raise ValueError("stripe_len must be >= 1")

    @property
    def workers(self) -> int:
        return self.t_b * self.v_b

    @property
    def wild(self) -> bool:
        return self.mode == WILD


@dataclass
class BatchBuffer:
    """Contiguous staging copy of the selected columns (the solver's arena)."""

    indices: np.ndarray        # global coordinate ids, int64, length m
    staged_columns: np.ndarray  # (d, m), column-major copy
    staged_sq_norms: np.ndarray  # float64, length m
    staged_ydots: np.ndarray   # float64 <y, d_i> per staged column (0 when unused)

    @property
    def m(self) -> int:
        return self.indices.shape[0]


@dataclass
class EpochStats:
    updates: int
    wall_s: float
    degenerate: int = 0


def stage_batch(matrix: DataMatrix, indices, ydots: np.ndarray | None = None) -> BatchBuffer:
    """Copy the selected columns (and their norms) into a contiguous buffer.

    Indices must be distinct and in range. `ydots` is the optional full
    <y, d_i> vector; the staged slice keeps lane updates free of any access
    to the targets.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] < 1:
        raise ValueError("indices must be a non-empty 1-D sequence")
    if idx.min() < 0 or idx.max() >= matrix.n:
        raise ValueError(f"index out of range [0, {matrix.n})")
    if np.unique(idx).shape[0] != idx.shape[0]:
        raise ValueError("duplicate indices in batch")
    staged = np.asfortranarray(matrix.values[:, idx])
    norms = np.ascontiguousarray(matrix.col_sq_norms[idx], dtype=np.float64)
    if ydots is None:
        yd = np.zeros(idx.shape[0], dtype=np.float64)
    else:
        yd = np.ascontiguousarray(np.asarray(ydots, dtype=np.float64)[idx])
    return BatchBuffer(indices=idx, staged_columns=staged,
                       staged_sq_norms=norms, staged_ydots=yd)


def chunk_bounds(d: int, parts: int) -> list[tuple[int, int]]:
    """Partition [0, d) into `parts` contiguous near-equal ranges."""
    if parts < 1:
        raise ValueError("parts must be >= 1")
    base, rem = divmod(d, parts)
    bounds = []
    lo = 0
    for k in range(parts):
        hi = lo + base + (1 if k < rem else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def split_dot(w_source: np.ndarray, column: np.ndarray, v_b: int,
              backend=None) -> float:
    """Dot product computed as v_b ordered chunk partials, as the update
    groups do. Agrees with a sequential dot within accumulation-order
    tolerance."""
    be = kernels.get_backend(backend)
    if w_source.shape[0] != column.shape[0]:
        raise ValueError(
            f"length mismatch: {w_source.shape[0]} vs {column.shape[0]}")
    partials = [be.dot_range(w_source, column, lo, hi)
                for lo, hi in chunk_bounds(w_source.shape[0], v_b)]
    total = 0.0
    for part in partials:
        total += part
    return total


def apply_delta(v: np.ndarray, column: np.ndarray, delta: float,
                mode: str = ATOMIC, stripe_len: int = DEFAULT_STRIPE_LEN,
                locks=None, backend=None) -> None:
    """v += delta * column under the stripe-exclusivity contract.

    Concurrent callers in atomic mode must share `locks` (from the backend's
    `make_stripe_locks`); when omitted, a private table is created, which is
    only meaningful for sequential use.
    """
    if not math.isfinite(delta):
        raise ValueError("delta must be finite")
    be = kernels.get_backend(backend)
    if locks is None:
        locks = be.make_stripe_locks(v.shape[0], stripe_len)
    be.axpy_striped(v, column, float(delta), 0, v.shape[0], locks,
                    stripe_len, mode == WILD)


# ---------------------------------------------------------------------------
# Epoch driver.
# ---------------------------------------------------------------------------

class _GroupContext:
    """Shared state of one v_b-sized update group."""

    __slots__ = ("barrier", "partials", "j", "delta")

    def __init__(self, v_b: int):
        self.barrier = threading.Barrier(v_b)
        self.partials = np.zeros(v_b, dtype=np.float64)
        self.j = -1
        self.delta = 0.0


def run_epoch(cfg: SolverConfig, buffer: BatchBuffer, state: ModelState,
              problem: glm.ProblemDefinition, *, seed=0, pool=None,
              counts: np.ndarray | None = None, backend=None) -> EpochStats:
    """Process every batch coordinate exactly once with t_b x v_b workers.

    The batch order is a seeded random permutation. Raises DivergenceError
    on a non-finite update. Increments state.epoch on success. `counts`, if
    given, receives one increment per processed coordinate (instrumentation
    for exactly-once checks).
    """
    be = kernels.get_backend(backend)
    d = state.v.shape[0]
    if buffer.staged_columns.shape[0] != d:
        raise ValueError("buffer and state dimension mismatch")
    m = buffer.m
    perm = np.random.default_rng(seed).permutation(m).astype(np.int64)
    if counts is None:
        counts = np.zeros(state.alpha.shape[0], dtype=np.int64)
    params = glm.kernel_params(problem)
    locks = be.make_stripe_locks(d, cfg.stripe_len)
    abort = be.make_stop_flag()
    own_pool = None
    t0 = time.perf_counter()
    try:
        if cfg.v_b == 1:
            cursor = be.make_cursor()
            args = (buffer.staged_columns, buffer.indices,
                    buffer.staged_sq_norms, buffer.staged_ydots,
                    state.v, state.alpha, perm, cursor, counts, abort,
                    locks, cfg.stripe_len, cfg.wild, *params)
            if cfg.t_b == 1:
                results = [be.lane_worker_run(*args)]
            else:
                if pool is None:
                    own_pool = ThreadPoolExecutor(max_workers=cfg.t_b)
                    pool = own_pool
                futures = [pool.submit(be.lane_worker_run, *args)
                           for _ in range(cfg.t_b)]
                results = [f.result() for f in futures]
        else:
            results = _run_grouped(cfg, be, buffer, state, perm, counts,
                                   abort, locks, params, pool)
    finally:
        if own_pool is not None:
            own_pool.shutdown(wait=True)
    wall = time.perf_counter() - t0
    done = sum(r[0] for r in results)
    degenerate = sum(r[2] for r in results)
    if any(r[1] for r in results):
        raise DivergenceError(cfg.t_b)
    if degenerate:
        logger.warning("epoch skipped %d degenerate zero-norm columns", degenerate)
    state.epoch += 1
    return EpochStats(updates=done, wall_s=wall, degenerate=degenerate)


def _run_grouped(cfg, be, buffer, state, perm, counts, abort, locks, params, pool):
    """t_b groups of v_b workers; each group shares one coordinate update."""
    d = state.v.shape[0]
    bounds = chunk_bounds(d, cfg.v_b)
    shared_cursor = _SharedCursor()
    own_pool = None
    if pool is None:
        own_pool = ThreadPoolExecutor(max_workers=cfg.workers)
        pool = own_pool
    elif getattr(pool, "_max_workers", cfg.workers) < cfg.workers:
        # An undersized pool would park group members forever at a barrier.
        raise ValueError(
            f"pool has {pool._max_workers} threads; t_b*v_b={cfg.workers} required")
    futures = []
    try:
        for _ in range(cfg.t_b):
            ctx = _GroupContext(cfg.v_b)
            for rank in range(cfg.v_b):
                futures.append(pool.submit(
                    _group_worker, be, ctx, rank, bounds[rank], buffer, state,
                    perm, shared_cursor, counts, abort, locks,
                    cfg.stripe_len, cfg.wild, params))
        return [f.result() for f in futures]
    finally:
        if own_pool is not None:
            own_pool.shutdown(wait=True)


class _SharedCursor:
    __slots__ = ("_lock", "_next")

    def __init__(self):
        self._lock = threading.Lock()
        self._next = 0

    def next(self) -> int:
        with self._lock:
            k = self._next
            self._next += 1
            return k


def _group_worker(be, ctx, rank, chunk, buffer, state, perm, cursor, counts,
                  abort, locks, stripe_len, wild, params):
    """One member of an update group. Rank 0 leads: claims the coordinate,
    resets the shared partial sums, computes the step from the ordered
    partials, and owns the alpha write. All ranks compute their chunk of the
    dot and apply their chunk of the v increment."""
    kind, lam, bound, inv_n, lnn = params
    lo, hi = chunk
    m = perm.shape[0]
    staged = buffer.staged_columns
    v, alpha = state.v, state.alpha
    done = 0
    degenerate = 0
    diverged = False
    try:
        while True:
            if rank == 0:
                if be.stop_raised(abort):
                    ctx.j = -1
                else:
                    k = cursor.next()
                    ctx.j = int(perm[k]) if k < m else -1
                ctx.partials[:] = 0.0
            ctx.barrier.wait()  # rendezvous 1: accumulator reset, j published
            j = ctx.j
            if j < 0:
                break
            col = staged[:, j]
            ctx.partials[rank] = be.dot_range(v, col, lo, hi)
            ctx.barrier.wait()  # rendezvous 2: all partials available
            if rank == 0:
                raw = 0.0
                for part in ctx.partials:
                    raw += float(part)
                i = int(buffer.indices[j])
                q = float(buffer.staged_sq_norms[j])
                if q <= 0.0:
                    degenerate += 1
                    counts[i] += 1
                    done += 1
                    ctx.delta = 0.0
                else:
                    a_old = float(alpha[i])
                    if kind == glm.KIND_CODES[glm.LASSO]:
                        dot = raw - float(buffer.staged_ydots[j])
                        a_new = glm.lasso_new_alpha(dot, a_old, q, lam, bound)
                    else:
                        dot = raw / lnn
                        a_new = min(max(a_old + (inv_n - dot) * lnn / q, 0.0), 1.0)
                    delta = a_new - a_old
                    if not (math.isfinite(dot) and math.isfinite(delta)):
                        be.set_stop(abort)
                        ctx.delta = math.nan
                    else:
                        alpha[i] = a_new
                        counts[i] += 1
                        done += 1
                        ctx.delta = delta
            ctx.barrier.wait()  # rendezvous 3: step published
            delta = ctx.delta
            if math.isnan(delta):
                diverged = True
                break
            if delta != 0.0:
                be.axpy_striped(v, col, delta, lo, hi, locks, stripe_len, wild)
    except Exception:
        ctx.barrier.abort()  # unblock siblings before propagating
        raise
    return done, int(diverged), degenerate
