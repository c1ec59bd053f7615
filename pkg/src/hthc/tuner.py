"""Per-update cost profiling and constrained parameter selection.

Per-update times are measured, not modeled: the profiler runs the real
scoring-task and solver-task code paths on synthetic columns over a grid of
worker counts and vector lengths, and stores aggregate seconds per update
in a table. The selector then picks (m, t_a, t_b, v_b) minimizing the
predicted epoch time m * t_b subject to the scoring task refreshing at
least r_tilde * n scores per epoch: m * t_b / t_a >= r_tilde * n.
"""

from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from hthc import glm, kernels
from hthc.data import GapMemory, ModelState, synth_lasso
from hthc.gap_task import GapTaskConfig, Snapshot, run_gap_sampling
from hthc.solver_task import SolverConfig, run_epoch, stage_batch

logger = logging.getLogger(__name__)

PROFILE_N = 600  # columns in the synthetic profiling matrix

DEFAULT_CACHE_BYTES = 1 << 20      # per-core-pair L2 budget the chunking targets
SHORT_VECTOR_FLOOR = 130_000       # below this, one worker per vector wins


class TableError(ValueError):
    """A timing-table query cannot be answered from the measured grid."""


@dataclass
class TimingTable:
    """Measured seconds per update, keyed by worker layout and vector length."""

    entries_a: dict[tuple[int, int], float] = field(default_factory=dict)
    entries_b: dict[tuple[int, int, int], float] = field(default_factory=dict)
    host: dict = field(default_factory=dict)
    scalar_bytes: int = 4
    repetitions: int = 1

    def a_configs(self) -> list[int]:
        return sorted({t_a for t_a, _ in self.entries_a})

    def b_configs(self) -> list[tuple[int, int]]:
        return sorted({(t_b, v_b) for t_b, v_b, _ in self.entries_b})

    def t_a_seconds(self, t_a: int, d: int) -> float:
        points = sorted((dd, t) for (ta, dd), t in self.entries_a.items()
                        if ta == t_a)
        return _interp_d(points, d, f"t_a={t_a}")

    def t_b_seconds(self, t_b: int, v_b: int, d: int) -> float:
        points = sorted((dd, t) for (tb, vb, dd), t in self.entries_b.items()
                        if (tb, vb) == (t_b, v_b))
        return _interp_d(points, d, f"t_b={t_b}, v_b={v_b}")

    def to_json_dict(self) -> dict:
        return {
            "host": self.host,
            "scalar_bytes": self.scalar_bytes,
            "repetitions": self.repetitions,
            "a": [{"t_a_workers": ta, "d": d, "sec_per_update": t}
                  for (ta, d), t in sorted(self.entries_a.items())],
            "b": [{"t_b": tb, "v_b": vb, "d": d, "sec_per_update": t}
                  for (tb, vb, d), t in sorted(self.entries_b.items())],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TimingTable":
        table = cls(host=doc.get("host", {}),
                    scalar_bytes=int(doc.get("scalar_bytes", 4)),
                    repetitions=int(doc.get("repetitions", 1)))
        for row in doc.get("a", []):
            table.entries_a[(int(row["t_a_workers"]), int(row["d"]))] = \
                float(row["sec_per_update"])
        for row in doc.get("b", []):
            table.entries_b[(int(row["t_b"]), int(row["v_b"]), int(row["d"]))] = \
                float(row["sec_per_update"])
        return table

    @classmethod
    def load(cls, path) -> "TimingTable":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def _interp_d(points: list[tuple[int, float]], d: int, what: str) -> float:
    """Exact at measured d, linear between bracketing grid points."""
    if not points:
        raise TableError(f"no measurements for {what}")
    for dd, t in points:
        if dd == d:
            return t
    if d < points[0][0] or d > points[-1][0]:
        raise TableError(
            f"d={d} outside measured grid [{points[0][0]}, {points[-1][0]}] "
            f"for {what}")
    for (d0, t0), (d1, t1) in zip(points, points[1:]):
        if d0 < d < d1:
            frac = (d - d0) / (d1 - d0)
            return t0 + frac * (t1 - t0)
    raise TableError(f"cannot interpolate d={d} for {what}")


@dataclass(frozen=True)
class TunedConfig:
    """Chosen parameters plus their model-predicted epoch cost and coverage."""

    m: int
    t_a: int
    t_b: int
    v_b: int
    predicted_epoch_s: float
    predicted_coverage: float
    feasible: bool

    def to_json_dict(self) -> dict:
        return {"m": self.m, "t_a": self.t_a, "t_b": self.t_b, "v_b": self.v_b,
                "predicted_epoch_s": self.predicted_epoch_s,
                "predicted_coverage": self.predicted_coverage,
                "feasible": self.feasible}


# ---------------------------------------------------------------------------
# Profiling.
# ---------------------------------------------------------------------------

def _host_fingerprint() -> dict:
    return {"node": platform.node(), "machine": platform.machine(),
            "python": platform.python_version(),
            "cpus": os.cpu_count(),
            "backend": kernels.backend_name}


def profile_tasks(d_grid, t_a_grid, t_b_grid, v_b_grid, reps: int = 3, *,
                  n: int = PROFILE_N, seed: int = 0, a_updates: int = 4000,
                  backend=None) -> TimingTable:
    """Measure aggregate seconds per update for both tasks over the grids.

    For each vector length in `d_grid`, the scoring task is timed over
    `a_updates` total writes for each worker count in `t_a_grid`, and the
    solver is timed over full epochs for each (t_b, v_b) pair. Each entry is
    the median of `reps` repetitions. Grid points needing more workers than
    the machine has cores are skipped with a warning.
    """
    be = kernels.get_backend(backend)
    cpus = os.cpu_count() or 1
    dtype = np.dtype(np.float32)
    table = TimingTable(host=_host_fingerprint(),
                        scalar_bytes=dtype.itemsize, repetitions=reps)
    for d in sorted(set(int(x) for x in d_grid)):
        matrix, targets, _ = synth_lasso(n=n, d=d, support_frac=0.1,
                                         noise_sd=0.1, seed=seed, dtype=dtype)
        problem = glm.with_lipschitz_bound(
            glm.lasso_problem(lam=0.1, n=n), targets)
        targets = targets.astype(dtype)
        ydots = (targets @ matrix.values).astype(np.float64)

        for t_a in sorted(set(int(x) for x in t_a_grid)):
            if t_a < 1:
                continue
            if t_a > cpus:
                logger.warning("skipping t_a=%d: only %d cores", t_a, cpus)
                continue
            times = []
            with ThreadPoolExecutor(max_workers=t_a) as pool:
                # Untimed warmup spins up the pool and touches the data.
                for rep in range(reps + 1):
                    z_mem = GapMemory.zeros(n)
                    snap = Snapshot(alpha=np.zeros(n, dtype=dtype),
                                    v=np.zeros(d, dtype=dtype), epoch=0)
                    stop = be.make_stop_flag()
                    budget = a_updates if rep else max(1, a_updates // 8)
                    t0 = time.perf_counter()
                    done = run_gap_sampling(
                        GapTaskConfig(t_a=t_a, seed=seed), matrix, snap,
                        z_mem, stop, problem=problem, targets=targets,
                        pool=pool, max_updates=budget, backend=be)
                    elapsed = time.perf_counter() - t0
                    if rep and done:
                        times.append(elapsed / done)
            if times:
                table.entries_a[(t_a, d)] = median(times)

        for t_b in sorted(set(int(x) for x in t_b_grid)):
            for v_b in sorted(set(int(x) for x in v_b_grid)):
                if t_b < 1 or v_b < 1:
                    continue
                if t_b * v_b > cpus:
                    logger.warning("skipping t_b=%d, v_b=%d: only %d cores",
                                   t_b, v_b, cpus)
                    continue
                cfg = SolverConfig(t_b=t_b, v_b=v_b)
                times = []
                pool = (ThreadPoolExecutor(max_workers=cfg.workers)
                        if cfg.workers > 1 else None)
                try:
                    buf = stage_batch(matrix, np.arange(n), ydots=ydots)
                    for rep in range(reps + 1):  # first epoch is warmup
                        state = ModelState.zeros(d, n, dtype)
                        stats = run_epoch(cfg, buf, state, problem,
                                          seed=(seed, rep), pool=pool,
                                          backend=be)
                        if rep and stats.updates:
                            times.append(stats.wall_s / stats.updates)
                finally:
                    if pool is not None:
                        pool.shutdown(wait=True)
                if times:
                    table.entries_b[(t_b, v_b, d)] = median(times)
    return table


# ---------------------------------------------------------------------------
# Parameter selection.
# ---------------------------------------------------------------------------

def choose_parameters(table: TimingTable, n: int, d: int, r_tilde: float,
                      core_budget: int) -> TunedConfig:
    """Pick (m, t_a, t_b, v_b) minimizing m * t_b subject to the coverage
    constraint m * t_b / t_a >= r_tilde * n, over worker layouts fitting
    t_a + t_b * v_b <= core_budget.

    For a fixed layout the smallest feasible batch is
    ceil(r_tilde * n * t_a / t_b), capped at n. If no layout can satisfy the
    constraint even with m = n, the coverage-maximizing layout is returned
    flagged infeasible.
    """
    if core_budget < 2:
        raise ValueError("core_budget must be >= 2")
    if not (0.0 <= r_tilde <= 1.0):
        raise ValueError("r_tilde must be in [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    best = None          # (epoch_s, m, t_a, t_b, v_b, coverage)
    best_infeasible = None  # (-coverage, epoch_s, m, t_a, t_b, v_b)
    for t_a in table.a_configs():
        for t_b, v_b in table.b_configs():
            if t_a + t_b * v_b > core_budget:
                continue
            try:
                ta_s = table.t_a_seconds(t_a, d)
                tb_s = table.t_b_seconds(t_b, v_b, d)
            except TableError:
                continue
            m_min = max(1, math.ceil(r_tilde * n * ta_s / tb_s - 1e-12))
            m = min(m_min, n)
            coverage = m * tb_s / ta_s / n
            feasible = coverage >= r_tilde * (1.0 - 1e-9)
            epoch_s = m * tb_s
            if feasible:
                key = (epoch_s, m, t_a, t_b, v_b)
                if best is None or key < best:
                    best = key
                    best_cov = coverage
            else:
                full_cov = n * tb_s / ta_s / n
                key = (-full_cov, n * tb_s, n, t_a, t_b, v_b)
                if best_infeasible is None or key < best_infeasible:
                    best_infeasible = key
    if best is not None:
        epoch_s, m, t_a, t_b, v_b = best
        return TunedConfig(m=m, t_a=t_a, t_b=t_b, v_b=v_b,
                           predicted_epoch_s=epoch_s,
                           predicted_coverage=best_cov, feasible=True)
    if best_infeasible is None:
        raise TableError("no worker layout fits the core budget")
    neg_cov, epoch_s, m, t_a, t_b, v_b = best_infeasible
    return TunedConfig(m=m, t_a=t_a, t_b=t_b, v_b=v_b,
                       predicted_epoch_s=epoch_s,
                       predicted_coverage=-neg_cov, feasible=False)


def cache_chunk_length(cache_bytes: int = DEFAULT_CACHE_BYTES,
                       scalar_bytes: int = 4) -> int:
    """Vector chunk length such that the shared vector plus two columns fit
    in cache: a third of the cache, in scalars."""
    if cache_bytes <= 0 or scalar_bytes <= 0:
        raise ValueError("cache_bytes and scalar_bytes must be > 0")
    return cache_bytes // (3 * scalar_bytes)


def suggest_vb(d: int, cache_bytes: int = DEFAULT_CACHE_BYTES,
               scalar_bytes: int = 4,
               short_vector_floor: int = SHORT_VECTOR_FLOOR) -> int:
    """Workers per update from the cache-based chunking rule.

    Short vectors do not benefit from splitting, so anything below
    `short_vector_floor` gets one worker per vector.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if d < short_vector_floor:
        return 1
    chunk = cache_chunk_length(cache_bytes, scalar_bytes)
    return max(1, math.ceil(d / chunk))
