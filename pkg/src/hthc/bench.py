"""Backend benchmark: times the hot kernels on the compiled extension and
the numpy fallback side by side. Report-only; numbers depend on the host.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from hthc import glm, kernels
from hthc.data import GapMemory, ModelState, synth_lasso
from hthc.gap_task import GapTaskConfig, Snapshot, run_gap_sampling
from hthc.solver_task import SolverConfig, run_epoch, stage_batch


@dataclass
class BenchRow:
    backend: str
    op: str
    per_op_s: float
    detail: str = ""


def bench_backends(d: int = 100_000, n: int = 600, updates: int = 2000,
                   seed: int = 0) -> list[BenchRow]:
    """Per-op timings for the column dot, one scoring pass, and one solver
    epoch, on every available backend."""
    rows: list[BenchRow] = []
    matrix, targets, _ = synth_lasso(n=n, d=d, support_frac=0.1, noise_sd=0.1,
                                     seed=seed, dtype=np.float32)
    problem = glm.with_lipschitz_bound(glm.lasso_problem(0.1, n), targets)
    targets32 = targets.astype(np.float32)
    ydots = (targets32 @ matrix.values).astype(np.float64)
    col = np.ascontiguousarray(matrix.values[:, 0])
    w = np.ascontiguousarray(targets32)

    for name in kernels.available_backends():
        be = kernels.get_backend(name)

        reps = max(10, min(2000, 20_000_000 // max(d, 1)))
        t0 = time.perf_counter()
        acc = 0.0
        for _ in range(reps):
            acc += be.dot_range(w, col, 0, d)
        dt = (time.perf_counter() - t0) / reps
        rows.append(BenchRow(name, "column_dot", dt, f"d={d}, acc={acc:.3g}"))

        z_mem = GapMemory.zeros(n)
        snap = Snapshot(alpha=np.zeros(n, dtype=np.float32),
                        v=np.zeros(d, dtype=np.float32), epoch=0)
        stop = be.make_stop_flag()
        t0 = time.perf_counter()
        done = run_gap_sampling(GapTaskConfig(t_a=1, seed=seed), matrix, snap,
                                z_mem, stop, problem=problem, targets=targets32,
                                max_updates=updates, backend=be)
        dt = (time.perf_counter() - t0) / max(done, 1)
        rows.append(BenchRow(name, "gap_score", dt, f"writes={done}"))

        state = ModelState.zeros(d, n, np.float32)
        buf = stage_batch(matrix, np.arange(n), ydots=ydots)
        stats = run_epoch(SolverConfig(), buf, state, problem, seed=seed,
                          backend=be)
        rows.append(BenchRow(name, "solver_update",
                             stats.wall_s / max(stats.updates, 1),
                             f"epoch of {stats.updates}"))
    return rows


def format_report(rows: list[BenchRow]) -> str:
    lines = [f"{'backend':<10} {'op':<14} {'sec/op':>12}  detail"]
    for row in rows:
        lines.append(f"{row.backend:<10} {row.op:<14} {row.per_op_s:>12.3e}  "
                     f"{row.detail}")
    slow, fast = {}, {}
    for row in rows:
        (fast if row.backend == "compiled" else slow)[row.op] = row.per_op_s
    for op in sorted(set(slow) & set(fast)):
        lines.append(f"speedup {op}: {slow[op] / fast[op]:.1f}x")
    return "\n".join(lines)
