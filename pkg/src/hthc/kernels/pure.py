"""Pure numpy fallback backend.

Mirrors the compiled extension operation for operation: same worker entry
points, same stop/cursor/stripe-lock semantics. Per-coordinate loops run in
Python with numpy dots, so this backend is slower but has no build
requirements and is the reference for cross-backend equivalence tests.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from hthc import glm

NAME = "pure"

KIND_LASSO = 0
KIND_SVM = 1


class _Cursor:
    __slots__ = ("_lock", "_next")

    def __init__(self):
        self._lock = threading.Lock()
        self._next = 0

    def next(self) -> int:
        with self._lock:
            k = self._next
            self._next += 1
            return k


class _Flag:
    __slots__ = ("value",)

    def __init__(self):
        self.value = 0


def make_cursor() -> _Cursor:
    return _Cursor()


def cursor_next(cursor: _Cursor) -> int:
    return cursor.next()


def make_stop_flag() -> _Flag:
    return _Flag()


def set_stop(flag: _Flag) -> None:
    flag.value = 1


def stop_raised(flag: _Flag) -> bool:
    return bool(flag.value)


def make_stripe_locks(d: int, stripe_len: int) -> list[threading.Lock]:
    n_stripes = (d + stripe_len - 1) // stripe_len
    return [threading.Lock() for _ in range(n_stripes)]


def dot_range(a: np.ndarray, b: np.ndarray, lo: int, hi: int) -> float:
    """Dot product of a[lo:hi] and b[lo:hi]."""
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if lo < 0 or hi > a.shape[0] or lo > hi:
        raise ValueError(f"bad range [{lo}, {hi})")
    return float(np.dot(a[lo:hi], b[lo:hi]))


def axpy_striped(v, col, delta, lo, hi, locks, stripe_len, wild) -> None:
    """v[lo:hi] += delta * col[lo:hi], holding each stripe's lock in turn."""
    if v.shape[0] != col.shape[0]:
        raise ValueError(f"length mismatch: {v.shape[0]} vs {col.shape[0]}")
    if lo < 0 or hi > v.shape[0] or lo > hi:
        raise ValueError(f"bad range [{lo}, {hi})")
    if hi == lo or delta == 0.0:
        return
    if wild:
        v[lo:hi] += delta * col[lo:hi]
        return
    s = lo // stripe_len
    a = lo
    while a < hi:
        b = min((s + 1) * stripe_len, hi)
        with locks[s]:
            v[a:b] += delta * col[a:b]
        a = b
        s += 1


def _transformed_dot(kind, raw, ydot, lnn):
    return raw - ydot if kind == KIND_LASSO else raw / lnn


def gap_worker_run(vals, wvec, alpha, z, idx, stop, counts,
                   kind, lam, bound, inv_n, lnn) -> int:
    """Score one batch of sampled coordinates into the gap memory.

    The stop flag is checked before every coordinate, never mid-update.
    Returns the number of coordinates completed.
    """
    want_counts = counts is not None and counts.shape[0] > 0
    n_draw = idx.shape[0]
    done = 0
    for k in range(n_draw):
        if stop.value:
            break
        i = int(idx[k])
        raw = float(np.dot(wvec, vals[:, i]))
        a_i = float(alpha[i])
        if kind == KIND_LASSO:
            z[i] = glm.lasso_gap_value(raw, a_i, lam, bound)
        else:
            dot = raw / lnn
            z[i] = a_i * dot - a_i * inv_n + max(0.0, inv_n - dot)
        if want_counts:
            counts[i] += 1
        done += 1
    return done


def lane_worker_run(staged, gidx, sqnorms, ydots, v, alpha, perm, cursor,
                    counts, abort_flag, locks, stripe_len, wild,
                    kind, lam, bound, inv_n, lnn):
    """One solver lane: claim coordinates off the shared cursor until the
    batch is exhausted, performing dot -> closed-form update -> striped
    v increment for each.

    Returns (updates_done, diverged, degenerate_columns).
    """
    d = staged.shape[0]
    m = perm.shape[0]
    done = 0
    degenerate = 0
    diverged = False
    while True:
        if abort_flag.value:
            break
        k = cursor.next()
        if k >= m:
            break
        j = int(perm[k])
        i = int(gidx[j])
        q = float(sqnorms[j])
        if q <= 0.0:
            degenerate += 1
            counts[i] += 1
            done += 1
            continue
        col = staged[:, j]
        raw = float(np.dot(v, col))
        a_old = float(alpha[i])
        dot = _transformed_dot(kind, raw, float(ydots[j]), lnn)
        if kind == KIND_LASSO:
            a_new = glm.lasso_new_alpha(dot, a_old, q, lam, bound)
        else:
            a_new = min(max(a_old + (inv_n - dot) * lnn / q, 0.0), 1.0)
        delta = a_new - a_old
        if not (math.isfinite(dot) and math.isfinite(delta)):
            abort_flag.value = 1
            diverged = True
            break
        alpha[i] = a_new
        if delta != 0.0:
            axpy_striped(v, col, delta, 0, d, locks, stripe_len, wild)
        counts[i] += 1
        done += 1
    return done, int(diverged), degenerate
