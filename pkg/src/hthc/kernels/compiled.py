"""Wrapper presenting the compiled extension behind the common backend API.

Control state uses small numpy int arrays so the extension's atomic
builtins can operate on them from threads that have dropped the GIL:
stop flags and abort flags are int32[1], work cursors are int64[1], and
stripe locks are an int32 array with one spinlock word per stripe.
"""

from __future__ import annotations

import numpy as np

from hthc.kernels import _cy

NAME = "compiled"

KIND_LASSO = 0
KIND_SVM = 1

_EMPTY_COUNTS = np.empty(0, dtype=np.int64)


def make_cursor() -> np.ndarray:
    return np.zeros(1, dtype=np.int64)


def cursor_next(cursor: np.ndarray) -> int:
    return int(_cy.cursor_next(cursor))


def make_stop_flag() -> np.ndarray:
    return np.zeros(1, dtype=np.int32)


def set_stop(flag: np.ndarray) -> None:
    _cy.set_flag(flag, 1)


def stop_raised(flag: np.ndarray) -> bool:
    return bool(_cy.load_flag(flag))


def make_stripe_locks(d: int, stripe_len: int) -> np.ndarray:
    n_stripes = (d + stripe_len - 1) // stripe_len
    return np.zeros(n_stripes, dtype=np.int32)


def dot_range(a, b, lo, hi) -> float:
    return _cy.dot_range(a, b, lo, hi)


def axpy_striped(v, col, delta, lo, hi, locks, stripe_len, wild) -> None:
    _cy.axpy_striped(v, col, float(delta), lo, hi, locks, stripe_len, wild)


def gap_worker_run(vals, wvec, alpha, z, idx, stop, counts,
                   kind, lam, bound, inv_n, lnn) -> int:
    if counts is None:
        counts = _EMPTY_COUNTS
    return _cy.gap_worker_run(vals, wvec, alpha, z, idx, stop, counts,
                              kind, lam, bound, inv_n, lnn)


def lane_worker_run(staged, gidx, sqnorms, ydots, v, alpha, perm, cursor,
                    counts, abort_flag, locks, stripe_len, wild,
                    kind, lam, bound, inv_n, lnn):
    return _cy.lane_worker_run(staged, gidx, sqnorms, ydots, v, alpha, perm,
                               cursor, counts, abort_flag, locks, stripe_len,
                               wild, kind, lam, bound, inv_n, lnn)
