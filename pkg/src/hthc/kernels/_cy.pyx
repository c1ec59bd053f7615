# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: column dot products, gap-score sampling, solver lanes,
and striped updates of the shared vector.

Every worker entry point releases the GIL, so Python threads calling in run
truly in parallel. Small shared control state (stop flags, work cursors,
stripe locks) lives in numpy int arrays and is accessed through GCC/Clang
atomic builtins declared below.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, fmax, isfinite


cdef extern from *:
    """
    #include <stdint.h>

    static inline void hthc_lock(volatile int32_t *l) {
        while (__atomic_exchange_n(l, 1, __ATOMIC_ACQUIRE)) {
            while (__atomic_load_n(l, __ATOMIC_RELAXED)) { /* spin */ }
        }
    }

    static inline void hthc_unlock(volatile int32_t *l) {
        __atomic_store_n(l, 0, __ATOMIC_RELEASE);
    }

    static inline int64_t hthc_fetch_inc(volatile int64_t *c) {
        return __atomic_fetch_add(c, 1, __ATOMIC_ACQ_REL);
    }

    static inline int32_t hthc_load32(const volatile int32_t *f) {
        return __atomic_load_n(f, __ATOMIC_ACQUIRE);
    }

    static inline void hthc_store32(volatile int32_t *f, int32_t x) {
        __atomic_store_n(f, x, __ATOMIC_RELEASE);
    }
    """
    void hthc_lock(cnp.int32_t *l) nogil
    void hthc_unlock(cnp.int32_t *l) nogil
    cnp.int64_t hthc_fetch_inc(cnp.int64_t *c) nogil
    cnp.int32_t hthc_load32(const cnp.int32_t *f) nogil
    void hthc_store32(cnp.int32_t *f, cnp.int32_t x) nogil


ctypedef fused real:
    float
    double

# Scalar-map codes shared with the Python side.
DEF KIND_LASSO = 0
DEF KIND_SVM = 1


cdef inline double _dot(const real *a, const real *b, Py_ssize_t n) noexcept nogil:
    # Eight independent accumulator lanes: breaks the add dependency chain
    # and lets the compiler vectorize each lane without reassociating.
    # Accumulation is double regardless of the storage precision.
    cdef double lanes[8]
    cdef double total = 0.0
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t j
    cdef Py_ssize_t n8 = n - (n & 7)
    for j in range(8):
        lanes[j] = 0.0
    while k < n8:
        for j in range(8):
            lanes[j] += (<double> a[k + j]) * (<double> b[k + j])
        k += 8
    while k < n:
        total += (<double> a[k]) * (<double> b[k])
        k += 1
    for j in range(8):
        total += lanes[j]
    return total


cdef inline double _soft(double x, double tau) noexcept nogil:
    if x > tau:
        return x - tau
    if x < -tau:
        return x + tau
    return 0.0


cdef inline double _gap_scalar(int kind, double raw, double alpha_i,
                               double lam, double bound, double inv_n,
                               double lnn) noexcept nogil:
    cdef double dot
    if kind == KIND_LASSO:
        dot = raw
        return alpha_i * dot + lam * fabs(alpha_i) + bound * fmax(0.0, fabs(dot) - lam)
    dot = raw / lnn
    return alpha_i * dot - alpha_i * inv_n + fmax(0.0, inv_n - dot)


cdef inline double _new_alpha(int kind, double dot, double alpha_i,
                              double q, double lam, double bound, double inv_n,
                              double lnn) noexcept nogil:
    cdef double a_new
    if kind == KIND_LASSO:
        a_new = _soft(alpha_i - dot / q, lam / q)
        if a_new > bound:
            a_new = bound
        elif a_new < -bound:
            a_new = -bound
        return a_new
    a_new = alpha_i + (inv_n - dot) * lnn / q
    if a_new < 0.0:
        a_new = 0.0
    elif a_new > 1.0:
        a_new = 1.0
    return a_new


cdef inline void _axpy_striped(real *v, const real *col, double delta,
                               Py_ssize_t lo, Py_ssize_t hi,
                               cnp.int32_t *locks, Py_ssize_t stripe_len,
                               bint wild) noexcept nogil:
    # The increment runs in storage precision (matching the numpy fallback)
    # so the loop vectorizes cleanly.
    cdef real step = <real> delta
    cdef Py_ssize_t s, a, b, k
    if wild:
        for k in range(lo, hi):
            v[k] += step * col[k]
        return
    s = lo // stripe_len
    a = lo
    while a < hi:
        b = (s + 1) * stripe_len
        if b > hi:
            b = hi
        hthc_lock(&locks[s])
        for k in range(a, b):
            v[k] += step * col[k]
        hthc_unlock(&locks[s])
        a = b
        s += 1


def dot_range(const real[::1] a, const real[::1] b, Py_ssize_t lo, Py_ssize_t hi):
    """Dot product of a[lo:hi] and b[lo:hi] with double accumulation."""
    if a.shape[0] != b.shape[0]:
        raise ValueError("length mismatch: %d vs %d" % (a.shape[0], b.shape[0]))
    if lo < 0 or hi > a.shape[0] or lo > hi:
        raise ValueError("bad range [%d, %d)" % (lo, hi))
    if hi == lo:
        return 0.0
    cdef double out
    with nogil:
        out = _dot(&a[lo], &b[lo], hi - lo)
    return out


def axpy_striped(real[::1] v, const real[::1] col, double delta,
                 Py_ssize_t lo, Py_ssize_t hi, cnp.int32_t[::1] locks,
                 Py_ssize_t stripe_len, bint wild):
    """v[lo:hi] += delta * col[lo:hi], holding each stripe's lock in turn.

    In wild mode the stores are plain unsynchronized read-modify-writes.
    """
    if v.shape[0] != col.shape[0]:
        raise ValueError("length mismatch: %d vs %d" % (v.shape[0], col.shape[0]))
    if lo < 0 or hi > v.shape[0] or lo > hi:
        raise ValueError("bad range [%d, %d)" % (lo, hi))
    if hi == lo or delta == 0.0:
        return
    with nogil:
        _axpy_striped(&v[0], &col[0], delta, lo, hi,
                      &locks[0] if not wild else NULL, stripe_len, wild)


def cursor_next(cnp.int64_t[::1] cursor):
    """Atomically claim and return the next work-queue position."""
    return hthc_fetch_inc(&cursor[0])


def load_flag(cnp.int32_t[::1] flag):
    return hthc_load32(&flag[0])


def set_flag(cnp.int32_t[::1] flag, cnp.int32_t value):
    hthc_store32(&flag[0], value)


def gap_worker_run(const real[::1, :] vals, const real[::1] wvec,
                   const real[::1] alpha, double[::1] z,
                   const cnp.int64_t[::1] idx, cnp.int32_t[::1] stop,
                   cnp.int64_t[::1] counts,
                   int kind, double lam, double bound, double inv_n, double lnn):
    """Score one batch of sampled coordinates into the gap memory.

    Walks `idx`, writing z[i] = gap(i) computed against the frozen (alpha, w)
    pair. The stop flag is checked before every coordinate, never mid-update.
    Returns the number of coordinates completed.
    """
    cdef Py_ssize_t d = vals.shape[0]
    cdef Py_ssize_t nidx = idx.shape[0]
    cdef bint want_counts = counts.shape[0] > 0
    cdef Py_ssize_t k, i
    cdef double raw
    cdef Py_ssize_t done = 0
    with nogil:
        for k in range(nidx):
            if hthc_load32(&stop[0]):
                break
            i = idx[k]
            raw = _dot(&wvec[0], &vals[0, i], d)
            z[i] = _gap_scalar(kind, raw, <double> alpha[i], lam, bound, inv_n, lnn)
            if want_counts:
                counts[i] += 1
            done += 1
    return done


def lane_worker_run(const real[::1, :] staged, const cnp.int64_t[::1] gidx,
                    const double[::1] sqnorms, const double[::1] ydots,
                    real[::1] v, real[::1] alpha,
                    const cnp.int64_t[::1] perm, cnp.int64_t[::1] cursor,
                    cnp.int64_t[::1] counts, cnp.int32_t[::1] abort_flag,
                    cnp.int32_t[::1] locks, Py_ssize_t stripe_len, bint wild,
                    int kind, double lam, double bound, double inv_n, double lnn):
    """One solver lane: claim coordinates off the shared cursor until the
    batch is exhausted, performing dot -> closed-form update -> striped
    v increment for each.

    Returns (updates_done, diverged, degenerate_columns). On a non-finite
    update the lane raises the shared abort flag so sibling lanes stop at
    their next claim.
    """
    cdef Py_ssize_t d = staged.shape[0]
    cdef Py_ssize_t m = perm.shape[0]
    cdef Py_ssize_t k, j, i
    cdef double raw, dot, q, a_old, a_new, delta
    cdef Py_ssize_t done = 0
    cdef Py_ssize_t degenerate = 0
    cdef bint diverged = 0
    with nogil:
        while True:
            if hthc_load32(&abort_flag[0]):
                break
            k = hthc_fetch_inc(&cursor[0])
            if k >= m:
                break
            j = perm[k]
            i = gidx[j]
            q = sqnorms[j]
            if q <= 0.0:
                degenerate += 1
                counts[i] += 1
                done += 1
                continue
            raw = _dot(&v[0], &staged[0, j], d)
            dot = raw - ydots[j] if kind == KIND_LASSO else raw / lnn
            a_old = <double> alpha[i]
            a_new = _new_alpha(kind, dot, a_old, q, lam, bound, inv_n, lnn)
            delta = a_new - a_old
            if not (isfinite(dot) and isfinite(delta)):
                hthc_store32(&abort_flag[0], 1)
                diverged = 1
                break
            alpha[i] = <real> a_new
            if delta != 0.0:
                _axpy_striped(&v[0], &staged[0, j], delta, 0, d,
                              &locks[0] if not wild else NULL, stripe_len, wild)
            counts[i] += 1
            done += 1
    return done, diverged, degenerate
