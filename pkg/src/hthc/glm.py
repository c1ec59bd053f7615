"""Problem family for the solver: smooth-loss-plus-separable objectives.

Both supported models minimize f(D alpha) + sum_i g_i(alpha_i) over the
model vector alpha, where D is the d x n data matrix:

* Lasso: f(u) = 0.5 * ||u - y||^2 and g_i(a) = lam * |a|, with the domain
  of each g_i restricted to |a| <= B so the convex conjugate stays finite
  and the duality gap is computable.
* SVM (dual of the hinge-loss support vector machine with columns already
  scaled by their labels): f(u) = ||u||^2 / (2 * lam * n^2) and
  g_i(a) = -a / n on [0, 1], +inf outside.

This module owns the scalar maps (per-coordinate gap and closed-form
update), the primal/dual objectives, and the mapping w = grad f(v) from
the shared vector v = D alpha to the vector all dot products are taken
against. Everything here is pure and safe to call concurrently.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

LASSO = "lasso"
SVM = "svm"

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemDefinition:
    """Model kind, regularization strength, and coordinate count.

    `lipschitz_B` is the L1-domain bound used by the Lasso conjugate; it is
    0 for SVM and must be set (see `init_lipschitz_bound`) before Lasso gap
    computations.
    """

    kind: str
    lam: float
    n: int
    lipschitz_B: float = 0.0

    def __post_init__(self):
        if self.kind not in (LASSO, SVM):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.lipschitz_B < 0:
            raise ValueError("lipschitz_B must be >= 0")

    @property
    def is_lasso(self) -> bool:
        return self.kind == LASSO


def lasso_problem(lam: float, n: int, lipschitz_B: float = 0.0) -> ProblemDefinition:
    return ProblemDefinition(LASSO, lam, n, lipschitz_B)


def svm_problem(lam: float, n: int) -> ProblemDefinition:
    return ProblemDefinition(SVM, lam, n)


def with_lipschitz_bound(p: ProblemDefinition, targets: np.ndarray) -> ProblemDefinition:
    """Return a copy of a Lasso problem with its domain bound initialized."""
    return replace(p, lipschitz_B=init_lipschitz_bound(p, targets))


# ---------------------------------------------------------------------------
# Scalar maps (plain floats; the compiled backend mirrors these in C).
# ---------------------------------------------------------------------------

def soft_threshold(x: float, tau: float) -> float:
    if x > tau:
        return x - tau
    if x < -tau:
        return x + tau
    return 0.0


def lasso_gap_value(dot: float, alpha_i: float, lam: float, bound: float) -> float:
    return alpha_i * dot + lam * abs(alpha_i) + bound * max(0.0, abs(dot) - lam)


def svm_gap_value(dot: float, alpha_i: float, n: int) -> float:
    inv_n = 1.0 / n
    return alpha_i * dot - alpha_i * inv_n + max(0.0, inv_n - dot)


def lasso_new_alpha(dot: float, alpha_i: float, q: float, lam: float, bound: float) -> float:
    a_new = soft_threshold(alpha_i - dot / q, lam / q)
    return min(max(a_new, -bound), bound)


def svm_new_alpha(dot: float, alpha_i: float, q: float, lam: float, n: int) -> float:
    a_new = alpha_i + (1.0 / n - dot) * (lam * n * n) / q
    return min(max(a_new, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Per-coordinate operations.
# ---------------------------------------------------------------------------

def w_from_v(p: ProblemDefinition, v: np.ndarray, targets: np.ndarray | None) -> np.ndarray:
    """Map the shared vector v = D alpha to w = grad f(v).

    All coordinate dot products in gap scoring and updates are taken against
    this vector. Lasso: w = v - y. SVM: w = v / (lam * n^2).
    """
    if p.is_lasso:
        if targets is None:
            raise ValueError("lasso requires targets")
        return v - targets
    return v / (p.lam * p.n * p.n)


def gap_i(p: ProblemDefinition, dot: float, alpha_i: float) -> float:
    """Coordinate duality gap alpha_i*dot + g_i(alpha_i) + g_i*(-dot).

    `dot` is <w, d_i> with w = w_from_v(v). Nonnegative in exact arithmetic
    for feasible alpha_i.
    """
    if p.is_lasso:
        assert abs(alpha_i) <= p.lipschitz_B * (1 + 1e-6) + 1e-12
        return lasso_gap_value(dot, alpha_i, p.lam, p.lipschitz_B)
    return svm_gap_value(dot, alpha_i, p.n)


def update_i(p: ProblemDefinition, dot: float, alpha_i: float, col_sq_norm: float) -> float:
    """Closed-form coordinate step: the delta minimizing the objective
    restricted to coordinate i, given `dot` = <w, d_i> at the current point.

    A zero-norm column is degenerate and yields delta = 0 (the coordinate is
    skipped; callers surface the diagnostic).
    """
    if col_sq_norm <= 0.0:
        logger.debug("degenerate zero-norm column: coordinate skipped")
        return 0.0
    if p.is_lasso:
        return lasso_new_alpha(dot, alpha_i, col_sq_norm, p.lam, p.lipschitz_B) - alpha_i
    return svm_new_alpha(dot, alpha_i, col_sq_norm, p.lam, p.n) - alpha_i


# ---------------------------------------------------------------------------
# Vectorized gaps and objectives.
# ---------------------------------------------------------------------------

def gap_vector(p: ProblemDefinition, dots: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """All n coordinate gaps at once; `dots` is w^T D."""
    if p.is_lasso:
        return (alpha * dots + p.lam * np.abs(alpha)
                + p.lipschitz_B * np.maximum(0.0, np.abs(dots) - p.lam))
    inv_n = 1.0 / p.n
    return alpha * dots - alpha * inv_n + np.maximum(0.0, inv_n - dots)


def _box_tolerance(alpha: np.ndarray, hi: float) -> float:
    # Casting a clamped double to storage precision may overshoot the bound
    # by rounding; allow a few ulps before declaring infeasibility.
    eps = float(np.finfo(alpha.dtype).eps) if alpha.dtype.kind == "f" else 1e-15
    return 8.0 * eps * max(1.0, abs(hi))


def primal_objective(p: ProblemDefinition, alpha: np.ndarray, v: np.ndarray,
                     targets: np.ndarray | None) -> float:
    """F(alpha) = f(v) + sum_i g_i(alpha_i), +inf outside the g domain."""
    if p.is_lasso:
        if targets is None:
            raise ValueError("lasso requires targets")
        tol = _box_tolerance(alpha, p.lipschitz_B)
        if np.max(np.abs(alpha), initial=0.0) > p.lipschitz_B + tol:
            return math.inf
        r = v - targets
        return 0.5 * float(np.dot(r, r)) + p.lam * float(np.sum(np.abs(alpha)))
    tol = _box_tolerance(alpha, 1.0)
    if np.min(alpha, initial=0.0) < -tol or np.max(alpha, initial=0.0) > 1.0 + tol:
        return math.inf
    return float(np.dot(v, v)) / (2.0 * p.lam * p.n * p.n) - float(np.sum(alpha)) / p.n


def dual_objective(p: ProblemDefinition, w: np.ndarray, dots: np.ndarray,
                   targets: np.ndarray | None) -> float:
    """Fenchel dual D(w) = -f*(w) - sum_i g_i*(-<w, d_i>).

    Defined so that F(alpha) - D(w) equals the gap sum identically when
    w = w_from_v(v) and v = D alpha. `dots` is w^T D.
    """
    if p.is_lasso:
        if targets is None:
            raise ValueError("lasso requires targets")
        conj = p.lipschitz_B * float(np.sum(np.maximum(0.0, np.abs(dots) - p.lam)))
        return -0.5 * float(np.dot(w, w)) - float(np.dot(w, targets)) - conj
    conj = float(np.sum(np.maximum(0.0, 1.0 / p.n - dots)))
    return -0.5 * p.lam * p.n * p.n * float(np.dot(w, w)) - conj


KIND_CODES = {LASSO: 0, SVM: 1}


def kernel_params(p: ProblemDefinition) -> tuple[int, float, float, float, float]:
    """Scalar-map encoding handed to kernel workers: (kind, lam, bound, 1/n, lam*n^2)."""
    return (KIND_CODES[p.kind], float(p.lam), float(p.lipschitz_B),
            1.0 / p.n, float(p.lam) * p.n * p.n)


def init_lipschitz_bound(p: ProblemDefinition, targets: np.ndarray) -> float:
    """Level-set bound B = F(0) / lam = 0.5 * ||y||^2 / lam on ||alpha||_1.

    Valid for any iterate with F(alpha) <= F(0), hence for solvers started
    at alpha = 0. Lasso only.
    """
    if not p.is_lasso:
        raise ValueError("lipschitz bound applies to lasso only")
    y = np.asarray(targets, dtype=np.float64)
    return 0.5 * float(np.dot(y, y)) / p.lam
