"""Shared fixtures and independent numerical oracles.

The oracles here deliberately avoid the library's own code paths: the 1-D
minimizer is a golden-section search on the restricted objective, conjugate
values come from candidate/grid evaluation, and objectives are re-derived
from raw numpy expressions.
"""

import math

import numpy as np
import pytest

from hthc import kernels


def pytest_addoption(parser):
    parser.addoption("--backend", default=None,
                     help="restrict kernel tests to one backend")


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    """Parametrizes a test over every available kernel backend."""
    only = request.config.getoption("--backend")
    if only and request.param != only:
        pytest.skip(f"backend {request.param} excluded by --backend={only}")
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240819)


# ---------------------------------------------------------------------------
# Golden-section search (independent 1-D minimizer).
# ---------------------------------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_minimize(f, lo, hi, iters=200):
    """Golden-section search for the minimizer of a unimodal f on [lo, hi]."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        if b - a < 1e-14 * (1.0 + abs(a) + abs(b)):
            break
    return 0.5 * (a + b)


def lasso_coordinate_objective(a, alpha_i, dot, q, lam):
    """Objective restricted to one coordinate, up to an additive constant:
    the quadratic model 0.5*q*(a - alpha_i)^2 + (a - alpha_i)*dot plus the
    regularizer lam*|a|."""
    step = a - alpha_i
    return 0.5 * q * step * step + step * dot + lam * abs(a)


def svm_coordinate_objective(a, alpha_i, dot, q, lam, n):
    """Restricted objective for the box-constrained dual: the curvature of
    f along column i is q / (lam * n^2)."""
    step = a - alpha_i
    return 0.5 * q / (lam * n * n) * step * step + step * dot - a / n


def oracle_lasso_argmin(alpha_i, dot, q, lam, bound):
    return golden_minimize(
        lambda a: lasso_coordinate_objective(a, alpha_i, dot, q, lam),
        -bound, bound)


def oracle_svm_argmin(alpha_i, dot, q, lam, n):
    return golden_minimize(
        lambda a: svm_coordinate_objective(a, alpha_i, dot, q, lam, n),
        0.0, 1.0)


# ---------------------------------------------------------------------------
# Conjugate-function oracle: g*(s) = max_a (s*a - g(a)) over the domain.
# For piecewise-linear g the maximum sits at a domain endpoint or kink, so
# candidate evaluation is exact; a coarse grid cross-checks the candidates.
# ---------------------------------------------------------------------------

def oracle_conjugate(s, g, candidates, grid):
    best = max(s * a - g(a) for a in candidates)
    grid_best = max(s * a - g(a) for a in grid)
    assert grid_best <= best + 1e-9 * (1.0 + abs(best))
    return best


def oracle_lasso_gap(dot, alpha_i, lam, bound):
    """gap_i from first principles: alpha*dot + g(alpha) + g*(-dot)."""
    def g(a):
        return lam * abs(a)
    candidates = (-bound, 0.0, bound)
    grid = np.linspace(-bound, bound, 4001)
    return alpha_i * dot + g(alpha_i) + oracle_conjugate(-dot, g, candidates, grid)


def oracle_svm_gap(dot, alpha_i, n):
    def g(a):
        return -a / n
    candidates = (0.0, 1.0)
    grid = np.linspace(0.0, 1.0, 4001)
    return alpha_i * dot + g(alpha_i) + oracle_conjugate(-dot, g, candidates, grid)


# ---------------------------------------------------------------------------
# Raw objective formulas (independent of hthc.glm).
# ---------------------------------------------------------------------------

def raw_lasso_primal(alpha, values, y, lam):
    r = values @ alpha - y
    return 0.5 * float(r @ r) + lam * float(np.abs(alpha).sum())


def raw_lasso_dual(w, values, y, lam, bound):
    dots = w @ values
    return (-0.5 * float(w @ w) - float(w @ y)
            - bound * float(np.maximum(0.0, np.abs(dots) - lam).sum()))


def raw_svm_primal(alpha, values, lam):
    n = alpha.shape[0]
    u = values @ alpha
    return float(u @ u) / (2.0 * lam * n * n) - float(alpha.sum()) / n


def raw_svm_dual(w, values, lam):
    n = values.shape[1]
    dots = w @ values
    return (-0.5 * lam * n * n * float(w @ w)
            - float(np.maximum(0.0, 1.0 / n - dots).sum()))
