"""Spectral filters of m-times iterated Tikhonov regularization and the inner solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.optimize import minimize_scalar

from .numerics import Grid1D, gram_matrix


@dataclass(frozen=True)
class FilterParams:
    alpha: float
    m: int = 1

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")


@dataclass(frozen=True)
class PenaltySpace:
    """Penalty space L2 or H1; ``scheme`` selects the H1 difference stencil."""

    kind: str = "H1"
    scheme: str = "staggered"

    def __post_init__(self):
        if self.kind.upper() not in ("L2", "H1"):
            raise ValueError(f"penalty space must be L2 or H1, got {self.kind!r}")
        if self.scheme not in ("central", "staggered"):
            raise ValueError(f"scheme must be 'central' or 'staggered', got {self.scheme!r}")
        object.__setattr__(self, "kind", self.kind.upper())

    def gram(self, grid: Grid1D) -> np.ndarray:
        return gram_matrix(grid, self.kind, self.scheme)


def _log_r(lam, p: FilterParams):
    return -p.m * np.log1p(np.asarray(lam, dtype=float) / p.alpha)


def filter_r(lam, p: FilterParams):
    """Residual filter (alpha / (lam + alpha))**m."""
    return np.exp(_log_r(lam, p))


def filter_g(lam, p: FilterParams):
    """((lam + alpha)**m - alpha**m) / (lam (lam + alpha)**m); equals m/alpha at lam = 0."""
    lam = np.asarray(lam, dtype=float)
    one_minus_r = -np.expm1(_log_r(lam, p))
    safe = np.where(lam > 0, lam, 1.0)
    out = np.where(lam > 0, one_minus_r / safe, p.m / p.alpha)
    return out if out.ndim else float(out)


def propagation_constant(m: int) -> float:
    """C_g = sup_lam alpha lam g_alpha(lam)**2, so that |g_alpha(T*T) T*| <= sqrt(C_g / alpha).

    The supremum is scale free in alpha; it equals 1/4 for m = 1.
    """
    p = FilterParams(1.0, m)
    f = lambda t: -np.exp(t) * filter_g(np.exp(t), p) ** 2
    grid = np.linspace(-8.0, 8.0, 321)
    t0 = grid[np.argmin([f(t) for t in grid])]
    res = minimize_scalar(f, bounds=(t0 - 0.1, t0 + 0.1), method="bounded", options={"xatol": 1e-10})
    return float(-res.fun)


@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    """Affine model ``phi -> T @ phi + c`` measured in the weighted image norm,
    regularized in the penalty space with Gram matrix ``gram``."""

    T: np.ndarray
    c: np.ndarray
    start: np.ndarray
    image_weights: np.ndarray
    gram: np.ndarray

    def __post_init__(self):
        r, k = self.T.shape
        if self.c.shape != (r,) or self.image_weights.shape != (r,):
            raise ValueError("offset / image weights do not match the rows of T")
        if self.start.shape != (k,) or self.gram.shape != (k, k):
            raise ValueError("start / gram do not match the columns of T")
        if np.any(self.image_weights < 0):
            raise ValueError("image weights must be nonnegative")

    def residual_norm(self, phi: np.ndarray) -> float:
        r = self.T @ phi + self.c
        return float(np.sqrt(np.sum(self.image_weights * r * r)))

    def normal_operator(self) -> np.ndarray:
        TW = self.T.T * self.image_weights[None, :]
        return TW @ self.T


def iterated_tikhonov(sys: LinearizedSystem, p: FilterParams, return_path: bool = False):
    """m successive penalized least-squares solves starting from ``sys.start``.

    Each step minimizes ``|T phi + c|^2 + alpha |phi - phi_prev|_P^2``; the
    normal matrix is factorized once and reused.
    """
    H = sys.normal_operator()
    A = H + p.alpha * sys.gram
    try:
        factor = la.cho_factor(A, check_finite=True)
    except la.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"normal matrix not positive definite (alpha={p.alpha})") from exc
    b = -(sys.T.T @ (sys.image_weights * sys.c))
    phi = np.array(sys.start, dtype=float)
    path = [phi]
    for _ in range(p.m):
        phi = la.cho_solve(factor, p.alpha * (sys.gram @ phi) + b)
        path.append(phi)
    return (phi, path) if return_path else phi


class SpectralCalculus:
    """Functional calculus of ``T*T`` where ``T*`` is the adjoint w.r.t. the
    penalty inner product ``<f, g> = f @ G @ g`` and the weighted image norm."""

    def __init__(self, T: np.ndarray, image_weights: np.ndarray, gram: np.ndarray):
        self.T = T
        self.w = image_weights
        self.L = la.cholesky(gram, lower=True)
        sw = np.sqrt(image_weights)
        # B = W^(1/2) T L^(-T)
        self.B = la.solve_triangular(self.L, (sw[:, None] * T).T, lower=True).T
        lam, V = la.eigh(self.B.T @ self.B)
        self.lam = np.clip(lam, 0.0, None)
        self.V = V

    def matrix(self, fn) -> np.ndarray:
        """Matrix of ``fn(T*T)`` acting on grid values."""
        core = (self.V * fn(self.lam)[None, :]) @ self.V.T
        return la.solve_triangular(self.L.T, core @ self.L.T, lower=False)

    def apply(self, fn, phi: np.ndarray) -> np.ndarray:
        xi = self.L.T @ phi
        xi = self.V @ (fn(self.lam) * (self.V.T @ xi))
        return la.solve_triangular(self.L.T, xi, lower=False)

    def adjoint(self, eta: np.ndarray) -> np.ndarray:
        """``T* eta`` in the penalty space."""
        return la.cho_solve((self.L, True), self.T.T @ (self.w * eta))

    def norm_sq(self) -> float:
        """Operator norm of ``T*T``."""
        return float(self.lam.max()) if self.lam.size else 0.0


def spectral_solve_check(sys: LinearizedSystem, p: FilterParams) -> np.ndarray:
    """``start + g_alpha(T*T) T*(-c - T start)`` by eigendecomposition."""
    calc = SpectralCalculus(sys.T, sys.image_weights, sys.gram)
    rhs = calc.adjoint(-sys.c - sys.T @ sys.start)
    return sys.start + calc.apply(lambda lam: filter_g(lam, p), rhs)
