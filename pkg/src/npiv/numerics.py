"""Uniform grids, trapezoid quadrature, L2/H1 inner products and interpolation in y."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n`` nodes on ``[a, b]``."""

    a: float
    b: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise ValueError(f"invalid interval [{self.a}, {self.b}]")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid needs at least 2 nodes, got n={self.n}")

    @property
    def spacing(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n)

    @property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights."""
        w = np.full(self.n, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    @property
    def length(self) -> float:
        return self.b - self.a


@dataclass(frozen=True, eq=False)
class GridFn:
    """Real function sampled at the nodes of a :class:`Grid1D`."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("GridFn values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: Grid1D, fn) -> "GridFn":
        return cls(grid, fn(grid.nodes))

    @classmethod
    def constant(cls, grid: Grid1D, c: float) -> "GridFn":
        return cls(grid, np.full(grid.n, float(c)))

    def __add__(self, other):
        _check_same_grid(self, other)
        return GridFn(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return GridFn(self.grid, self.values - other.values)

    def __mul__(self, c):
        return GridFn(self.grid, self.values * float(c))

    __rmul__ = __mul__


@dataclass(frozen=True)
class Grid3:
    """Tensor grid in (y, x, z)."""

    gy: Grid1D
    gx: Grid1D
    gz: Grid1D

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.gy.n, self.gx.n, self.gz.n)

    @classmethod
    def cube(cls, y=(-0.5, 0.5), x=(0.0, 1.0), z=(0.0, 1.0), n: int = 100) -> "Grid3":
        return cls(Grid1D(*y, n), Grid1D(*x, n), Grid1D(*z, n))


@dataclass(frozen=True, eq=False)
class Field3:
    """Real function on a :class:`Grid3`; ``values`` has shape ``(ny, nx, nz)``.

    ``values.ravel()`` is the row-major (y, x, z) layout.
    """

    grid: Grid3
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != np.prod(self.grid.shape):
            raise ValueError(f"expected {np.prod(self.grid.shape)} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("Field3 values must be finite")
        if v.flags.writeable:
            v = v.copy()
            v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _check_same_grid(f: GridFn, g: GridFn) -> None:
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


def trapezoid_integrate(f: GridFn) -> float:
    return float(f.grid.weights @ f.values)


def inner_l2(f: GridFn, g: GridFn) -> float:
    _check_same_grid(f, g)
    return float(np.sum(f.grid.weights * f.values * g.values))


def derivative_matrix(grid: Grid1D) -> np.ndarray:
    """Central differences, second-order one-sided at the endpoints.

    Falls back to the forward difference on a two-node grid.
    """
    n, h = grid.n, grid.spacing
    D = np.zeros((n, n))
    if n == 2:
        D[:, 0], D[:, 1] = -1.0 / h, 1.0 / h
        return D
    i = np.arange(1, n - 1)
    D[i, i - 1] = -0.5 / h
    D[i, i + 1] = 0.5 / h
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D


def difference_matrix(grid: Grid1D) -> np.ndarray:
    """Forward differences ``(f[i+1] - f[i]) / h``, one row per cell."""
    n, h = grid.n, grid.spacing
    return (np.eye(n, k=1) - np.eye(n))[:-1] / h


def gram_matrix(grid: Grid1D, kind: str = "L2", scheme: str = "central") -> np.ndarray:
    """Gram matrix ``G`` with ``<f, g> = f @ G @ g`` for ``kind`` in {"L2", "H1"}.

    For H1 the derivative term uses either the node-wise central differences
    of :func:`derivative_matrix` with trapezoid weights (``scheme="central"``)
    or cell-wise forward differences with midpoint weights
    (``scheme="staggered"``).  The central form leaves the alternating
    mode ``(-1)**i`` almost unpenalized; the staggered form does not.
    """
    W = np.diag(grid.weights)
    kind = kind.upper()
    if kind == "L2":
        return W
    if kind != "H1":
        raise ValueError(f"unknown penalty space {kind!r}")
    if scheme == "central":
        D = derivative_matrix(grid)
        G = W + D.T @ W @ D
    elif scheme == "staggered":
        D = difference_matrix(grid)
        G = W + grid.spacing * D.T @ D
    else:
        raise ValueError(f"unknown difference scheme {scheme!r}")
    return 0.5 * (G + G.T)


def inner_h1(f: GridFn, g: GridFn, scheme: str = "central") -> float:
    _check_same_grid(f, g)
    w = f.grid.weights
    if scheme == "staggered":
        D = difference_matrix(f.grid)
        return float(np.sum(w * f.values * g.values) + f.grid.spacing * np.sum((D @ f.values) * (D @ g.values)))
    if scheme != "central":
        raise ValueError(f"unknown difference scheme {scheme!r}")
    D = derivative_matrix(f.grid)
    return float(np.sum(w * f.values * g.values) + np.sum(w * (D @ f.values) * (D @ g.values)))


def interp_linear_y(field: Field3, y: float, ix: int, iz: int) -> float:
    """Piecewise-linear interpolation of ``field`` along y at node (ix, iz), clamped."""
    gy = field.grid.gy
    col = field.values[:, ix, iz]
    return float(np.interp(y, gy.nodes, col))


def hermite_y(values: np.ndarray, slopes: np.ndarray, gy: Grid1D, y: np.ndarray, outside: str = "clamp"):
    """Cubic Hermite interpolation along the first axis, with its y-derivative.

    ``values`` and ``slopes`` have shape ``(ny, nx, *rest)``; ``y`` has shape
    ``(m, nx)`` and gives the query point for each x column.  Returns
    ``(value, dvalue)`` of shape ``(m, nx, *rest)``.  Queries outside
    ``[gy.a, gy.b]`` take the boundary value (``outside="clamp"``) or zero
    (``outside="zero"``), with zero slope in both cases.
    """
    if outside not in ("clamp", "zero"):
        raise ValueError(f"outside must be 'clamp' or 'zero', got {outside!r}")
    y = np.asarray(y, dtype=float)
    h = gy.spacing
    s = (y - gy.a) / h
    lo = s < 0
    hi = s > gy.n - 1
    k = np.clip(np.floor(s).astype(int), 0, gy.n - 2)
    t = np.clip(s - k, 0.0, 1.0)
    t = np.where(lo, 0.0, np.where(hi, 1.0, t))
    xi = np.broadcast_to(np.arange(values.shape[1]), k.shape)

    p0, p1 = values[k, xi], values[k + 1, xi]
    m0, m1 = slopes[k, xi], slopes[k + 1, xi]
    extra = (slice(None), slice(None)) + (None,) * (values.ndim - 2)
    t = t[extra]
    t2, t3 = t * t, t * t * t
    val = (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * h * m0 \
        + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * h * m1
    dval = (6 * t2 - 6 * t) * (p0 - p1) / h + (3 * t2 - 4 * t + 1) * m0 + (3 * t2 - 2 * t) * m1
    out = (lo | hi)[extra]
    dval = np.where(out, 0.0, dval)
    if outside == "zero":
        val = np.where(out, 0.0, val)
    return val, dval


def hermite_curvature_bound(values: np.ndarray, slopes: np.ndarray, gy: Grid1D) -> float:
    """Sup of |second y-derivative| of the Hermite interpolant (attained at cell ends)."""
    h = gy.spacing
    p0, p1 = values[:-1], values[1:]
    m0, m1 = slopes[:-1], slopes[1:]
    d2_left = (6 * (p1 - p0) / h - 4 * m0 - 2 * m1) / h
    d2_right = (-6 * (p1 - p0) / h + 2 * m0 + 4 * m1) / h
    return float(max(np.abs(d2_left).max(), np.abs(d2_right).max()))
