"""Forward operators CE, IND and QUANT, their Frechet derivatives and adjoints.

All three act on functions sampled on the x-grid.  Integrals over x, u and z
use trapezoid weights; off-grid evaluation in y uses cubic Hermite
interpolation of each stored field together with its stored y-derivative, so
that ``apply`` is continuously differentiable in ``phi`` and
``derivative_apply`` is its exact derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import kde
from .numerics import Field3, Grid1D, Grid3, GridFn, hermite_curvature_bound, hermite_y

KINDS = ("CE", "IND", "QUANT")
CE_FLOOR = 1e-3


@dataclass(frozen=True, eq=False)
class OpImage:
    """Element of the image space: a field on the (u, z) grid (IND) or z grid, plus
    the scalar mean component for IND."""

    field: np.ndarray
    scalar: Optional[float] = None

    @property
    def vector(self) -> np.ndarray:
        v = np.ravel(self.field)
        return v if self.scalar is None else np.append(v, self.scalar)


@dataclass(frozen=True, eq=False)
class ImageNorm:
    weights: np.ndarray   # quadrature weights, same shape as OpImage.field
    w_mean: float = 1.0

    @property
    def vector(self) -> np.ndarray:
        return np.ravel(self.weights)

    def inner(self, a: OpImage, b: OpImage) -> float:
        s = float(np.sum(self.weights * a.field * b.field))
        if a.scalar is not None:
            s += self.w_mean * a.scalar * b.scalar
        return s

    def norm(self, a: OpImage) -> float:
        return float(np.sqrt(max(self.inner(a, a), 0.0)))


@dataclass(frozen=True, eq=False)
class IvProblem:
    """A discretized IV operator equation F(phi) = 0 (or T phi = psi for CE).

    Fields in y are sampled on ``grid.gy``; 2D arrays are indexed (y, x) for
    ``f_yx`` and (x, z) for ``f_xz``.
    """

    kind: str
    grid: Grid3
    f_z: np.ndarray
    f_xz: Optional[np.ndarray] = None
    f_yxz: Optional[Field3] = None
    df_dy: Optional[Field3] = None
    F_yxz: Optional[Field3] = None
    f_yx: Optional[np.ndarray] = None
    df_yx_dy: Optional[np.ndarray] = None
    f_x: Optional[np.ndarray] = None
    f_y: Optional[np.ndarray] = None
    mean_y: float = 0.0
    psi: Optional[np.ndarray] = None
    w_mean: float = 1.0
    q: float = 0.5
    u_grid: Optional[Grid1D] = None
    outside: str = "zero"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        need = {
            "CE": ("f_xz", "f_z", "psi"),
            "IND": ("f_yxz", "df_dy", "f_yx", "df_yx_dy", "f_z", "f_x"),
            "QUANT": ("F_yxz", "f_yxz", "f_z"),
        }[self.kind]
        missing = [name for name in need if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} problem is missing fields: {', '.join(missing)}")
        if self.kind == "QUANT" and not 0.0 < self.q < 1.0:
            raise ValueError(f"quantile level must lie in (0, 1), got {self.q}")
        if self.w_mean < 0:
            raise ValueError("w_mean must be nonnegative")
        if self.kind == "IND" and self.u_grid is None:
            gy = self.grid.gy
            object.__setattr__(self, "u_grid", Grid1D(gy.a - self.mean_y, gy.b - self.mean_y, gy.n))

    # -- construction -----------------------------------------------------
    @classmethod
    def from_density_model(cls, kind: str, model: "kde.DensityModel", grid: Grid3,
                           **kwargs) -> "IvProblem":
        """Plug-in problem built from a kernel density estimate."""
        m = kde.marginals(model, grid)
        fields = dict(f_z=m.f_z.values, f_xz=m.f_xz, f_x=m.f_x.values, f_y=m.f_y.values,
                      f_yx=m.f_yx, df_yx_dy=m.df_yx_dy, mean_y=float(np.mean(model.sample.y)))
        if kind in ("IND", "QUANT"):
            fields["f_yxz"] = kde.density_3d(model, grid)
        if kind == "IND":
            fields["df_dy"] = kde.density_dy(model, grid)
        if kind == "QUANT":
            fields["F_yxz"] = kde.smoothed_cdf_y(model, grid)
        if kind == "CE" and "psi" not in kwargs:
            fields["psi"] = kde.nadaraya_watson(model, grid.gz).values
        fields.update(kwargs)
        return cls(kind=kind, grid=grid, **fields)

    def scaled(self, c: float) -> "IvProblem":
        """Copy with every kernel field multiplied by ``c`` (used by homogeneity checks)."""
        upd = {}
        for name in ("f_yxz", "df_dy", "F_yxz"):
            v = getattr(self, name)
            if v is not None:
                upd[name] = Field3(v.grid, c * v.values)
        for name in ("f_xz", "f_yx", "df_yx_dy"):
            v = getattr(self, name)
            if v is not None:
                upd[name] = c * v
        return replace(self, **upd)

    # -- grids and norms ---------------------------------------------------
    @property
    def x_grid(self) -> Grid1D:
        return self.grid.gx

    @property
    def z_grid(self) -> Grid1D:
        return self.grid.gz

    @property
    def image_shape(self) -> tuple:
        if self.kind == "IND":
            return (self.u_grid.n, self.z_grid.n)
        return (self.z_grid.n,)

    def image_norm(self) -> ImageNorm:
        if self.kind == "IND":
            w = np.outer(self.u_grid.weights, self.z_grid.weights)
            return ImageNorm(w, self.w_mean)
        return ImageNorm(self.z_grid.weights, 0.0)

    def image_from_vector(self, v: np.ndarray) -> OpImage:
        size = int(np.prod(self.image_shape))
        field = np.asarray(v[:size]).reshape(self.image_shape)
        return OpImage(field, float(v[size]) if self.kind == "IND" else None)

    # -- kernel evaluation ---------------------------------------------------
    def _ce_kernel(self) -> np.ndarray:
        # (z, x) conditional density f_{X|Z}
        return (self.f_xz / np.maximum(self.f_z, CE_FLOOR)[None, :]).T

    def _ind_kernel(self, phi: np.ndarray, derivative: bool):
        y = self.u_grid.nodes[:, None] + phi[None, :]
        val, dval = hermite_y(self.f_yxz.values, self.df_dy.values, self.grid.gy, y, self.outside)
        yx, dyx = hermite_y(self.f_yx, self.df_yx_dy, self.grid.gy, y, self.outside)
        if derivative:
            return dval - dyx[:, :, None] * self.f_z[None, None, :]
        return val - yx[:, :, None] * self.f_z[None, None, :]

    def _quant_kernel(self, phi: np.ndarray, derivative: bool) -> np.ndarray:
        val, dval = hermite_y(self.F_yxz.values, self.f_yxz.values, self.grid.gy, phi[None, :])
        return (dval if derivative else val)[0]   # (x, z)

    def _phi(self, phi) -> np.ndarray:
        if isinstance(phi, GridFn):
            if phi.grid != self.x_grid:
                raise ValueError(f"phi lives on {phi.grid}, problem expects {self.x_grid}")
            return phi.values
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.x_grid.n,):
            raise ValueError(f"phi must have shape ({self.x_grid.n},), got {phi.shape}")
        return phi

    # -- vector interface used by the solver ----------------------------------
    def residual_vector(self, phi) -> np.ndarray:
        return apply(self, phi).vector

    def jacobian(self, phi) -> np.ndarray:
        return assemble_derivative_matrix(self, phi)

    def image_weights(self) -> np.ndarray:
        nrm = self.image_norm()
        w = nrm.vector
        return np.append(w, nrm.w_mean) if self.kind == "IND" else w

    def curvature_bound(self) -> float:
        """sup |d^2/dy^2 k| of the interpolated kernel (zero for CE)."""
        gy = self.grid.gy
        if self.kind == "CE":
            return 0.0
        if self.kind == "IND":
            vals = self.f_yxz.values - self.f_yx[:, :, None] * self.f_z[None, None, :]
            slopes = self.df_dy.values - self.df_yx_dy[:, :, None] * self.f_z[None, None, :]
            return hermite_curvature_bound(vals, slopes, gy)
        return hermite_curvature_bound(self.F_yxz.values, self.f_yxz.values, gy)

    def lipschitz_bound(self) -> float:
        """Hilbert-Schmidt bound on the Lipschitz constant of phi -> F'[phi] (L2 -> image)."""
        measure = self.z_grid.length
        if self.kind == "IND":
            measure *= self.u_grid.length
        return float(np.sqrt(measure) * self.curvature_bound())


def apply(problem: IvProblem, phi) -> OpImage:
    p = problem._phi(phi)
    wx = problem.x_grid.weights
    if problem.kind == "CE":
        return OpImage(problem._ce_kernel() @ (wx * p) - problem.psi)
    if problem.kind == "IND":
        k = problem._ind_kernel(p, derivative=False)
        field = np.einsum("uxz,x->uz", k, wx)
        return OpImage(field, float(np.sum(wx * p * problem.f_x) - problem.mean_y))
    k = problem._quant_kernel(p, derivative=False)
    return OpImage(wx @ k - problem.q * problem.f_z)


def derivative_apply(problem: IvProblem, phi, psi) -> OpImage:
    p = problem._phi(phi)
    d = problem._phi(psi)
    wx = problem.x_grid.weights
    if problem.kind == "CE":
        return OpImage(problem._ce_kernel() @ (wx * d))
    if problem.kind == "IND":
        dk = problem._ind_kernel(p, derivative=True)
        return OpImage(np.einsum("uxz,x->uz", dk, wx * d), float(np.sum(wx * d * problem.f_x)))
    dk = problem._quant_kernel(p, derivative=True)
    return OpImage((wx * d) @ dk)


def derivative_adjoint_apply(problem: IvProblem, phi, eta: OpImage) -> GridFn:
    """Adjoint of F'[phi] between L2 on the x-grid and the weighted image space."""
    p = problem._phi(phi)
    field = np.asarray(eta.field)
    if field.shape != problem.image_shape:
        raise ValueError(f"image has shape {field.shape}, expected {problem.image_shape}")
    nrm = problem.image_norm()
    we = nrm.weights * field
    if problem.kind == "CE":
        out = problem._ce_kernel().T @ we
    elif problem.kind == "IND":
        if eta.scalar is None:
            raise ValueError("IND image needs the scalar mean component")
        dk = problem._ind_kernel(p, derivative=True)
        out = np.einsum("uxz,uz->x", dk, we) + nrm.w_mean * eta.scalar * problem.f_x
    else:
        out = problem._quant_kernel(p, derivative=True) @ we
    return GridFn(problem.x_grid, out)


def assemble_derivative_matrix(problem: IvProblem, phi) -> np.ndarray:
    """Dense matrix M with ``derivative_apply(phi, psi).vector == M @ psi``."""
    p = problem._phi(phi)
    wx = problem.x_grid.weights
    if problem.kind == "CE":
        return problem._ce_kernel() * wx[None, :]
    if problem.kind == "IND":
        dk = problem._ind_kernel(p, derivative=True)          # (u, x, z)
        nu, nx, nz = dk.shape
        M = np.transpose(dk, (0, 2, 1)).reshape(nu * nz, nx) * wx[None, :]
        return np.vstack([M, (wx * problem.f_x)[None, :]])
    dk = problem._quant_kernel(p, derivative=True)           # (x, z)
    return dk.T * wx[None, :]
