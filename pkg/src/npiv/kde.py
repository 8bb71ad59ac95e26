"""Product-kernel density estimates of f_YXZ and the objects derived from it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .numerics import Grid1D, Grid3, Field3, GridFn

_SQRT_2PI = np.sqrt(2.0 * np.pi)
FAMILIES = ("gaussian", "epanechnikov")


@dataclass(frozen=True, eq=False)
class Sample:
    """i.i.d. observations of (Y, X, Z); ``records`` has shape (n, 3)."""

    records: np.ndarray

    def __post_init__(self):
        r = np.array(self.records, dtype=float)
        if r.ndim != 2 or r.shape[1] != 3 or r.shape[0] < 1:
            raise ValueError(f"records must have shape (n, 3) with n >= 1, got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("sample contains non-finite values")
        r.setflags(write=False)
        object.__setattr__(self, "records", r)

    @classmethod
    def from_columns(cls, y, x, z) -> "Sample":
        return cls(np.column_stack([np.ravel(y), np.ravel(x), np.ravel(z)]))

    @property
    def n(self) -> int:
        return self.records.shape[0]

    @property
    def y(self) -> np.ndarray:
        return self.records[:, 0]

    @property
    def x(self) -> np.ndarray:
        return self.records[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.records[:, 2]


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    order: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if self.order != 2:
            raise ValueError("only second-order kernels are supported")


def eval_kernel(spec: KernelSpec, u):
    u = np.asarray(u, dtype=float)
    if spec.family == "gaussian":
        return np.exp(-0.5 * u * u) / _SQRT_2PI
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def eval_kernel_derivative(spec: KernelSpec, u):
    if spec.family != "gaussian":
        raise ValueError(f"kernel derivative unsupported for the {spec.family} family")
    u = np.asarray(u, dtype=float)
    return -u * np.exp(-0.5 * u * u) / _SQRT_2PI


def eval_kernel_cdf(spec: KernelSpec, u):
    """Integrated kernel, the CDF of K."""
    u = np.asarray(u, dtype=float)
    if spec.family == "gaussian":
        return ndtr(u)
    v = np.clip(u, -1.0, 1.0)
    return 0.25 * (2.0 + 3.0 * v - v ** 3)


def kernel_l2_sq(spec: KernelSpec, derivative: bool = False) -> float:
    """Squared L2 norm of K (or K')."""
    if spec.family == "gaussian":
        return 1.0 / (4.0 * np.sqrt(np.pi)) if derivative else 1.0 / (2.0 * np.sqrt(np.pi))
    if derivative:
        raise ValueError("kernel derivative unsupported for the epanechnikov family")
    return 0.6


def default_bandwidth(sample: Sample, c: float = 1.0) -> float:
    """Scott-type rule ``c * sigma * n**(-1/6)`` with sigma pooled over coordinates."""
    sigma = np.sqrt(np.mean(np.var(sample.records, axis=0, ddof=1))) if sample.n > 1 else 1.0
    return float(c * sigma * sample.n ** (-1.0 / 6.0))


@dataclass(frozen=True)
class DensityModel:
    sample: Sample
    kernel: KernelSpec = KernelSpec()
    h: float = 0.1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")

    @classmethod
    def with_default_bandwidth(cls, sample: Sample, kernel: KernelSpec = KernelSpec(),
                               c: float = 1.0) -> "DensityModel":
        return cls(sample, kernel, default_bandwidth(sample, c))

    # per-axis kernel matrices, shape (n, grid.n)
    def k(self, data, grid: Grid1D) -> np.ndarray:
        u = (grid.nodes[None, :] - np.asarray(data)[:, None]) / self.h
        return eval_kernel(self.kernel, u) / self.h

    def dk(self, data, grid: Grid1D) -> np.ndarray:
        u = (grid.nodes[None, :] - np.asarray(data)[:, None]) / self.h
        return eval_kernel_derivative(self.kernel, u) / self.h ** 2

    def kbar(self, data, grid: Grid1D) -> np.ndarray:
        u = (grid.nodes[None, :] - np.asarray(data)[:, None]) / self.h
        return eval_kernel_cdf(self.kernel, u)


def _product_field(ay: np.ndarray, ax: np.ndarray, az: np.ndarray, grid: Grid3) -> Field3:
    n = ay.shape[0]
    out = np.empty(grid.shape)
    # chunk over x to bound the (n, chunk, nz) temporary
    step = max(1, int(2e7 // (n * grid.gz.n)))
    for s in range(0, grid.gx.n, step):
        xz = (ax[:, s:s + step, None] * az[:, None, :]).reshape(n, -1)
        out[:, s:s + step, :] = (ay.T @ xz).reshape(grid.gy.n, -1, grid.gz.n)
    return Field3(grid, out / n)


def density_3d(model: DensityModel, grid: Grid3) -> Field3:
    s = model.sample
    return _product_field(model.k(s.y, grid.gy), model.k(s.x, grid.gx), model.k(s.z, grid.gz), grid)


def density_dy(model: DensityModel, grid: Grid3) -> Field3:
    s = model.sample
    return _product_field(model.dk(s.y, grid.gy), model.k(s.x, grid.gx), model.k(s.z, grid.gz), grid)


def smoothed_cdf_y(model: DensityModel, grid: Grid3) -> Field3:
    s = model.sample
    return _product_field(model.kbar(s.y, grid.gy), model.k(s.x, grid.gx), model.k(s.z, grid.gz), grid)


class Marginals(NamedTuple):
    f_yx: np.ndarray      # (ny, nx)
    f_z: GridFn
    f_x: GridFn
    f_y: GridFn
    f_xz: np.ndarray      # (nx, nz)
    df_yx_dy: np.ndarray  # (ny, nx), y-derivative of f_yx


def marginals(model: DensityModel, grid: Grid3) -> Marginals:
    s, n = model.sample, model.sample.n
    ky, kx, kz = model.k(s.y, grid.gy), model.k(s.x, grid.gx), model.k(s.z, grid.gz)
    dky = model.dk(s.y, grid.gy) if model.kernel.family == "gaussian" else None
    return Marginals(
        f_yx=ky.T @ kx / n,
        f_z=GridFn(grid.gz, kz.mean(axis=0)),
        f_x=GridFn(grid.gx, kx.mean(axis=0)),
        f_y=GridFn(grid.gy, ky.mean(axis=0)),
        f_xz=kx.T @ kz / n,
        df_yx_dy=None if dky is None else dky.T @ kx / n,
    )


def nadaraya_watson(model: DensityModel, grid: Grid1D, floor: float = 1e-3) -> GridFn:
    """Kernel regression estimate of E[Y | Z = z] on ``grid``; denominators are floored."""
    kz = model.k(model.sample.z, grid)
    den = kz.sum(axis=0)
    num = model.sample.y @ kz
    n = model.sample.n
    return GridFn(grid, num / np.maximum(den, floor * n))
