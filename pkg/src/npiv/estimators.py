"""scikit-learn style estimators for scalar IV regression ``Y = phi(X) + U``
with instrument ``Z``."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import irgnm
from .kde import DensityModel, KernelSpec, Sample, default_bandwidth
from .numerics import Grid1D, Grid3, GridFn
from .operators import IvProblem
from .regularization import PenaltySpace
from .simulation import baseline_linear_reconstruct
from .stopping import LepskiiRule


def _range(v: np.ndarray, given, pad: float) -> tuple:
    if given is not None:
        a, b = map(float, given)
        if not a < b:
            raise ValueError(f"invalid range {given!r}")
        return a, b
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    return lo - pad * span, hi + pad * span


class _IVBase(RegressorMixin, BaseEstimator):
    """Shared fitting logic; subclasses set ``_operator``."""

    _operator = "IND"

    def _validate(self, X, y, z):
        if z is None:
            raise ValueError("an instrument z is required")
        X, y = check_X_y(X, y, ensure_2d=False, y_numeric=True, ensure_min_samples=5)
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError(f"X must have a single feature, got {X.shape[1]}")
            X = X[:, 0]
        z = check_array(z, ensure_2d=False, ensure_min_samples=5).astype(float)
        if z.ndim == 2:
            if z.shape[1] != 1:
                raise ValueError(f"z must be a single instrument, got {z.shape[1]} columns")
            z = z[:, 0]
        if z.shape[0] != X.shape[0]:
            raise ValueError(f"z has {z.shape[0]} rows, X has {X.shape[0]}")
        for name, val, low in (("grid_n", self.grid_n, 3), ("max_steps", self.max_steps, 1), ("m", self.m, 1)):
            if int(val) != val or val < low:
                raise ValueError(f"{name} must be an integer >= {low}, got {val!r}")
        if not 0 < self.q_alpha < 1:
            raise ValueError(f"q_alpha must lie in (0, 1), got {self.q_alpha!r}")
        if self.stopping not in ("lepskii", "fixed"):
            raise ValueError(f"stopping must be 'lepskii' or 'fixed', got {self.stopping!r}")
        return X, np.asarray(y, dtype=float), z

    def _setup(self, X, y, z):
        sample = Sample.from_columns(y, X, z)
        kernel = KernelSpec(self.kernel)
        h = self.bandwidth if self.bandwidth is not None else default_bandwidth(sample, self.bandwidth_c)
        pad = 0.05
        grid = Grid3(Grid1D(*_range(y, self.y_range, pad), self.grid_n),
                     Grid1D(*_range(X, self.x_range, 0.0), self.grid_n),
                     Grid1D(*_range(z, self.z_range, 0.0), self.grid_n))
        return sample, kernel, float(h), DensityModel(sample, kernel, float(h)), grid

    def _select(self, run_, n, h, kernel, gamma, C_stop):
        if self.stopping == "fixed":
            j = min(self.max_steps, len(run_.iterates) - 1)
            self.phi_bound_ = None
            return j, j
        rule = LepskiiRule(self.c_cal, 0.0, gamma, C_stop)
        j, j_max, phi = rule.select(run_, n, h, float(self.m), kernel, self._operator)
        self.lepskii_factor_ = 4.0 * (1.0 + gamma)
        self.phi_bound_ = phi
        return j, j_max

    def _finish(self, run_, j, j_max, grid, h):
        self.run_ = run_
        self.n_iter_ = int(j)
        self.j_max_ = int(j_max)
        self.alpha_ = float(run_.alphas[j])
        self.bandwidth_ = h
        self.x_grid_ = grid.gx
        self.phi_ = GridFn(grid.gx, run_.iterates[j])
        self.n_features_in_ = 1
        return self

    def predict(self, X) -> np.ndarray:
        """Evaluate the fitted structural function, linearly interpolated and
        held constant outside the fitted x-range."""
        check_is_fitted(self, "phi_")
        X = check_array(X, ensure_2d=False).astype(float)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError(f"X must have a single feature, got {X.shape[1]}")
            X = X[:, 0]
        return np.interp(X, self.x_grid_.nodes, self.phi_.values)


class _NewtonIV(_IVBase):
    def fit(self, X, y, z=None):
        """Fit from samples of the regressor ``X``, response ``y`` and instrument ``z``."""
        X, y, z = self._validate(X, y, z)
        sample, kernel, h, model, grid = self._setup(X, y, z)
        if self._operator == "QUANT":
            prob = IvProblem.from_density_model("QUANT", model, grid, q=self.quantile)
            start = float(np.quantile(y, self.quantile))
        else:
            prob = IvProblem.from_density_model(self._operator, model, grid)
            start = float(np.mean(y))
        cfg = irgnm.IrgnmConfig(phi0=np.full(grid.gx.n, start), alpha0=self.alpha0, q_alpha=self.q_alpha,
                                m=self.m, R=self.R, max_steps=self.max_steps, penalty=PenaltySpace(self.penalty))
        run_ = irgnm.run(prob, cfg, check_saturation=False)
        j, j_max = self._select(run_, sample.n, h, kernel, self.gamma_nl, self.C_stop)
        return self._finish(run_, j, j_max, grid, h)


class IndependenceIVRegressor(_NewtonIV):
    """IV regression under full independence of the error and the instrument.

    The structural function solves a nonlinear density equation; it is
    reconstructed by an iteratively regularized Gauss-Newton method on kernel
    density estimates and stopped by a balancing (Lepskii) rule.

    Parameters
    ----------
    grid_n : int
        Nodes per axis of the (y, x, z) evaluation grid.
    bandwidth : float, optional
        Kernel bandwidth; defaults to ``bandwidth_c * sigma * n**(-1/6)``.
    alpha0, q_alpha, m : regularization schedule ``alpha_j = alpha0 q_alpha**j``
        with ``m`` inner iterated-Tikhonov steps.
    R : float
        Radius of the emergency reset ball around the initial guess.
    stopping : {"lepskii", "fixed"}
        ``"fixed"`` returns the last iterate.
    c_cal, gamma_nl, C_stop : Lepskii calibration, nonlinearity factor and
        the constant bounding the admissible indices.

    Attributes
    ----------
    phi_ : GridFn
        Reconstruction on ``x_grid_``.
    n_iter_ : int
        Selected Newton step.
    run_ : IrgnmRun
        All iterates.
    phi_bound_ : PhiBound or None
        Noise bound of the Lepskii comparisons (None for fixed stopping).
    """

    _operator = "IND"

    def __init__(self, grid_n: int = 60, bandwidth: Optional[float] = None, bandwidth_c: float = 1.0,
                 kernel: str = "gaussian", alpha0: float = 1.0, q_alpha: float = 0.9, m: int = 1,
                 R: float = 1.0, max_steps: int = 80, penalty: str = "H1", stopping: str = "lepskii",
                 c_cal: float = 0.05, gamma_nl: float = 0.5, C_stop: float = 4.0,
                 y_range=None, x_range=None, z_range=None):
        self.grid_n = grid_n
        self.bandwidth = bandwidth
        self.bandwidth_c = bandwidth_c
        self.kernel = kernel
        self.alpha0 = alpha0
        self.q_alpha = q_alpha
        self.m = m
        self.R = R
        self.max_steps = max_steps
        self.penalty = penalty
        self.stopping = stopping
        self.c_cal = c_cal
        self.gamma_nl = gamma_nl
        self.C_stop = C_stop
        self.y_range = y_range
        self.x_range = x_range
        self.z_range = z_range


class QuantileIVRegressor(_NewtonIV):
    """IV quantile regression, ``P(Y <= phi(X) | Z) = quantile``.

    Same parameters as :class:`IndependenceIVRegressor` plus ``quantile``.
    """

    _operator = "QUANT"

    def __init__(self, quantile: float = 0.5, grid_n: int = 60, bandwidth: Optional[float] = None,
                 bandwidth_c: float = 1.0, kernel: str = "gaussian", alpha0: float = 1.0,
                 q_alpha: float = 0.9, m: int = 1, R: float = 1.0, max_steps: int = 80,
                 penalty: str = "H1", stopping: str = "lepskii", c_cal: float = 0.05,
                 gamma_nl: float = 0.5, C_stop: float = 4.0, y_range=None, x_range=None, z_range=None):
        self.quantile = quantile
        self.grid_n = grid_n
        self.bandwidth = bandwidth
        self.bandwidth_c = bandwidth_c
        self.kernel = kernel
        self.alpha0 = alpha0
        self.q_alpha = q_alpha
        self.m = m
        self.R = R
        self.max_steps = max_steps
        self.penalty = penalty
        self.stopping = stopping
        self.c_cal = c_cal
        self.gamma_nl = gamma_nl
        self.C_stop = C_stop
        self.y_range = y_range
        self.x_range = x_range
        self.z_range = z_range

    def fit(self, X, y, z=None):
        if not 0 < self.quantile < 1:
            raise ValueError(f"quantile must lie in (0, 1), got {self.quantile!r}")
        return super().fit(X, y, z)


class ConditionalMeanIVRegressor(_IVBase):
    """IV regression under mean independence, ``E[phi(X) | Z] = E[Y | Z]``.

    The linear equation is solved by m-times iterated Tikhonov regularization
    for each ``alpha_j = alpha0 q_alpha**j``, j = 0..max_steps, and the index
    is chosen by the Lepskii rule without nonlinearity restriction.
    """

    _operator = "CE"

    def __init__(self, grid_n: int = 60, bandwidth: Optional[float] = None, bandwidth_c: float = 1.0,
                 kernel: str = "gaussian", alpha0: float = 1.0, q_alpha: float = 0.9, m: int = 1,
                 max_steps: int = 80, penalty: str = "H1", stopping: str = "lepskii", c_cal: float = 0.05,
                 y_range=None, x_range=None, z_range=None):
        self.grid_n = grid_n
        self.bandwidth = bandwidth
        self.bandwidth_c = bandwidth_c
        self.kernel = kernel
        self.alpha0 = alpha0
        self.q_alpha = q_alpha
        self.m = m
        self.max_steps = max_steps
        self.penalty = penalty
        self.stopping = stopping
        self.c_cal = c_cal
        self.y_range = y_range
        self.x_range = x_range
        self.z_range = z_range

    def fit(self, X, y, z=None):
        X, y, z = self._validate(X, y, z)
        sample, kernel, h, model, grid = self._setup(X, y, z)
        prob = IvProblem.from_density_model("CE", model, grid)
        alphas = self.alpha0 * self.q_alpha ** np.arange(self.max_steps + 1)
        phi0 = np.full(grid.gx.n, float(np.mean(y)))
        pen = PenaltySpace(self.penalty)
        its = baseline_linear_reconstruct(prob, alphas, phi0, self.m, pen)
        run_ = irgnm.IrgnmRun(iterates=its, alphas=alphas, residual_norms=np.array([]),
                              gram=pen.gram(grid.gx), x_grid=grid.gx)
        j, j_max = self._select(run_, sample.n, h, kernel, 0.0, np.inf)
        return self._finish(run_, j, j_max, grid, h)
