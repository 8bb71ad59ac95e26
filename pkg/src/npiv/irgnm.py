"""Iteratively regularized Gauss-Newton iteration with iterated Tikhonov inner steps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .numerics import Grid1D, GridFn
from .regularization import FilterParams, LinearizedSystem, PenaltySpace, SpectralCalculus, iterated_tikhonov

logger = logging.getLogger(__name__)


class NonlinearProblem(Protocol):
    """What the solver needs from an operator: residual, Jacobian, image weights."""

    def residual_vector(self, phi: np.ndarray) -> np.ndarray: ...
    def jacobian(self, phi: np.ndarray) -> np.ndarray: ...
    def image_weights(self) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class IrgnmConfig:
    phi0: np.ndarray
    alpha0: float = 1.0
    q_alpha: float = 0.9
    m: int = 1
    R: float = 1.0
    max_steps: int = 30
    penalty: PenaltySpace = PenaltySpace("H1")
    # "initial": inner iteration starts at phi0 (spectral form); "current": at the Newton iterate
    inner_start: str = "initial"

    def __post_init__(self):
        phi0 = self.phi0.values if isinstance(self.phi0, GridFn) else np.asarray(self.phi0, dtype=float)
        object.__setattr__(self, "phi0", np.array(phi0, dtype=float))
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if not 0 < self.q_alpha < 1:
            raise ValueError(f"q_alpha must lie in (0, 1), got {self.q_alpha}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 0:
            raise ValueError(f"max_steps must be a nonnegative integer, got {self.max_steps}")
        if self.inner_start not in ("initial", "current"):
            raise ValueError(f"inner_start must be 'initial' or 'current', got {self.inner_start!r}")

    def alpha(self, j: int) -> float:
        return self.alpha0 * self.q_alpha ** j


@dataclass(eq=False)
class IrgnmRun:
    iterates: list
    alphas: np.ndarray
    residual_norms: np.ndarray
    gram: np.ndarray
    emergency_stopped: bool = False
    emergency_step: Optional[int] = None
    x_grid: Optional[Grid1D] = None
    normal_norms: list = field(default_factory=list)

    def __len__(self):
        return len(self.iterates)

    def norm(self, v: np.ndarray) -> float:
        """Penalty-space norm used for the emergency radius and Lepskii comparisons."""
        return float(np.sqrt(max(v @ self.gram @ v, 0.0)))

    def distance(self, i: int, j: int) -> float:
        return self.norm(self.iterates[i] - self.iterates[j])

    def as_gridfn(self, j: int) -> GridFn:
        if self.x_grid is None:
            raise ValueError("run was not computed on a grid")
        return GridFn(self.x_grid, self.iterates[j])


def _gram_for(problem, cfg: IrgnmConfig, gram: Optional[np.ndarray]) -> np.ndarray:
    if gram is not None:
        return gram
    x_grid = getattr(problem, "x_grid", None)
    if x_grid is None:
        return np.eye(cfg.phi0.size)
    return cfg.penalty.gram(x_grid)


def newton_step(problem: NonlinearProblem, phi_j: np.ndarray, cfg: IrgnmConfig, alpha_j: float,
                gram: Optional[np.ndarray] = None, residual: Optional[np.ndarray] = None) -> np.ndarray:
    """One outer step: linearize at ``phi_j`` and run m iterated-Tikhonov steps."""
    phi_j = phi_j.values if isinstance(phi_j, GridFn) else np.asarray(phi_j, dtype=float)
    G = _gram_for(problem, cfg, gram)
    M = problem.jacobian(phi_j)
    F = problem.residual_vector(phi_j) if residual is None else residual
    start = cfg.phi0 if cfg.inner_start == "initial" else phi_j
    sys = LinearizedSystem(M, F - M @ phi_j, start, problem.image_weights(), G)
    return iterated_tikhonov(sys, FilterParams(alpha_j, cfg.m))


def _image_norm(problem, v: np.ndarray) -> float:
    return float(np.sqrt(np.sum(problem.image_weights() * v * v)))


def run(problem: NonlinearProblem, cfg: IrgnmConfig, gram: Optional[np.ndarray] = None,
        check_saturation: bool = True) -> IrgnmRun:
    """Run ``cfg.max_steps`` outer steps, keeping every iterate.

    When ``|phi_j - phi0| > 2R`` the next iterate is reset to ``phi0`` and the
    iteration continues with the next regularization parameter.
    """
    G = _gram_for(problem, cfg, gram)
    phi0 = cfg.phi0
    out = IrgnmRun(iterates=[phi0.copy()], alphas=np.array([]), residual_norms=np.array([]),
                   gram=G, x_grid=getattr(problem, "x_grid", None))
    alphas, res_norms = [], []
    phi = phi0.copy()
    F = problem.residual_vector(phi)
    for j in range(cfg.max_steps):
        alpha_j = cfg.alpha(j)
        alphas.append(alpha_j)
        res_norms.append(_image_norm(problem, F))
        if out.norm(phi - phi0) > 2 * cfg.R:
            if not out.emergency_stopped:
                out.emergency_stopped, out.emergency_step = True, j
            logger.info("emergency reset at step %d", j)
            phi = phi0.copy()
        else:
            if check_saturation and j == 0:
                M = problem.jacobian(phi)
                nrm = SpectralCalculus(M, problem.image_weights(), G).norm_sq()
                out.normal_norms.append(nrm)
                if cfg.alpha0 < nrm / (1 - cfg.q_alpha):
                    logger.warning("alpha0=%.3g below |T*T|/(1-q_alpha)=%.3g", cfg.alpha0,
                                   nrm / (1 - cfg.q_alpha))
            phi = newton_step(problem, phi, cfg, alpha_j, gram=G, residual=F)
        out.iterates.append(phi)
        F = problem.residual_vector(phi)
    alphas.append(cfg.alpha(cfg.max_steps))
    res_norms.append(_image_norm(problem, F))
    if not out.emergency_stopped and out.norm(phi - phi0) > 2 * cfg.R:
        out.emergency_stopped, out.emergency_step = True, cfg.max_steps
    out.alphas = np.array(alphas)
    out.residual_norms = np.array(res_norms)
    return out
