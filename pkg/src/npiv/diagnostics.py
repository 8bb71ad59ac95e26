"""Numerical checks of the convergence theory: error decomposition, source
condition fits, Lipschitz and concentration probes, and rate experiments on
a diagonal synthetic problem."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import irgnm
from .kde import DensityModel, KernelSpec, default_bandwidth
from .operators import IvProblem
from .regularization import FilterParams, SpectralCalculus, filter_g, filter_r
from .simulation import Scenario, generate_sample
from .stopping import NoiseLevels, PhiBound, TheoryConstants, a_priori_stop, holder_app_bound, lepskii_select

logger = logging.getLogger(__name__)


# -- synthetic problem --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    """``F(x) = sigma * x + (beta/2) |x|^2 e_1`` on R^N with a Holder source condition.

    The initial guess is ``x0 = 0`` and the true solution satisfies
    ``x0 - x_true = (T*T)**mu omega`` with ``T = F'[x_true]`` and ``|omega| = rho``.
    ``omega`` and the noise have component variances proportional to ``1/t``
    (``noise_profile="decaying"``) so that the worst-case rates are attained.
    """

    singular_values: np.ndarray
    mu: float = 1.0
    rho: float = 1.0
    beta: float = 0.0
    noise_profile: str = "decaying"
    omega: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.asarray(self.singular_values, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("need at least two singular values")
        if np.any(s <= 0) or np.any(np.diff(s) >= 0):
            raise ValueError("singular values must be positive and strictly decreasing")
        if self.mu <= 0 or self.rho <= 0:
            raise ValueError("mu and rho must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.noise_profile not in ("decaying", "white"):
            raise ValueError(f"unknown noise profile {self.noise_profile!r}")
        object.__setattr__(self, "singular_values", s)
        if self.omega is None:
            p = self.profile()
            object.__setattr__(self, "omega", self.rho * np.sqrt(p) * np.where(np.arange(s.size) % 2, -1.0, 1.0))
        else:
            w = np.asarray(self.omega, dtype=float)
            if w.shape != s.shape:
                raise ValueError("omega must match the number of singular values")
            object.__setattr__(self, "omega", w)
        object.__setattr__(self, "_x_true", self._solve_source())

    @classmethod
    def polynomial(cls, N: int = 200, decay: float = 1.0, **kw) -> "SyntheticProblem":
        return cls(np.arange(1, N + 1, dtype=float) ** -decay, **kw)

    @classmethod
    def exponential(cls, N: int = 40, rate: float = 0.3, **kw) -> "SyntheticProblem":
        return cls(np.exp(-rate * np.arange(N, dtype=float)), **kw)

    @property
    def size(self) -> int:
        return self.singular_values.size

    def profile(self) -> np.ndarray:
        """Relative component variances, summing to one."""
        t = np.arange(1, self.size + 1, dtype=float)
        p = 1.0 / t if self.noise_profile == "decaying" else np.ones_like(t)
        return p / p.sum()

    def index_fn(self, lam):
        return np.clip(lam, 0.0, None) ** self.mu

    def jacobian_with(self, sigma: np.ndarray, x: np.ndarray) -> np.ndarray:
        J = np.diag(sigma)
        J[0, :] += self.beta * x
        return J

    def source_matrix(self, T: np.ndarray) -> np.ndarray:
        lam, V = np.linalg.eigh(T.T @ T)
        return (V * self.index_fn(lam)[None, :]) @ V.T

    def _solve_source(self) -> np.ndarray:
        x = -self.singular_values ** (2 * self.mu) * self.omega
        if self.beta == 0:
            return x
        for _ in range(200):
            x_new = -self.source_matrix(self.jacobian_with(self.singular_values, x)) @ self.omega
            if np.linalg.norm(x_new - x) <= 1e-14 * max(1.0, np.linalg.norm(x)):
                return x_new
            x = x_new
        raise ValueError("source condition fixed point did not converge; reduce beta")

    @property
    def x_true(self) -> np.ndarray:
        return self._x_true

    @property
    def x0(self) -> np.ndarray:
        return np.zeros(self.size)

    def instance(self, delta: float = 0.0, rng: Optional[np.random.Generator] = None,
                 der_rel: float = 0.0, killed_modes: Sequence[int] = ()) -> "SyntheticInstance":
        """Noisy realization: data noise with ``E|xi|^2 = delta^2`` and a perturbed spectrum."""
        rng = np.random.default_rng(0) if rng is None else rng
        xi = delta * np.sqrt(self.profile()) * rng.standard_normal(self.size)
        s_hat = self.singular_values.copy()
        if der_rel > 0:
            s_hat = s_hat * np.clip(1.0 + der_rel * rng.standard_normal(self.size), 0.1, None)
        s_hat[list(killed_modes)] = 0.0
        return SyntheticInstance(self, s_hat, xi)


@dataclass(frozen=True, eq=False)
class SyntheticInstance:
    """Estimated operator ``F_hat(x) = A(x) - A(x_true) - xi`` with ``A`` built on ``sigma_hat``."""

    base: SyntheticProblem
    sigma_hat: np.ndarray
    xi: np.ndarray

    def _forward(self, x):
        out = self.sigma_hat * x
        out[0] += 0.5 * self.base.beta * float(x @ x)
        return out

    def residual_vector(self, x) -> np.ndarray:
        return self._forward(np.asarray(x, float)) - self._forward(self.base.x_true) - self.xi

    def jacobian(self, x) -> np.ndarray:
        return self.base.jacobian_with(self.sigma_hat, np.asarray(x, float))

    def image_weights(self) -> np.ndarray:
        return np.ones(self.base.size)

    # oracle quantities
    @property
    def phi_true(self) -> np.ndarray:
        return self.base.x_true

    @property
    def omega(self) -> np.ndarray:
        return self.base.omega

    def index_fn(self, lam):
        return self.base.index_fn(lam)

    def true_jacobian(self) -> np.ndarray:
        return self.base.jacobian_with(self.base.singular_values, self.base.x_true)

    def derivative_noise_level(self) -> float:
        """``|(Lambda(T*T) - Lambda(T_hat*T_hat)) omega|`` at the true solution."""
        S = self.base.source_matrix
        return float(np.linalg.norm((S(self.true_jacobian()) - S(self.jacobian(self.phi_true))) @ self.omega))


# -- error decomposition ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ErrorDecomposition:
    e_app: np.ndarray
    e_noi: np.ndarray
    e_der: np.ndarray
    e_nl: np.ndarray
    total: np.ndarray

    @property
    def closure(self) -> float:
        return float(np.linalg.norm(self.e_app + self.e_noi + self.e_der + self.e_nl - self.total))


_ORACLE = ("phi_true", "omega", "index_fn", "true_jacobian")


def decompose_error(problem, run: irgnm.IrgnmRun, j: int, m: int) -> ErrorDecomposition:
    """Split ``phi_{j+1} - phi_true`` into approximation, propagated-noise,
    derivative-noise and nonlinearity parts by functional calculus.

    ``problem`` must expose the oracle attributes ``phi_true``, ``omega``,
    ``index_fn`` and ``true_jacobian`` besides the solver interface.  The
    decomposition closes for runs whose inner iteration starts at ``phi0``.
    """
    missing = [a for a in _ORACLE if not hasattr(problem, a)]
    if missing:
        raise ValueError(f"decomposition needs oracle quantities: {', '.join(missing)}")
    if not 0 <= j < len(run.iterates) - 1:
        raise ValueError(f"step {j} outside 0..{len(run.iterates) - 2}")
    p = FilterParams(float(run.alphas[j]), m)
    w = problem.image_weights()
    G = run.gram
    x_t = problem.phi_true
    phi_j = run.iterates[j]

    T_true = SpectralCalculus(problem.true_jacobian(), w, G)
    T_hat = SpectralCalculus(problem.jacobian(x_t), w, G)
    T_j = SpectralCalculus(problem.jacobian(phi_j), w, G)
    r = lambda lam: filter_r(lam, p)
    g = lambda lam: filter_g(lam, p)
    omega = problem.omega

    lam_hat_omega = T_hat.apply(problem.index_fn, omega)
    lam_true_omega = T_true.apply(problem.index_fn, omega)
    F_true = problem.residual_vector(x_t)
    F_j = problem.residual_vector(phi_j)
    M_j = T_j.T

    e_app = T_hat.apply(r, lam_hat_omega)
    e_noi = T_j.apply(g, T_j.adjoint(-F_true))
    e_der = T_j.apply(r, lam_true_omega - lam_hat_omega)
    e_nl = T_j.apply(g, T_j.adjoint(F_true - F_j + M_j @ (phi_j - x_t))) \
        + T_j.apply(r, lam_hat_omega) - e_app
    return ErrorDecomposition(e_app, e_noi, e_der, e_nl, run.iterates[j + 1] - x_t)


# -- source condition fit -----------------------------------------------------

class SourceFit(NamedTuple):
    mu: float
    rho: float
    mu_se: float
    modes: int


def fit_source_condition(T: np.ndarray, e0: np.ndarray, floor: float = 1e-8, min_modes: int = 5) -> SourceFit:
    """Regress ``log|<e0, v_t>|`` on ``log sigma_t^2`` over the usable singular modes.

    Modes need ``sigma_t >= floor * sigma_1`` and a coefficient above roundoff.
    The slope estimates ``mu``; ``rho`` is the exponential of the intercept.
    """
    T = np.asarray(T, dtype=float)
    e0 = np.asarray(e0, dtype=float)
    _, s, Vt = np.linalg.svd(T, full_matrices=False)
    c = Vt @ e0
    cmax = np.abs(c).max() if c.size else 0.0
    use = (s >= floor * s[0]) & (np.abs(c) > 1e-10 * max(cmax, 1e-300)) & (s > 0)
    k = int(use.sum())
    if k < min_modes:
        raise ValueError(f"only {k} usable modes, need at least {min_modes}")
    xs = np.log(s[use] ** 2)
    ys = np.log(np.abs(c[use]))
    A = np.column_stack([xs, np.ones_like(xs)])
    coef, res, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    dof = max(k - 2, 1)
    cov = (resid @ resid / dof) * np.linalg.inv(A.T @ A)
    return SourceFit(float(coef[0]), float(np.exp(coef[1])), float(np.sqrt(cov[0, 0])), k)


# -- Lipschitz probe ----------------------------------------------------------

@dataclass(frozen=True)
class LipschitzReport:
    L_hat: float
    bound: float
    ratios: np.ndarray = field(repr=False)


def _op_norm(problem: IvProblem, D: np.ndarray) -> float:
    wy = np.sqrt(problem.image_weights())
    wx = np.sqrt(problem.x_grid.weights)
    return float(np.linalg.norm(wy[:, None] * D / wx[None, :], 2))


def _smooth_direction(problem: IvProblem, rng: np.random.Generator, modes: int = 6) -> np.ndarray:
    x = problem.x_grid
    t = (x.nodes - x.a) / x.length
    coef = rng.standard_normal(modes) / np.arange(1, modes + 1)
    v = sum(c * np.cos(np.pi * k * t) for k, c in enumerate(coef))
    return v / np.sqrt(np.sum(x.weights * v * v))


def lipschitz_probe(problem: IvProblem, center, radius: float, n_pairs: int = 20,
                    rng: Optional[np.random.Generator] = None) -> LipschitzReport:
    """Largest ``|F'[a] - F'[b]|_op / |a - b|_L2`` over random pairs in a ball, next to
    the analytic bound from the sup of the second y-derivative of the kernel."""
    rng = np.random.default_rng(0) if rng is None else rng
    c = problem._phi(center)
    ratios = []
    for _ in range(n_pairs):
        a = c + radius * rng.uniform() * _smooth_direction(problem, rng)
        b = c + radius * rng.uniform() * _smooth_direction(problem, rng)
        d = a - b
        dn = np.sqrt(np.sum(problem.x_grid.weights * d * d))
        if dn == 0:
            continue
        ratios.append(_op_norm(problem, problem.jacobian(a) - problem.jacobian(b)) / dn)
    ratios = np.array(ratios)
    return LipschitzReport(float(ratios.max()) if ratios.size else 0.0, problem.lipschitz_bound(), ratios)


# -- noise probes on the simulation scenario -----------------------------------

def _residual_norm(scn: Scenario, operator: str, n: int, h: float, seed: int, grid_n: int,
                   kernel: KernelSpec) -> float:
    sample = generate_sample(scn, n, seed)
    grid = scn.grid(grid_n)
    prob = IvProblem.from_density_model(operator, DensityModel(sample, kernel, h), grid)
    v = prob.residual_vector(scn.phi_true(grid.gx.nodes))
    return float(np.sqrt(np.sum(prob.image_weights() * v * v)))


def _residual_field(scn: Scenario, operator: str, n: int, h: float, seed: int, grid_n: int,
                    kernel: KernelSpec) -> np.ndarray:
    sample = generate_sample(scn, n, seed)
    grid = scn.grid(grid_n)
    prob = IvProblem.from_density_model(operator, DensityModel(sample, kernel, h), grid)
    return np.sqrt(prob.image_weights()) * prob.residual_vector(scn.phi_true(grid.gx.nodes))


class SlopeFit(NamedTuple):
    slope: float
    se: float
    intercept: float


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log x`` with its standard error."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if lx.size < 2:
        raise ValueError("need at least two points for a slope")
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    se = np.sqrt(resid @ resid / (lx.size - 2) * np.linalg.inv(A.T @ A)[0, 0]) if lx.size > 2 else 0.0
    return SlopeFit(float(coef[0]), float(se), float(coef[1]))


@dataclass(frozen=True, eq=False)
class VarianceReport:
    """Monte Carlo variance of the residual norm at the true solution.

    ``var_norm`` is the variance of the scalar ``|F_hat(phi_true)|``;
    ``var_field`` is the mean squared distance of ``F_hat(phi_true)`` from its
    Monte Carlo mean in the image space.
    """

    operator: str
    rows: list
    n_slope: Optional[SlopeFit]
    h_slope: Optional[SlopeFit]
    n_slope_field: Optional[SlopeFit]
    h_slope_field: Optional[SlopeFit]


def variance_scaling_probe(scn: Scenario, n_list: Sequence[int], h_list: Sequence[float], reps: int,
                           operator: str = "IND", grid_n: int = 30, base_seed: int = 0,
                           kernel: KernelSpec = KernelSpec()) -> VarianceReport:
    """Variance of ``|F_hat(phi_true)|`` over a grid of sample sizes and bandwidths.

    Slopes in ``log n`` are fitted when ``n_list`` has several entries and
    ``h_list`` one; slopes in ``log h`` in the opposite case.
    """
    if reps < 20:
        raise ValueError(f"variance probe needs reps >= 20, got {reps}")
    if operator not in ("IND", "QUANT", "CE"):
        raise ValueError(f"unknown operator {operator!r}")
    rows = []
    for n in n_list:
        for h in h_list:
            fields = np.array([_residual_field(scn, operator, n, h, base_seed + r, grid_n, kernel)
                               for r in range(reps)])
            norms = np.linalg.norm(fields, axis=1)
            var_field = float(np.mean(np.sum((fields - fields.mean(0)) ** 2, axis=1)) * reps / (reps - 1))
            rows.append({"n": n, "h": h, "mean_norm": float(norms.mean()),
                         "var_norm": float(norms.var(ddof=1)), "var_field": var_field})
    n_fit = h_fit = nf_fit = hf_fit = None
    if len(n_list) > 1 and len(h_list) == 1:
        n_fit = loglog_slope([r["n"] for r in rows], [r["var_norm"] for r in rows])
        nf_fit = loglog_slope([r["n"] for r in rows], [r["var_field"] for r in rows])
    if len(h_list) > 1 and len(n_list) == 1:
        h_fit = loglog_slope([r["h"] for r in rows], [r["var_norm"] for r in rows])
        hf_fit = loglog_slope([r["h"] for r in rows], [r["var_field"] for r in rows])
    return VarianceReport(operator, rows, n_fit, h_fit, nf_fit, hf_fit)


@dataclass(frozen=True, eq=False)
class ConcentrationReport:
    taus: tuple
    exceedance: np.ndarray
    c_fit: float
    values: np.ndarray = field(repr=False)


def concentration_probe(scn: Scenario, n: int, reps: int, operator: str = "IND", h: Optional[float] = None,
                        grid_n: int = 30, base_seed: int = 0, kernel: KernelSpec = KernelSpec(),
                        taus: tuple = (1.0, 4.0, 9.0)) -> ConcentrationReport:
    """Tail frequencies of the standardized residual norm against ``2 exp(-c tau)``.

    ``c`` is the largest constant for which the envelope dominates every
    observed exceedance frequency.
    """
    if reps < 500:
        raise ValueError(f"concentration probe needs reps >= 500, got {reps}")
    if h is None:
        h = default_bandwidth(generate_sample(scn, n, base_seed))
    vals = np.array([_residual_norm(scn, operator, n, h, base_seed + r, grid_n, kernel) for r in range(reps)])
    s = np.abs(vals - vals.mean()) / vals.std(ddof=1)
    exc = np.array([np.mean(s >= np.sqrt(t)) for t in taus])
    cands = [-np.log(p / 2.0) / t for p, t in zip(exc, taus) if 0 < p < 2]
    c_fit = float(min(cands)) if cands else float("inf")
    return ConcentrationReport(tuple(taus), exc, c_fit, vals)


# -- Lepskii on synthetic problems ----------------------------------------------

def synthetic_phi(alphas: np.ndarray, delta: float, C_g: float) -> PhiBound:
    """``Phi(k) = sqrt(C_g / alpha_{k-1}) delta``: iterate ``k`` was computed with ``alpha_{k-1}``."""
    a = np.asarray(alphas, dtype=float)
    shifted = np.concatenate([a[:1], a[:-1]])
    return PhiBound(np.sqrt(C_g / shifted) * delta)


class OracleTrial(NamedTuple):
    error_lepskii: float
    error_oracle: float
    j_lepskii: int
    j_oracle: int
    bound: float

    @property
    def passed(self) -> bool:
        return self.error_lepskii <= self.bound


def lepskii_oracle_trial(sp: SyntheticProblem, delta: float, seed: int, m: int = 2, alpha0: float = 1.0,
                         q_alpha: float = 0.8, max_steps: int = 60, gamma_nl: float = 0.0,
                         slack: float = 0.5) -> OracleTrial:
    """One seeded Lepskii run compared with the best iterate in hindsight.

    The trial passes when ``|phi_Lep - phi_true| <= 6 q^(-1/2) (1 + gamma)
    min_j |phi_j - phi_true| (1 + slack)``.
    """
    inst = sp.instance(delta, np.random.default_rng(seed))
    cfg = irgnm.IrgnmConfig(phi0=sp.x0, alpha0=alpha0, q_alpha=q_alpha, m=m, R=1e6, max_steps=max_steps)
    out = irgnm.run(inst, cfg, check_saturation=False)
    phi = synthetic_phi(out.alphas, delta, float(m))
    j = lepskii_select(out, phi, gamma_nl, len(out.iterates) - 1)
    errs = np.array([np.linalg.norm(x - sp.x_true) for x in out.iterates])
    bound = 6.0 / np.sqrt(q_alpha) * (1.0 + gamma_nl) * errs.min() * (1.0 + slack)
    return OracleTrial(float(errs[j]), float(errs.min()), j, int(errs.argmin()), float(bound))


# -- rate experiments -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateFit:
    exponent: float
    se: float
    expected: float
    rows: list


def _a_priori_index(sp: SyntheticProblem, delta: float, alphas: np.ndarray, m: int) -> int:
    nl = NoiseLevels(delta_noi=delta)
    tc = TheoryConstants(C_g=float(m))
    return a_priori_stop(holder_app_bound(alphas, sp.mu, sp.rho), nl, alphas, tc)


def synthetic_rate_experiment(sp: SyntheticProblem, delta_list: Sequence[float], reps: int, m: int = 3,
                              alpha0: float = 1.0, q_alpha: float = 0.9, max_steps: int = 200,
                              seed: int = 0, der_rel: float = 0.0, killed_modes: Sequence[int] = (),
                              lepskii: bool = False) -> RateFit:
    """RMSE of IRGNM with a-priori stopping for each noise level, and the fitted
    exponent of RMSE against delta (expected ``2 mu / (2 mu + 1)``).

    With ``lepskii=True`` each row also carries the RMSE of Lepskii stopping
    with ``Phi(j) = sqrt(C_g / alpha_j) delta``.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    alphas_all = alpha0 * q_alpha ** np.arange(max_steps + 1)
    C_g = float(m)
    rows = []
    for k, delta in enumerate(delta_list):
        j = _a_priori_index(sp, delta, alphas_all[:-1], m)
        steps = j + 1 if not lepskii else max_steps
        rng = np.random.default_rng([seed, k])
        sq, sq_lep, der = [], [], []
        for _ in range(reps):
            inst = sp.instance(delta, rng, der_rel, killed_modes)
            cfg = irgnm.IrgnmConfig(phi0=sp.x0, alpha0=alpha0, q_alpha=q_alpha, m=m, R=1e6, max_steps=steps)
            out = irgnm.run(inst, cfg, check_saturation=False)
            sq.append(np.sum((out.iterates[j + 1] - sp.x_true) ** 2))
            der.append(inst.derivative_noise_level())
            if lepskii:
                phi = synthetic_phi(out.alphas, delta, C_g)
                jl = lepskii_select(out, phi, 0.0, len(out.iterates) - 1)
                sq_lep.append(np.sum((out.iterates[jl] - sp.x_true) ** 2))
        row = {"delta": float(delta), "index": j + 1, "rmse": float(np.sqrt(np.mean(sq))),
               "rmse_se": float(np.std(np.sqrt(sq), ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0,
               "delta_der": float(np.mean(der))}
        if lepskii:
            row["rmse_lepskii"] = float(np.sqrt(np.mean(sq_lep)))
        rows.append(row)
    fit = loglog_slope([r["delta"] for r in rows], [r["rmse"] for r in rows]) if len(rows) > 1 \
        else SlopeFit(float("nan"), float("nan"), float("nan"))
    return RateFit(fit.slope, fit.se, 2 * sp.mu / (2 * sp.mu + 1), rows)
