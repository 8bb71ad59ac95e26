"""Stopping rules for the Newton iteration: J_max, a-priori choice, Lepskii balancing."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .kde import KernelSpec, kernel_l2_sq

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseLevels:
    delta_noi: float = 0.0
    sigma_noi: float = 0.0
    delta_der: float = 0.0
    sigma_der: float = 0.0

    def __post_init__(self):
        for name in ("delta_noi", "sigma_noi", "delta_der", "sigma_der"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class TheoryConstants:
    C_g: float = 1.0
    C_d: float = 1.0
    rho: float = 1.0
    gamma_nl: float = 0.5
    C_stop: float = np.inf
    L: float = 0.0
    mu: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma_nl <= 1:
            raise ValueError(f"gamma_nl must lie in [0, 1], got {self.gamma_nl}")

    @classmethod
    def from_stop_constant(cls, C_stop: float, L: float, C_g: float, **kw) -> "TheoryConstants":
        """Set gamma_nl = 8 L sqrt(C_g) C_stop, which must not exceed 1."""
        gamma = 8.0 * L * np.sqrt(C_g) * C_stop
        if gamma > 1:
            raise ValueError(f"8 L sqrt(C_g) C_stop = {gamma:.3g} exceeds 1; reduce C_stop")
        return cls(C_g=C_g, C_stop=C_stop, L=L, gamma_nl=gamma, **kw)


@dataclass(frozen=True, eq=False)
class PhiBound:
    """Monotone noise bound Phi(j) tabulated for j = 0..len(values)-1."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        with np.errstate(invalid="ignore"):
            drop = v[1:] < v[:-1] - 1e-12 * np.maximum(1.0, np.abs(v[1:]))
        if np.any(drop):
            raise ValueError("Phi must be nondecreasing in j")
        object.__setattr__(self, "values", v)

    def __call__(self, j: int) -> float:
        return float(self.values[j])

    def evaluate(self, j: int) -> float:
        return self(j)


def _inflate(sigma: float, risk_mode: bool) -> float:
    if not risk_mode:
        return sigma
    if sigma <= 0:
        return 0.0
    return float(-2.0 * np.log(sigma) * sigma)


def default_phi(nl: NoiseLevels, alphas: Sequence[float], tc: TheoryConstants,
                risk_mode: bool = False) -> PhiBound:
    alphas = np.asarray(alphas, dtype=float)
    noi = nl.delta_noi + _inflate(nl.sigma_noi, risk_mode)
    der = nl.delta_der + _inflate(nl.sigma_der, risk_mode)
    return PhiBound(np.sqrt(tc.C_g / alphas) * noi + tc.C_d * tc.rho * der)


def compute_jmax(phi: PhiBound, alphas: Sequence[float], C_stop: float) -> int:
    """Largest j with Phi(j) / sqrt(alpha_j) <= C_stop, or 0 if there is none."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0:
        raise ValueError("empty alpha sequence")
    ratio = phi.values[: alphas.size] / np.sqrt(alphas)
    ok = np.flatnonzero(ratio <= C_stop)
    return int(ok.max()) if ok.size else 0


def a_priori_stop(e_app_bound: Union[Callable[[int], float], Sequence[float]], nl: NoiseLevels,
                  alphas: Sequence[float], tc: TheoryConstants) -> int:
    """argmin_j ( |e_app_j| + sqrt(C_g/alpha_j) (delta + sigma) ), smallest index on ties."""
    alphas = np.asarray(alphas, dtype=float)
    js = np.arange(alphas.size)
    app = np.array([e_app_bound(j) for j in js]) if callable(e_app_bound) \
        else np.asarray(e_app_bound, dtype=float)[: alphas.size]
    objective = app + np.sqrt(tc.C_g / alphas) * (nl.delta_noi + nl.sigma_noi)
    return int(np.argmin(objective))


def holder_app_bound(alphas: Sequence[float], mu: float, rho: float = 1.0, C_lambda: float = 1.0) -> np.ndarray:
    """C_Lambda * alpha_j**mu * rho, the approximation-error bound for a Holder source."""
    return C_lambda * np.asarray(alphas, dtype=float) ** mu * rho


def lepskii_select(run, phi: PhiBound, gamma_nl: float, j_max: int) -> int:
    """Smallest j <= j_max with |phi_i - phi_j| <= 4 (1 + gamma_nl) Phi(i) for all j <= i <= j_max.

    ``run`` needs ``iterates`` and a ``norm`` method (an :class:`IrgnmRun` does).
    """
    if j_max < 0 or j_max >= len(run.iterates):
        raise ValueError(f"j_max={j_max} outside the available iterates 0..{len(run.iterates) - 1}")
    thresh = 4.0 * (1.0 + gamma_nl) * phi.values[: j_max + 1]
    for j in range(j_max + 1):
        if all(run.norm(run.iterates[i] - run.iterates[j]) <= thresh[i] for i in range(j, j_max + 1)):
            return j
    warnings.warn("no admissible Lepskii index; returning j_max", RuntimeWarning)
    return j_max


def kde_noise_levels(n: int, h: float, kernel: KernelSpec = KernelSpec(), c_cal: float = 1.0,
                     c_der: float = 0.0, d_x: int = 1, d_z: int = 1, mu: float = 1.0,
                     operator: str = "IND") -> NoiseLevels:
    """Data-driven noise proxies for a KDE plug-in operator.

    The propagated-noise level is ``sqrt(C_K / (n h**(d_z + 1)))`` for IND and
    ``sqrt(C_K / (n h**d_z))`` for QUANT and CE, with ``C_K`` the product of
    squared kernel L2 norms.  The derivative-noise level follows the
    ``n**-1 h**-(d_x + d_z + 3)`` variance scaling raised to ``(1 + mu)/2``
    and is scaled separately by ``c_der``.
    """
    k2 = kernel_l2_sq(kernel)
    if operator == "IND":
        noi = np.sqrt(k2 ** 3 / (n * h ** (d_z + 1)))
    else:
        noi = np.sqrt(k2 ** 2 / (n * h ** d_z))
    der = 0.0
    if c_der > 0:
        dk2 = kernel_l2_sq(kernel, derivative=True)
        der = c_der * (dk2 * k2 ** 2 / (n * h ** (d_x + d_z + 3))) ** ((1 + mu) / 2)
    return NoiseLevels(delta_noi=c_cal * noi, sigma_noi=0.0, delta_der=der, sigma_der=0.0)


@dataclass(frozen=True)
class LepskiiRule:
    """Data-driven stopping for a KDE plug-in operator.

    ``c_cal`` scales the propagated-noise proxy of :func:`kde_noise_levels`
    and ``C_stop`` bounds the admissible indices through :func:`compute_jmax`
    (``inf`` for linear operators, which have no nonlinearity restriction).
    """

    c_cal: float = 0.05
    c_der: float = 0.0
    gamma_nl: float = 0.5
    C_stop: float = 4.0
    risk_mode: bool = False

    def __post_init__(self):
        if not self.c_cal > 0:
            raise ValueError(f"c_cal must be positive, got {self.c_cal}")
        if self.c_der < 0:
            raise ValueError(f"c_der must be nonnegative, got {self.c_der}")
        if not 0 <= self.gamma_nl <= 1:
            raise ValueError(f"gamma_nl must lie in [0, 1], got {self.gamma_nl}")
        if not self.C_stop > 0:
            raise ValueError(f"C_stop must be positive, got {self.C_stop}")

    def select(self, run, n: int, h: float, C_g: float, kernel: KernelSpec = KernelSpec(),
               operator: str = "IND"):
        """Return ``(j, j_max, phi)`` for the iterates of ``run``.

        Indices from an emergency reset onwards are never admissible.
        """
        nl = kde_noise_levels(n, h, kernel, c_cal=self.c_cal, c_der=self.c_der, operator=operator)
        alphas = np.asarray(run.alphas, dtype=float)[: len(run.iterates)]
        tc = TheoryConstants(C_g=C_g, gamma_nl=self.gamma_nl, C_stop=self.C_stop)
        phi = default_phi(nl, alphas, tc, risk_mode=self.risk_mode)
        j_max = compute_jmax(phi, alphas, self.C_stop)
        if getattr(run, "emergency_stopped", False):
            j_max = min(j_max, max(run.emergency_step - 1, 0))
        return lepskii_select(run, phi, self.gamma_nl, j_max), j_max, phi
