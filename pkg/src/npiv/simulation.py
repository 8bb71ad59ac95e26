"""The IV regression simulation study: data generation, exact densities,
IRGNM (full independence) versus iterated Tikhonov (conditional mean), and
Monte Carlo aggregation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import irgnm
from .kde import DensityModel, KernelSpec, Sample, default_bandwidth
from .numerics import Field3, Grid1D, Grid3
from .operators import IvProblem
from .regularization import FilterParams, LinearizedSystem, PenaltySpace, iterated_tikhonov
from .stopping import LepskiiRule

logger = logging.getLogger(__name__)

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _normal_pdf(t, s):
    return np.exp(-0.5 * (t / s) ** 2) / (s * _SQRT_2PI)


@dataclass(frozen=True)
class Scenario:
    """X = g(Z) + V, Y = phi(X) + U with U | V ~ N(slope V, sigma_u^2) and V independent of Z."""

    sigma_v: float = 0.08
    sigma_u: float = 0.07
    slope: float = 2.0
    g_intercept: float = 0.1
    g_slope: float = 0.8
    y_range: tuple = (-0.5, 0.5)
    x_range: tuple = (0.0, 1.0)
    z_range: tuple = (0.0, 1.0)

    @staticmethod
    def phi_true(x):
        return np.sin(2.0 * np.pi * (np.asarray(x) + 0.25)) / 6.0

    @staticmethod
    def f_z(z):
        z = np.asarray(z, dtype=float)
        inside = (z >= 0) & (z <= 1)
        return np.where(inside, 9.0 / 7.0 * np.sqrt(np.clip(z, 0, 1)) + 1.0 / 7.0, 0.0)

    @staticmethod
    def cdf_z(z):
        z = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
        return 6.0 / 7.0 * z ** 1.5 + z / 7.0

    def g(self, z):
        return self.g_slope * np.asarray(z) + self.g_intercept

    def grid(self, n: int) -> Grid3:
        return Grid3.cube(self.y_range, self.x_range, self.z_range, n)

    def psi_true(self, z):
        """E[Y | Z = z] in closed form (Gaussian smoothing of a sinusoid)."""
        damp = np.exp(-0.5 * (2.0 * np.pi * self.sigma_v) ** 2)
        return damp * self.phi_true(self.g(z))

    def mean_y(self) -> float:
        s, w = np.polynomial.legendre.leggauss(200)
        s, w = 0.5 * (s + 1), 0.5 * w
        z = s * s
        return float(np.sum(w * 2 * s * self.f_z(z) * self.psi_true(z)))


def sample_z(scn: Scenario, u: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Inverse-CDF transform of uniforms by vectorized bisection."""
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = scn.cdf_z(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def generate_sample(scn: Scenario, n: int, seed: int) -> Sample:
    if n < 1:
        raise ValueError("sample size must be positive")
    rng = np.random.default_rng(seed)
    z = sample_z(scn, rng.random(n))
    v = scn.sigma_v * rng.standard_normal(n)
    e = scn.sigma_u * rng.standard_normal(n)
    x = scn.g(z) + v
    y = scn.phi_true(x) + scn.slope * v + e
    return Sample.from_columns(y, x, z)


# -- exact densities --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExactFields:
    f_yxz: Field3
    df_dy: Field3
    F_yxz: Field3
    f_yx: np.ndarray
    df_yx_dy: np.ndarray
    f_xz: np.ndarray
    f_z: np.ndarray
    f_x: np.ndarray
    f_y: np.ndarray
    mean_y: float
    psi: np.ndarray


def _z_quadrature(n: int = 200):
    # z = s^2 removes the sqrt(z) singularity of f_Z
    s, w = np.polynomial.legendre.leggauss(n)
    s, w = 0.5 * (s + 1), 0.5 * w
    return s * s, w * 2 * s


def exact_density_field(scn: Scenario, grid: Grid3) -> ExactFields:
    """Closed-form f_YXZ, its y-derivative and y-CDF on ``grid`` plus marginals."""
    y, x, z = grid.gy.nodes, grid.gx.nodes, grid.gz.nodes
    Y, X, Z = y[:, None, None], x[None, :, None], z[None, None, :]
    v = X - scn.g(Z)
    resid = Y - scn.phi_true(X) - scn.slope * v
    base = scn.f_z(Z) * _normal_pdf(v, scn.sigma_v)
    n_u = _normal_pdf(resid, scn.sigma_u)
    f = base * n_u
    df = -f * resid / scn.sigma_u ** 2
    F = base * ndtr(resid / scn.sigma_u)

    zq, wq = _z_quadrature()
    vq = x[None, :, None] - scn.g(zq)[None, None, :]
    rq = y[:, None, None] - scn.phi_true(x)[None, :, None] - scn.slope * vq
    bq = scn.f_z(zq)[None, None, :] * _normal_pdf(vq, scn.sigma_v)
    nq = _normal_pdf(rq, scn.sigma_u)
    f_yx = np.einsum("yxq,q->yx", bq * nq, wq)
    df_yx = np.einsum("yxq,q->yx", -bq * nq * rq / scn.sigma_u ** 2, wq)
    f_x = np.einsum("xq,q->x", bq[0], wq)

    # f_Y integrates x over the real line
    xs = np.linspace(scn.g(0.0) - 10 * scn.sigma_v, scn.g(1.0) + 10 * scn.sigma_v, 801)
    wx = np.full(xs.size, xs[1] - xs[0])
    wx[[0, -1]] *= 0.5
    bx = scn.f_z(zq)[None, :] * _normal_pdf(xs[:, None] - scn.g(zq)[None, :], scn.sigma_v)   # (xs, q)
    f_y = np.empty(y.size)
    for i, yy in enumerate(y):
        r = yy - scn.phi_true(xs)[:, None] - scn.slope * (xs[:, None] - scn.g(zq)[None, :])
        f_y[i] = wx @ (bx * _normal_pdf(r, scn.sigma_u)) @ wq

    return ExactFields(
        f_yxz=Field3(grid, f), df_dy=Field3(grid, df), F_yxz=Field3(grid, F),
        f_yx=f_yx, df_yx_dy=df_yx,
        f_xz=scn.f_z(z)[None, :] * _normal_pdf(x[:, None] - scn.g(z)[None, :], scn.sigma_v),
        f_z=scn.f_z(z), f_x=f_x, f_y=f_y, mean_y=scn.mean_y(), psi=scn.psi_true(z),
    )


def exact_problem(scn: Scenario, grid: Grid3, kind: str = "IND", fields: Optional[ExactFields] = None,
                  **kwargs) -> IvProblem:
    ef = fields if fields is not None else exact_density_field(scn, grid)
    common = dict(f_z=ef.f_z, f_xz=ef.f_xz, f_x=ef.f_x, f_y=ef.f_y, mean_y=ef.mean_y)
    if kind == "CE":
        return IvProblem("CE", grid, psi=ef.psi, **common, **kwargs)
    if kind == "IND":
        return IvProblem("IND", grid, f_yxz=ef.f_yxz, df_dy=ef.df_dy, f_yx=ef.f_yx,
                         df_yx_dy=ef.df_yx_dy, **common, **kwargs)
    return IvProblem("QUANT", grid, f_yxz=ef.f_yxz, F_yxz=ef.F_yxz, **common, **kwargs)


# -- reconstruction error -----------------------------------------------------

def relative_error(grid: Grid1D, phi: np.ndarray, phi_true: np.ndarray, phi0: np.ndarray,
                   window: Optional[tuple] = None) -> float:
    """``|phi - phi_true| / |phi0 - phi_true|`` in L2 (trapezoid), optionally on a sub-window."""
    w = grid.weights.copy()
    if window is not None:
        x = grid.nodes
        w = np.where((x >= window[0] - 1e-12) & (x <= window[1] + 1e-12), w, 0.0)
    num = np.sum(w * (phi - phi_true) ** 2)
    den = np.sum(w * (phi0 - phi_true) ** 2)
    if den <= 0:
        raise ValueError("initial guess coincides with the true function")
    return float(np.sqrt(num / den))


@dataclass(frozen=True, eq=False)
class ExactReconstruction:
    run: irgnm.IrgnmRun
    errors: np.ndarray
    interior_errors: np.ndarray

    @property
    def best_error(self) -> float:
        return float(self.errors.min())

    @property
    def best_interior_error(self) -> float:
        return float(self.interior_errors.min())


def exact_reconstruction(scn: Scenario = Scenario(), grid_n: int = 100, max_steps: int = 80,
                         alpha0: float = 1.0, q_alpha: float = 0.9, m: int = 1, R: float = 10.0,
                         interior: tuple = (0.05, 0.95)) -> ExactReconstruction:
    """IRGNM on the IND problem with the closed-form density instead of an estimate."""
    grid = scn.grid(grid_n)
    prob = exact_problem(scn, grid, "IND")
    gx = grid.gx
    phi0 = np.full(gx.n, prob.mean_y)
    cfg = irgnm.IrgnmConfig(phi0=phi0, alpha0=alpha0, q_alpha=q_alpha, m=m, R=R, max_steps=max_steps)
    out = irgnm.run(prob, cfg, check_saturation=False)
    truth = scn.phi_true(gx.nodes)
    errs = np.array([relative_error(gx, p, truth, phi0) for p in out.iterates])
    inner = np.array([relative_error(gx, p, truth, phi0, interior) for p in out.iterates])
    return ExactReconstruction(out, errs, inner)


# -- Monte Carlo --------------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    """Settings of the simulation study; see :func:`run_replication`."""

    n_list: tuple = (500, 1000)
    reps: int = 100
    base_seed: int = 0
    grid_n: int = 60
    kernel: str = "gaussian"
    bandwidth_c: float = 1.0
    alpha0: float = 1.0
    q_alpha: float = 0.9
    m: int = 1
    R: float = 1.0
    max_steps: int = 80
    penalty: str = "H1"
    w_mean: float = 1.0
    c_cal: float = 0.05
    c_der: float = 0.0
    gamma_nl: float = 0.5
    C_stop: float = 4.0
    threads: int = 1
    interior: tuple = (0.05, 0.95)
    invalid_limit: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        checks = [
            ("reps", self.reps >= 1), ("grid_n", self.grid_n >= 3), ("alpha0", self.alpha0 > 0),
            ("q_alpha", 0 < self.q_alpha < 1), ("m", self.m >= 1), ("R", self.R > 0),
            ("max_steps", self.max_steps >= 1), ("bandwidth_c", self.bandwidth_c > 0),
            ("w_mean", self.w_mean >= 0), ("c_cal", self.c_cal > 0), ("c_der", self.c_der >= 0),
            ("gamma_nl", 0 <= self.gamma_nl <= 1), ("C_stop", self.C_stop > 0),
            ("threads", self.threads >= 1), ("n_list", len(self.n_list) > 0 and min(self.n_list) >= 2),
            ("invalid_limit", 0 <= self.invalid_limit < 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid value for {name}: {getattr(self, name)!r}")
        PenaltySpace(self.penalty)
        KernelSpec(self.kernel)

    def alphas(self) -> np.ndarray:
        return self.alpha0 * self.q_alpha ** np.arange(self.max_steps + 1)


@dataclass(frozen=True)
class ReplicationResult:
    rep: int
    n: int
    seed: int
    h: float = math.nan
    err_ind: float = math.nan
    err_ce: float = math.nan
    err_ind_interior: float = math.nan
    err_ce_interior: float = math.nan
    j_ind: int = -1
    j_ce: int = -1
    jmax_ind: int = -1
    alpha_ind: float = math.nan
    alpha_ce: float = math.nan
    emergency: bool = False
    valid: bool = True
    message: str = ""


def baseline_linear_reconstruct(problem: IvProblem, alphas: Sequence[float], phi0: np.ndarray, m: int = 1,
                                penalty: PenaltySpace = PenaltySpace("H1")) -> list:
    """Iterated Tikhonov solution of the linear CE equation for every alpha in ``alphas``."""
    if problem.kind != "CE":
        raise ValueError("baseline reconstruction needs a CE problem")
    phi0 = np.asarray(phi0, dtype=float)
    T = problem.jacobian(phi0)
    system = LinearizedSystem(T, -problem.psi, phi0, problem.image_weights(), penalty.gram(problem.x_grid))
    return [iterated_tikhonov(system, FilterParams(a, m)) for a in alphas]


def _ce_sequence(problem: IvProblem, cfg: McConfig, phi0: np.ndarray) -> irgnm.IrgnmRun:
    pen = PenaltySpace(cfg.penalty)
    alphas = cfg.alphas()
    its = baseline_linear_reconstruct(problem, alphas, phi0, cfg.m, pen)
    return irgnm.IrgnmRun(iterates=its, alphas=alphas, residual_norms=np.array([]),
                          gram=pen.gram(problem.x_grid), x_grid=problem.x_grid)


def run_replication(scn: Scenario, cfg: McConfig, rep_index: int, n: Optional[int] = None) -> ReplicationResult:
    """One sample, one shared density estimate, both reconstructions with Lepskii stopping."""
    n = cfg.n_list[0] if n is None else int(n)
    seed = cfg.base_seed + rep_index
    try:
        sample = generate_sample(scn, n, seed)
        kernel = KernelSpec(cfg.kernel)
        h = default_bandwidth(sample, cfg.bandwidth_c)
        model = DensityModel(sample, kernel, h)
        grid = scn.grid(cfg.grid_n)
        gx = grid.gx
        phi0 = np.full(gx.n, float(np.mean(sample.y)))
        truth = scn.phi_true(gx.nodes)
        C_g = float(cfg.m)  # sup of g_alpha is m / alpha

        ind = IvProblem.from_density_model("IND", model, grid, w_mean=cfg.w_mean)
        icfg = irgnm.IrgnmConfig(phi0=phi0, alpha0=cfg.alpha0, q_alpha=cfg.q_alpha, m=cfg.m, R=cfg.R,
                                 max_steps=cfg.max_steps, penalty=PenaltySpace(cfg.penalty))
        run_ind = irgnm.run(ind, icfg, check_saturation=False)
        rule = LepskiiRule(cfg.c_cal, cfg.c_der, cfg.gamma_nl, cfg.C_stop)
        j_ind, jmax_ind, _ = rule.select(run_ind, n, h, C_g, kernel, "IND")

        ce = IvProblem.from_density_model("CE", model, grid)
        run_ce = _ce_sequence(ce, cfg, phi0)
        rule_ce = LepskiiRule(cfg.c_cal, cfg.c_der, gamma_nl=0.0, C_stop=np.inf)
        j_ce, _, _ = rule_ce.select(run_ce, n, h, C_g, kernel, "CE")

        phi_ind, phi_ce = run_ind.iterates[j_ind], run_ce.iterates[j_ce]
        return ReplicationResult(
            rep=rep_index, n=n, seed=seed, h=h,
            err_ind=relative_error(gx, phi_ind, truth, phi0),
            err_ce=relative_error(gx, phi_ce, truth, phi0),
            err_ind_interior=relative_error(gx, phi_ind, truth, phi0, cfg.interior),
            err_ce_interior=relative_error(gx, phi_ce, truth, phi0, cfg.interior),
            j_ind=j_ind, j_ce=j_ce, jmax_ind=jmax_ind,
            alpha_ind=float(run_ind.alphas[j_ind]), alpha_ce=float(run_ce.alphas[j_ce]),
            emergency=run_ind.emergency_stopped,
        )
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        logger.warning("replication %d (n=%d) failed: %s", rep_index, n, exc)
        return ReplicationResult(rep=rep_index, n=n, seed=seed, valid=False, message=str(exc))


class MonteCarloAbort(RuntimeError):
    """Too many invalid replications."""


QUANTILES = (0.25, 0.5, 0.75, 0.9)
SUMMARY_FIELDS = ("n", "method", "mean", "q25", "q50", "q75", "q90", "mean_interior", "valid", "reps")


@dataclass(frozen=True, eq=False)
class SummaryTable:
    rows: list
    replications: list

    def row(self, n: int, method: str) -> dict:
        for r in self.rows:
            if r["n"] == n and r["method"] == method:
                return r
        raise KeyError((n, method))


def summarize(results: Sequence[ReplicationResult]) -> SummaryTable:
    """Mean and linearly interpolated (type 7) quantiles of the errors per (n, method)."""
    rows = []
    for n in sorted({r.n for r in results}):
        block = [r for r in results if r.n == n]
        good = [r for r in block if r.valid]
        for method in ("IND", "CE"):
            e = np.array([getattr(r, f"err_{method.lower()}") for r in good])
            ei = np.array([getattr(r, f"err_{method.lower()}_interior") for r in good])
            row = {"n": n, "method": method, "valid": len(good), "reps": len(block)}
            if e.size:
                row["mean"] = float(e.mean())
                for q in QUANTILES:
                    row[f"q{int(round(100 * q))}"] = float(np.quantile(e, q, method="linear"))
                row["mean_interior"] = float(ei.mean())
            else:
                row.update({k: math.nan for k in ("mean", "q25", "q50", "q75", "q90", "mean_interior")})
            rows.append(row)
    return SummaryTable(rows, list(results))


def _replicate(args):
    scn, cfg, rep, n = args
    return run_replication(scn, cfg, rep, n)


def run_monte_carlo(scn: Scenario, cfg: McConfig) -> SummaryTable:
    """All replications for every sample size; parallel over replications when ``cfg.threads > 1``."""
    tasks = [(scn, cfg, rep, n) for n in cfg.n_list for rep in range(cfg.reps)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_replicate, tasks, chunksize=1))
    else:
        results = [_replicate(t) for t in tasks]
    for n in cfg.n_list:
        block = [r for r in results if r.n == n]
        bad = [r for r in block if not r.valid]
        if len(bad) > cfg.invalid_limit * len(block):
            raise MonteCarloAbort(
                f"{len(bad)} of {len(block)} replications invalid at n={n}; first: rep {bad[0].rep}: {bad[0].message}")
    return summarize(results)


# -- CSV output ---------------------------------------------------------------

CSV_VERSION = 1
REPLICATION_FIELDS = ("rep", "n", "seed", "method", "error", "error_interior", "index", "alpha", "jmax",
                      "h", "emergency", "valid")
HISTOGRAM_EDGES = np.linspace(0.0, 1.5, 31)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _write(path: Path, kind: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# npiv {kind} v{CSV_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_replications(path, results: Sequence[ReplicationResult]) -> None:
    rows = []
    for r in results:
        rows.append((r.rep, r.n, r.seed, "IND", r.err_ind, r.err_ind_interior, r.j_ind, r.alpha_ind,
                     r.jmax_ind, r.h, r.emergency, r.valid))
        rows.append((r.rep, r.n, r.seed, "CE", r.err_ce, r.err_ce_interior, r.j_ce, r.alpha_ce,
                     -1, r.h, False, r.valid))
    _write(Path(path), "replications", REPLICATION_FIELDS, rows)


def write_summary(path, table: SummaryTable) -> None:
    _write(Path(path), "summary", SUMMARY_FIELDS, [[r[k] for k in SUMMARY_FIELDS] for r in table.rows])


def histogram_counts(results: Sequence[ReplicationResult], edges: np.ndarray = HISTOGRAM_EDGES) -> list:
    """Bin counts of the errors per (n, method); values beyond the last edge go to the last bin."""
    rows = []
    for n in sorted({r.n for r in results}):
        for method in ("IND", "CE"):
            e = np.array([getattr(r, f"err_{method.lower()}") for r in results if r.n == n and r.valid])
            counts, _ = np.histogram(np.clip(e, edges[0], edges[-1]), bins=edges)
            rows += [(n, method, edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)]
    return rows


def write_histograms(path, results: Sequence[ReplicationResult]) -> None:
    _write(Path(path), "histograms", ("n", "method", "bin_lo", "bin_hi", "count"), histogram_counts(results))
