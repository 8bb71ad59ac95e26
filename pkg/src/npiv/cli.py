"""Command line interface: ``npiv {simulate,reconstruct,rates,diagnose}``.

Settings come from a preset, then an INI file (``--config``), then flags;
later sources win.  The INI file uses a ``[common]`` section plus one section
per command.  Exit status is 2 for configuration or data errors and 3 when
the solver gives up.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import diagnostics, simulation
from .estimators import ConditionalMeanIVRegressor, IndependenceIVRegressor, QuantileIVRegressor
from .simulation import McConfig, MonteCarloAbort, Scenario

logger = logging.getLogger("npiv")

EXIT_CONFIG = 2
EXIT_SOLVER = 3


class ConfigError(Exception):
    """Bad configuration or input data."""


# -- settings ---------------------------------------------------------------------

PRESETS = {
    "desk": dict(reps=100, grid_n=60),
    "full": dict(reps=1000, grid_n=100),
}

RECONSTRUCT_DEFAULTS = dict(method="IND", grid_n=60, bandwidth_c=1.0, kernel="gaussian", alpha0=1.0,
                            q_alpha=0.9, m=1, R=1.0, max_steps=80, penalty="H1", stopping="lepskii",
                            c_cal=0.05, gamma_nl=0.5, C_stop=4.0, quantile=0.5,
                            y_min=-0.5, y_max=0.5, x_min=0.0, x_max=1.0, z_min=0.0, z_max=1.0)

RATES_DEFAULTS = dict(mu_list="1.0,1.5", size=200, decay=1.0, rho=1.0, beta=0.0, m=3, alpha0=1.0,
                      q_alpha=0.9, delta_min=1e-5, delta_max=1e-3, n_delta=6, reps=50, max_steps=200,
                      lepskii=False)

DIAGNOSE_DEFAULTS = dict(reps=200, grid_n=30, n_list="250,500,1000,2000", h_fixed=0.1, n_fixed=1000,
                         h_list="0.05,0.07,0.1,0.14,0.2", operators="IND,QUANT", conc_reps=500,
                         conc_n=500, lipschitz_pairs=20, seed=0)


def _coerce(name: str, raw, like):
    """Convert ``raw`` to the type of the default value ``like``."""
    try:
        if isinstance(like, bool):
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            v = float(raw)
            if v != int(v):
                raise ValueError(raw)
            return int(v)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            items = [s for s in str(raw).replace(" ", "").split(",") if s] if isinstance(raw, str) else list(raw)
            return tuple(type(like[0])(float(s)) if like else float(s) for s in items)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name}: {raw!r}") from None


def _read_ini(path: Optional[str], section: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(p)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    out = {}
    for name in ("common", section):
        if parser.has_section(name):
            out.update(parser.items(name))
    return out


def _merge(defaults: dict, ini: dict, flags: dict, shared=("seed", "out", "threads")) -> dict:
    settings = dict(defaults)
    for key, raw in ini.items():
        if key in shared:
            settings[key] = raw
            continue
        if key not in defaults:
            raise ConfigError(f"unknown setting {key!r}")
        settings[key] = _coerce(key, raw, defaults[key])
    settings.update({k: v for k, v in flags.items() if v is not None})
    return settings


def _flag_values(args) -> dict:
    return {"seed": args.seed, "out": args.out, "threads": args.threads}


def _out_dir(settings: dict) -> Path:
    out = Path(settings.get("out") or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _int_setting(settings: dict, key: str, default: int) -> int:
    v = settings.get(key)
    return default if v is None else _coerce(key, v, 0)


# -- CSV helpers -------------------------------------------------------------------

def _write_csv(path: Path, kind: str, header: Sequence[str], rows) -> None:
    simulation._write(path, kind, header, rows)


def read_data_csv(path) -> np.ndarray:
    """Read a ``y,x,z`` CSV (``#`` comment lines allowed) into an ``(n, 3)`` array."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"data file not found: {path}")
    rows = []
    header_seen = False
    with open(p, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = [f.strip() for f in text.split(",")]
            if not header_seen:
                if [f.lower() for f in fields] != ["y", "x", "z"]:
                    raise ConfigError(f"line {lineno}: expected header 'y,x,z', got {text!r}")
                header_seen = True
                continue
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                vals = None
            if vals is None or len(vals) != 3 or not all(math.isfinite(v) for v in vals):
                raise ConfigError(f"line {lineno}: malformed row {text!r}")
            rows.append(vals)
    if not header_seen:
        raise ConfigError(f"{path} is empty")
    if len(rows) < 5:
        raise ConfigError(f"{path} has {len(rows)} data rows, need at least 5")
    return np.array(rows)


def write_data_csv(path, sample) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("y", "x", "z"))
        for rec in sample.records:
            w.writerow([repr(float(v)) for v in rec])


# -- commands --------------------------------------------------------------------

def _mc_config(args) -> McConfig:
    fields = {f.name: f.default for f in dataclasses.fields(McConfig)}
    fields.update(PRESETS[args.preset])
    fields["threads"] = os.cpu_count() or 1
    ini = _read_ini(args.config, "simulate")
    merged = {}
    for key, raw in ini.items():
        if key == "out":
            continue
        name = "base_seed" if key == "seed" else key
        if name not in fields:
            raise ConfigError(f"unknown setting {key!r}")
        merged[name] = _coerce(key, raw, fields[name])
    fields.update(merged)
    if args.seed is not None:
        fields["base_seed"] = args.seed
    if args.reps is not None:
        fields["reps"] = args.reps
    if args.n is not None:
        fields["n_list"] = (args.n,)
    if args.grid is not None:
        fields["grid_n"] = args.grid
    if args.threads is not None:
        fields["threads"] = args.threads
    try:
        return McConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(args) -> int:
    cfg = _mc_config(args)
    out = _out_dir({"out": args.out or _read_ini(args.config, "simulate").get("out")})
    logger.info("simulate: %d reps, n=%s, grid %d", cfg.reps, cfg.n_list, cfg.grid_n)
    try:
        table = simulation.run_monte_carlo(Scenario(), cfg)
    except MonteCarloAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    simulation.write_replications(out / "replications.csv", table.replications)
    simulation.write_summary(out / "summary.csv", table)
    simulation.write_histograms(out / "histograms.csv", table.replications)
    for r in table.rows:
        print(f"n={r['n']:5d} {r['method']:3s} mean={r['mean']:.4f} q75={r['q75']:.4f} valid={r['valid']}/{r['reps']}")
    return 0


def _estimator(s: dict):
    common = dict(grid_n=s["grid_n"], bandwidth_c=s["bandwidth_c"], kernel=s["kernel"], alpha0=s["alpha0"],
                  q_alpha=s["q_alpha"], m=s["m"], max_steps=s["max_steps"], penalty=s["penalty"],
                  stopping=s["stopping"], c_cal=s["c_cal"], y_range=(s["y_min"], s["y_max"]),
                  x_range=(s["x_min"], s["x_max"]), z_range=(s["z_min"], s["z_max"]))
    method = s["method"].upper()
    if method == "CE":
        return ConditionalMeanIVRegressor(**common)
    newton = dict(common, R=s["R"], gamma_nl=s["gamma_nl"], C_stop=s["C_stop"])
    if method == "IND":
        return IndependenceIVRegressor(**newton)
    if method == "QUANT":
        return QuantileIVRegressor(quantile=s["quantile"], **newton)
    raise ConfigError(f"invalid value for method: {s['method']!r}")


def cmd_reconstruct(args) -> int:
    s = _merge(RECONSTRUCT_DEFAULTS, _read_ini(args.config, "reconstruct"), _flag_values(args))
    if args.grid is not None:
        s["grid_n"] = args.grid
    data = read_data_csv(args.data)
    est = _estimator(s)
    out = _out_dir(s)
    try:
        est.fit(data[:, 1:2], data[:, 0], data[:, 2])
    except np.linalg.LinAlgError as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    x = est.x_grid_.nodes
    _write_csv(out / "phi_hat.csv", "phi_hat", ("x", "phi"), zip(x, est.phi_.values))
    run_ = est.run_
    res = np.asarray(run_.residual_norms, dtype=float)
    rows = []
    for j in range(len(run_.iterates)):
        thr = math.nan
        if est.phi_bound_ is not None and j < len(est.phi_bound_.values):
            thr = est.lepskii_factor_ * est.phi_bound_(j)
        rows.append((j, float(run_.alphas[j]), float(res[j]) if j < res.size else math.nan, thr,
                     int(j == est.n_iter_)))
    _write_csv(out / "diagnostics.csv", "diagnostics", ("step", "alpha", "residual", "lepskii_threshold",
                                                        "selected"), rows)
    print(f"selected step {est.n_iter_} (alpha={est.alpha_:.4g}, h={est.bandwidth_:.4g})")
    return 0


def _float_list(name: str, raw) -> list:
    try:
        vals = [float(v) for v in str(raw).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from None
    if not vals:
        raise ConfigError(f"invalid value for {name}: {raw!r}")
    return vals


def cmd_rates(args) -> int:
    s = _merge(RATES_DEFAULTS, _read_ini(args.config, "rates"), _flag_values(args))
    if args.reps is not None:
        s["reps"] = args.reps
    seed = _int_setting(s, "seed", 0)
    mus = _float_list("mu_list", s["mu_list"])
    if not (0 < s["delta_min"] < s["delta_max"]) or s["n_delta"] < 2:
        raise ConfigError("invalid value for delta_min/delta_max/n_delta")
    deltas = np.logspace(np.log10(s["delta_min"]), np.log10(s["delta_max"]), s["n_delta"])
    out = _out_dir(s)
    points, fits = [], []
    for mu in mus:
        try:
            sp = diagnostics.SyntheticProblem.polynomial(s["size"], s["decay"], mu=mu, rho=s["rho"], beta=s["beta"])
            fit = diagnostics.synthetic_rate_experiment(sp, deltas, s["reps"], m=s["m"], alpha0=s["alpha0"],
                                                        q_alpha=s["q_alpha"], max_steps=s["max_steps"],
                                                        seed=seed, lepskii=s["lepskii"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for r in fit.rows:
            points.append((mu, r["delta"], r["index"], r["rmse"], r["rmse_se"], r["delta_der"],
                           r.get("rmse_lepskii", math.nan)))
        fits.append((mu, fit.exponent, fit.se, fit.expected))
        print(f"mu={mu:g}: exponent {fit.exponent:.4f} +- {fit.se:.4f} (expected {fit.expected:.4f})")
    _write_csv(out / "rate_points.csv", "rate_points",
               ("mu", "delta", "index", "rmse", "rmse_se", "delta_der", "rmse_lepskii"), points)
    _write_csv(out / "rate_fit.csv", "rate_fit", ("mu", "exponent", "se", "expected"), fits)
    return 0


def cmd_diagnose(args) -> int:
    s = _merge(DIAGNOSE_DEFAULTS, _read_ini(args.config, "diagnose"), _flag_values(args))
    if args.reps is not None:
        s["reps"] = args.reps
    if args.grid is not None:
        s["grid_n"] = args.grid
    if args.n is not None:
        s["n_fixed"] = args.n
    seed = _int_setting(s, "seed", 0)
    n_list = [int(v) for v in _float_list("n_list", s["n_list"])]
    h_list = _float_list("h_list", s["h_list"])
    ops = [o.strip().upper() for o in str(s["operators"]).split(",") if o.strip()]
    out = _out_dir(s)
    scn = Scenario()
    var_rows, fit_rows = [], []
    try:
        rep_n = diagnostics.variance_scaling_probe(scn, n_list, [s["h_fixed"]], s["reps"], "IND", s["grid_n"], seed)
        reports = [rep_n] + [diagnostics.variance_scaling_probe(scn, [s["n_fixed"]], h_list, s["reps"], op,
                                                                s["grid_n"], seed) for op in ops]
        conc = diagnostics.concentration_probe(scn, s["conc_n"], s["conc_reps"], "IND", grid_n=s["grid_n"],
                                               base_seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for rep in reports:
        for r in rep.rows:
            var_rows.append((rep.operator, r["n"], r["h"], r["mean_norm"], r["var_norm"], r["var_field"]))
        for axis, quantity, f in (("n", "norm", rep.n_slope), ("n", "field", rep.n_slope_field),
                                  ("h", "norm", rep.h_slope), ("h", "field", rep.h_slope_field)):
            if f is not None:
                fit_rows.append((rep.operator, axis, quantity, f.slope, f.se))
    _write_csv(out / "variance.csv", "variance", ("operator", "n", "h", "mean_norm", "var_norm", "var_field"),
               var_rows)
    _write_csv(out / "variance_fit.csv", "variance_fit", ("operator", "axis", "quantity", "slope", "se"), fit_rows)
    _write_csv(out / "concentration.csv", "concentration", ("tau", "exceedance", "envelope", "c_fit"),
               [(t, p, 2 * math.exp(-conc.c_fit * t) if math.isfinite(conc.c_fit) else 0.0, conc.c_fit)
                for t, p in zip(conc.taus, conc.exceedance)])

    from .kde import DensityModel, KernelSpec, default_bandwidth
    from .operators import IvProblem
    sample = simulation.generate_sample(scn, s["conc_n"], seed)
    grid = scn.grid(s["grid_n"])
    lip_rows = []
    for op in ("IND", "QUANT", "CE"):
        prob = IvProblem.from_density_model(op, DensityModel(sample, KernelSpec(), default_bandwidth(sample)), grid)
        rep = diagnostics.lipschitz_probe(prob, scn.phi_true(grid.gx.nodes), 0.2, s["lipschitz_pairs"],
                                          np.random.default_rng(seed))
        lip_rows.append((op, rep.L_hat, rep.bound))
    _write_csv(out / "lipschitz.csv", "lipschitz", ("operator", "L_hat", "bound"), lip_rows)
    for row in fit_rows:
        print("variance slope %s in log %s (%s): %.3f +- %.3f" % (row[0], row[1], row[2], row[3], row[4]))
    return 0


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file with [common] and per-command sections")
    common.add_argument("--out", metavar="DIR", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--reps", type=int, help="number of replications")
    common.add_argument("--n", type=int, help="sample size")
    common.add_argument("--grid", type=int, help="grid nodes per axis")
    common.add_argument("--threads", type=int, help="worker processes for replications")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="npiv", description="Nonparametric IV regression by regularized Newton methods.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo study of IND versus CE")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("reconstruct", parents=[common], help="estimate phi from a y,x,z CSV")
    p.add_argument("data", help="CSV with header y,x,z")
    p.set_defaults(func=cmd_reconstruct)
    p = sub.add_parser("rates", parents=[common], help="convergence rates on a synthetic problem")
    p.set_defaults(func=cmd_rates)
    p = sub.add_parser("diagnose", parents=[common], help="noise variance, concentration and Lipschitz probes")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: invalid value for threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
