"""Command-line front end.

Subcommands write CSV/JSON files into ``--out``:

* ``lagselect`` -> ``lag_selection.csv``
* ``estimate``  -> ``model.json``, ``iv.json``, ``first_second_stage.csv``,
  ``ar_coefficients.csv``, ``residual_autocorrelation.csv``, ``normality.csv``
* ``irf``       -> ``irf.csv``
* ``mc``        -> ``mc_report.csv``, ``mc_summary.json``

Exit codes: 0 success, 2 data/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .errors import ConfigError, DataError, NumericalError
from .inference import IvMoments, invert_quadric
from .irf import DEFAULT_SHOCK, irf_point, write_irf_csv
from .montecarlo import McConfig, coverage_experiment
from .panel_data import GrowthSpec, InstrumentMode, build_instrument, growth_transform, load_csv
from .pvar import fit_pvar, normality_test, residual_autocorrelation_check, select_lag
from .svar_iv import Normalization, identify

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("pvariv")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    growth_k: int = 1
    lags: str = "auto"
    p_max: int = 4
    alpha: float = 0.05
    horizon: int = 10
    normalization: str = "unit"
    variance: str = "iid"
    out: str = "out"
    seed: int | None = None
    spending_var: str = "exp"
    gdp_var: str = "gdp"
    instrument_mode: str = "common_aggregate"
    instrument_col: str | None = None
    shock_size: float = DEFAULT_SHOCK
    beta0: float = 0.0
    reps: int | None = None
    config: str | None = None

    def validate(self) -> None:
        if self.growth_k not in (1, 2):
            raise ConfigError("--growth-k must be 1 or 2")
        if self.lags != "auto":
            try:
                if int(self.lags) < 1:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"--lags must be a positive integer or 'auto', got {self.lags!r}") from None
        if not 0 < self.alpha < 1:
            raise ConfigError("--alpha must be in (0, 1)")
        if self.horizon < 0:
            raise ConfigError("--horizon must be non-negative")
        if self.p_max < 1:
            raise ConfigError("--p-max must be positive")
        if self.normalization not in ("unit", "standardized"):
            raise ConfigError("--normalization must be 'unit' or 'standardized'")
        if self.variance not in ("iid", "cluster"):
            raise ConfigError("--variance must be 'iid' or 'cluster'")
        InstrumentMode(self.instrument_mode)
        if self.command != "mc" and not self.input:
            raise ConfigError("--input is required")
        if self.reps is not None and self.reps < 1:
            raise ConfigError("--reps must be positive")


# ---------------------------------------------------------------------------
# output helpers


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _num(x) -> str:
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _write_csv(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _num(v) for k, v in row.items()})
    _atomic_text(path, buf.getvalue())


def _write_json(path: Path, data) -> None:
    _atomic_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _stars(pvalue: float) -> str:
    return "***" if pvalue < 0.01 else "**" if pvalue < 0.05 else "*" if pvalue < 0.1 else ""


# ---------------------------------------------------------------------------
# pipeline


def _prepare(cfg: RunConfig):
    """Load the panel and return ``(pvar_dataset, instrument_values)``."""
    raw = load_csv(cfg.input)
    if cfg.instrument_col:
        z = raw.variable(cfg.instrument_col)
        names = [v for v in raw.var_names if v != cfg.instrument_col]
        return raw.select(names), z
    k = cfg.growth_k
    specs = [
        GrowthSpec(cfg.spending_var, cfg.gdp_var, k, name=f"{cfg.spending_var}_growth"),
        GrowthSpec(cfg.gdp_var, cfg.gdp_var, k, name=f"{cfg.gdp_var}_growth"),
    ]
    ds = growth_transform(raw, specs)
    inst = build_instrument(raw, cfg.spending_var, cfg.gdp_var, cfg.instrument_mode, horizon_k=k)
    return ds, inst.values


def _lag_order(cfg: RunConfig, ds) -> int:
    if cfg.lags == "auto":
        return select_lag(ds, cfg.p_max).recommended["mbic"]
    return int(cfg.lags)


def cmd_lagselect(cfg: RunConfig, out: Path) -> None:
    ds, _ = _prepare(cfg)
    report = select_lag(ds, cfg.p_max)
    rows = report.rows()
    rec = report.recommended
    for row in rows:
        row["selected_by"] = ";".join(k.upper() for k, v in rec.items() if v == row["p"])
    _write_csv(out / "lag_selection.csv", rows)
    logger.info("recommended lag orders: %s", rec)


def _fit_and_identify(cfg: RunConfig):
    ds, z = _prepare(cfg)
    model = fit_pvar(ds, _lag_order(cfg, ds))
    z_aligned = z[:, model.p:]
    est = identify(model.residuals, z_aligned, cfg.normalization, sigma=model.sigma,
                   beta0=cfg.beta0, variance=cfg.variance, level=1 - cfg.alpha)
    return model, z_aligned, est


def cmd_estimate(cfg: RunConfig, out: Path) -> None:
    model, z, est = _fit_and_identify(cfg)
    moments = IvMoments(model, z, variance=cfg.variance)
    m = model.m
    names = model.var_names

    stage_rows = [{
        "quantity": "first_stage", "variable": names[0], "estimate": est.delta,
        "ci_lo": est.delta_ci[0], "ci_hi": est.delta_ci[1], "f_stat": est.f_stat,
        "ar_stat": "", "segment": "",
    }]
    for j in range(1, m):
        cs = invert_quadric(moments.quadric(0, j), cfg.alpha)
        for seg, (lo, hi) in enumerate(cs.segments):
            stage_rows.append({
                "quantity": "second_stage", "variable": names[j], "estimate": est.beta[j - 1],
                "ci_lo": lo, "ci_hi": hi, "f_stat": "", "ar_stat": est.ar_stat[j - 1], "segment": seg,
            })
    _write_csv(out / "first_second_stage.csv", stage_rows)

    se = model.phi_se()
    dof = model.nobs - m * model.p
    crit = stats.t.ppf(1 - cfg.alpha / 2, dof)
    coef_rows = []
    for lag in range(model.p):
        for k in range(m):
            for a in range(m):
                b, s = model.phi[lag, k, a], se[lag, k, a]
                pv = 2 * stats.t.sf(abs(b / s), dof) if s > 0 else 0.0
                coef_rows.append({
                    "equation": names[k], "regressor": names[a], "lag": lag + 1, "coef": b, "se": s,
                    "ci_lo": b - crit * s, "ci_hi": b + crit * s, "pvalue": pv, "stars": _stars(pv),
                })
    _write_csv(out / "ar_coefficients.csv", coef_rows)

    ac = residual_autocorrelation_check(model, level=1 - cfg.alpha)
    rows = ac.rows()
    for row in rows:
        row["clean"] = ac.clean
    _write_csv(out / "residual_autocorrelation.csv", rows)
    _write_csv(out / "normality.csv", normality_test(model).rows())

    _write_json(out / "model.json", model.to_dict())
    iv = est.to_dict()
    iv["beta0"] = cfg.beta0
    iv["ar_sets"] = {names[j]: invert_quadric(moments.quadric(0, j), cfg.alpha).to_dict() for j in range(1, m)}
    _write_json(out / "iv.json", iv)


def cmd_irf(cfg: RunConfig, out: Path) -> None:
    model, z, est = _fit_and_identify(cfg)
    res = irf_point(model, est.column, cfg.horizon, cfg.shock_size)
    # sets are computed for unit-normalized responses and rescaled to the reported units
    scale = cfg.shock_size
    if est.normalization is Normalization.STANDARDIZED:
        scale = cfg.shock_size * est.column.r_col[0]
    moments = IvMoments(model, z, variance=cfg.variance)
    for h in range(cfg.horizon + 1):
        for s in range(model.m):
            res.cs[(h, s)] = invert_quadric(moments.quadric(h, s), cfg.alpha).scaled(scale)
            res.cs_cumulative[(h, s)] = invert_quadric(moments.quadric(h, s, cumulative=True),
                                                       cfg.alpha).scaled(scale)
    tmp = out / "irf.csv.tmp"
    write_irf_csv(res, tmp)
    os.replace(tmp, out / "irf.csv")


def cmd_mc(cfg: RunConfig, out: Path, mc_section: dict | None) -> None:
    mc = McConfig.from_dict(dict(mc_section or {}))
    if cfg.seed is not None:
        mc.seed = cfg.seed
    if cfg.reps is not None:
        mc.reps = cfg.reps
    if cfg.horizon_given:
        mc.H = cfg.horizon
    if cfg.alpha_given:
        mc.alpha = cfg.alpha
    if cfg.variance_given:
        mc.variance = cfg.variance
    report = coverage_experiment(mc)
    report.write(out, stem="mc")


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvariv", description="Panel SVAR identified with an external instrument")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="long-format panel CSV (unit,time,<vars>)")
    common.add_argument("--growth-k", type=int, choices=(1, 2), help="growth-rate horizon in periods")
    common.add_argument("--lags", help="lag order or 'auto' (MBIC)")
    common.add_argument("--p-max", type=int, help="largest lag order considered by lag selection")
    common.add_argument("--alpha", type=float, help="1 - confidence level")
    common.add_argument("--horizon", type=int, help="largest IRF horizon")
    common.add_argument("--variance", choices=("iid", "cluster"))
    common.add_argument("--normalization", choices=("unit", "standardized"))
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="TOML file with defaults for these flags (and an [mc] table)")
    common.add_argument("--spending-var", help="policy level variable (default exp)")
    common.add_argument("--gdp-var", help="output level variable (default gdp)")
    common.add_argument("--instrument-mode", choices=[m.value for m in InstrumentMode])
    common.add_argument("--instrument-col",
                        help="use this column as the instrument and the other columns, as given, as PVAR variables")
    common.add_argument("--shock-size", type=float)
    common.add_argument("--beta0", type=float, help="null value for the AR statistic")
    common.add_argument("--reps", type=int, help="Monte Carlo replications")
    common.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("lagselect", parents=[common], help="lag-order selection table")
    sub.add_parser("estimate", parents=[common], help="fit, identify and diagnose")
    sub.add_parser("irf", parents=[common], help="impulse responses with AR confidence sets")
    sub.add_parser("mc", parents=[common], help="Monte Carlo coverage experiment")
    return parser


_FLAG_FIELDS = {f.name for f in fields(RunConfig)} - {"command", "config"}


def _resolve(args: argparse.Namespace) -> tuple[RunConfig, dict | None]:
    file_values: dict = {}
    mc_section = None
    if args.config:
        try:
            data = tomllib.loads(Path(args.config).read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        mc_section = data.pop("mc", None)
        file_values = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = set(file_values) - _FLAG_FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    given = {k: v for k, v in vars(args).items() if k in _FLAG_FIELDS and v is not None}
    merged = {**file_values, **given}
    if "lags" in merged:
        merged["lags"] = str(merged["lags"])
    cfg = RunConfig(command=args.command, config=args.config, **merged)
    cfg.horizon_given = "horizon" in merged
    cfg.alpha_given = "alpha" in merged
    cfg.variance_given = "variance" in merged
    cfg.validate()
    return cfg, mc_section


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, mc_section = _resolve(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if cfg.command == "lagselect":
            cmd_lagselect(cfg, out)
        elif cfg.command == "estimate":
            cmd_estimate(cfg, out)
        elif cfg.command == "irf":
            cmd_irf(cfg, out)
        else:
            cmd_mc(cfg, out, mc_section)
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
