"""Simulation study of AR-set coverage for point and cumulative IRFs."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import ConfigError, FactorizationError, PvarIvError
from .inference import IvMoments, invert_quadric
from .irf import ma_coefficients
from .panel_data import InstrumentMode, InstrumentSeries, PanelDataset
from .pvar import fit_pvar, spectral_radius

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

__all__ = [
    "McConfig",
    "McReport",
    "StructuralDgp",
    "build_dgp",
    "simulate_panel",
    "population_concentration",
    "gamma_for_concentration",
    "coverage_experiment",
    "rep_rng",
    "DEFAULT_PHI",
    "DEFAULT_SIGMA",
]

# slope matrix of the one-lag growth-rate model (policy first, GDP second)
DEFAULT_PHI = ((-0.10, -0.03), (0.80, 0.34))
# residual sd 0.5% (spending growth) and 2.625% (GDP growth), correlation 0.86;
# the policy shock then accounts for ~37% of the spending-residual variance
DEFAULT_SIGMA = ((2.5e-5, 1.12875e-4), (1.12875e-4, 6.890625e-4))


@dataclass
class McConfig:
    """Calibration of the simulation design.

    ``gamma=None`` solves for the instrument loading that hits
    ``concentration_target``. ``instrument_loading="structural"`` makes the
    instrument load on the policy shock's contribution ``R[0,0] eta_1`` to
    the policy residual; ``"reduced_form"`` loads on the whole policy
    residual.
    """

    N: int = 10
    T: int = 39
    phi: list = field(default_factory=lambda: [list(map(list, DEFAULT_PHI))])
    sigma: list = field(default_factory=lambda: list(map(list, DEFAULT_SIGMA)))
    b: list = field(default_factory=lambda: [1.0, 1.0])
    mu_z: float = 0.0
    sigma_z: float = 0.005
    gamma: float | None = None
    concentration_target: float = 204.0
    H: int = 8
    reps: int = 2000
    alpha: float = 0.05
    seed: int = 20240611
    response_var: int = 1
    lags: int | None = None
    burn_in: int = 200
    variance: str = "iid"
    instrument_loading: str = "structural"
    allow_nonstationary: bool = False

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim == 2:
            phi = phi[None]
        self.phi = phi.tolist()
        sigma = np.asarray(self.sigma, dtype=float)
        m = sigma.shape[0]
        if phi.shape[1:] != (m, m) or sigma.shape != (m, m):
            raise ConfigError(f"phi {phi.shape} and sigma {sigma.shape} disagree")
        if not np.allclose(sigma, sigma.T) or np.min(np.linalg.eigvalsh(sigma)) <= 0:
            raise ConfigError("sigma must be symmetric positive definite")
        if len(self.b) != m or not np.any(self.b):
            raise ConfigError("b must be a non-zero vector of length m")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.N < 2 or self.T < 3:
            raise ConfigError("need N >= 2 and T >= 3")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if not 0 <= self.response_var < m:
            raise ConfigError("response_var out of range")
        if self.instrument_loading not in ("structural", "reduced_form"):
            raise ConfigError(f"unknown instrument_loading {self.instrument_loading!r}")
        if self.variance not in ("iid", "cluster"):
            raise ConfigError(f"unknown variance {self.variance!r}")
        if self.sigma_z < 0 or self.H < 0 or self.burn_in < 0:
            raise ConfigError("sigma_z, H and burn_in must be non-negative")

    @property
    def p(self) -> int:
        return self.lags if self.lags is not None else len(self.phi)

    @property
    def phi_array(self) -> np.ndarray:
        return np.asarray(self.phi, dtype=float)

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "McConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown McConfig keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "McConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        try:
            data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data.get("mc", data))


@dataclass(frozen=True)
class StructuralDgp:
    phi: np.ndarray
    sigma: np.ndarray
    r: np.ndarray
    b: np.ndarray

    @property
    def m(self) -> int:
        return self.sigma.shape[0]

    def true_irf(self, horizon: int) -> np.ndarray:
        """Unit-normalized responses ``(H+1, m)`` to the first structural shock."""
        return ma_coefficients(self.phi, horizon) @ (self.r[:, 0] / self.r[0, 0])


def build_dgp(phi, sigma, b) -> StructuralDgp:
    """Impact matrix ``R`` with ``R R' = sigma`` and first column along ``b``.

    The first column is ``b / sqrt(b' sigma^{-1} b)``; the remaining columns
    come from a Householder completion of the whitened first column,
    coloured by the Cholesky factor of ``sigma``.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 2:
        phi = phi[None]
    sigma = np.asarray(sigma, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("sigma is not positive definite") from exc
    white = np.linalg.solve(chol, b)
    norm = np.linalg.norm(white)
    if not norm > 0:
        raise FactorizationError("b must be non-zero")
    q1 = white / norm
    e1 = np.zeros_like(q1)
    e1[0] = 1.0
    v = e1 - q1
    if np.linalg.norm(v) < 1e-15:
        house = np.eye(q1.size)
    else:
        house = np.eye(q1.size) - 2.0 * np.outer(v, v) / (v @ v)
    r = chol @ house
    if not np.allclose(r @ r.T, sigma, rtol=1e-10, atol=1e-14 * np.abs(sigma).max()):
        raise FactorizationError("completion does not reproduce sigma")
    return StructuralDgp(phi, sigma, r, b)


def rep_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep`` (counter-based spawn key)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(rep),)))


def _instrument_moments(dgp: StructuralDgp, cfg: McConfig, gamma: float):
    if cfg.instrument_loading == "structural":
        cov = gamma * dgp.r[0, 0] ** 2
        var_z = gamma**2 * dgp.r[0, 0] ** 2 + cfg.sigma_z**2
    else:
        cov = gamma * dgp.sigma[0, 0]
        var_z = gamma**2 * dgp.sigma[0, 0] + cfg.sigma_z**2
    return cov, var_z


def population_concentration(cfg: McConfig, dgp: StructuralDgp | None = None, gamma: float | None = None) -> float:
    """``n cov(W, Z)^2 / (var(Z) var(first-stage error))`` with ``n = N (T - p)``."""
    dgp = dgp or build_dgp(cfg.phi, cfg.sigma, cfg.b)
    gamma = cfg.gamma if gamma is None else gamma
    if gamma is None:
        gamma = gamma_for_concentration(cfg, dgp)
    cov, var_z = _instrument_moments(dgp, cfg, gamma)
    if var_z == 0:
        return 0.0
    err = dgp.sigma[0, 0] - cov**2 / var_z
    n = cfg.N * (cfg.T - cfg.p)
    return math.inf if err <= 0 else n * cov**2 / (var_z * err)


def gamma_for_concentration(cfg: McConfig, dgp: StructuralDgp | None = None, target: float | None = None) -> float:
    dgp = dgp or build_dgp(cfg.phi, cfg.sigma, cfg.b)
    target = cfg.concentration_target if target is None else target
    if target <= 0:
        return 0.0

    def gap(g):
        return population_concentration(cfg, dgp, g) - target

    hi = 1.0
    for _ in range(200):
        if gap(hi) > 0:
            break
        hi *= 2.0
    else:
        raise ConfigError(f"concentration {target} is not attainable with this design")
    return float(optimize.brentq(gap, 0.0, hi, xtol=1e-15, rtol=1e-12))


def simulate_panel(dgp: StructuralDgp, cfg: McConfig, rep: int = 0, gamma: float | None = None,
                   rng: np.random.Generator | None = None):
    """One panel draw: ``(PanelDataset, InstrumentSeries)``.

    Fixed effects ``mu_i ~ N(0, I)`` are drawn once per replication; the
    first ``burn_in`` periods are discarded.
    """
    if not cfg.allow_nonstationary and spectral_radius(dgp.phi) >= 1:
        raise ConfigError("phi is not stationary (set allow_nonstationary to override)")
    if gamma is None:
        gamma = cfg.gamma if cfg.gamma is not None else gamma_for_concentration(cfg, dgp)
    rng = rng or rep_rng(cfg.seed, rep)
    n, t, m = cfg.N, cfg.T, dgp.m
    p = dgp.phi.shape[0]
    total = cfg.burn_in + t
    mu = rng.standard_normal((n, m))
    eta = rng.standard_normal((n, total, m))
    nu = rng.standard_normal((n, total))
    shocks = eta @ dgp.r.T
    intercept = mu @ (np.eye(m) - dgp.phi.sum(axis=0)).T
    x = np.empty((n, total, m))
    for s in range(total):
        val = intercept + shocks[:, s, :]
        for lag in range(1, p + 1):
            prev = x[:, s - lag, :] if s - lag >= 0 else mu
            val = val + prev @ dgp.phi[lag - 1].T
        x[:, s, :] = val
    if cfg.instrument_loading == "structural":
        driver = dgp.r[0, 0] * eta[:, :, 0]
    else:
        driver = shocks[:, :, 0]
    z = cfg.mu_z + gamma * driver + cfg.sigma_z * nu
    keep = slice(cfg.burn_in, total)
    names = tuple(f"x{k}" for k in range(m))
    ds = PanelDataset(tuple(range(n)), tuple(range(t)), names, x[:, keep, :])
    inst = InstrumentSeries(z[:, keep], InstrumentMode.COMMON_AGGREGATE, ds.unit_ids, ds.time_ids)
    return ds, inst


@dataclass
class McReport:
    horizons: np.ndarray
    coverage_irf: np.ndarray
    coverage_cirf: np.ndarray
    coverage_plugin: np.ndarray
    coverage_plugin_cirf: np.ndarray
    mean_width: np.ndarray
    frac_unbounded: np.ndarray
    frac_unbounded_cirf: np.ndarray
    mean_concentration: float
    population_concentration: float
    gamma: float
    n_reps: int
    n_failed: int
    contains_irf: np.ndarray
    contains_cirf: np.ndarray
    concentration: np.ndarray
    true_irf: np.ndarray
    true_cirf: np.ndarray

    @property
    def failure_rate(self) -> float:
        return self.n_failed / self.n_reps

    def rows(self) -> list[dict]:
        return [
            {
                "horizon": int(h),
                "coverage_irf": float(self.coverage_irf[h]),
                "coverage_cirf": float(self.coverage_cirf[h]),
                "mean_width": float(self.mean_width[h]),
                "frac_unbounded": float(self.frac_unbounded[h]),
                "coverage_plugin": float(self.coverage_plugin[h]),
                "coverage_plugin_cirf": float(self.coverage_plugin_cirf[h]),
            }
            for h in self.horizons
        ]

    def summary(self) -> dict:
        return {
            "n_reps": self.n_reps,
            "n_failed": self.n_failed,
            "gamma": self.gamma,
            "population_concentration": self.population_concentration,
            "mean_concentration": self.mean_concentration,
            "true_irf": self.true_irf.tolist(),
            "true_cirf": self.true_cirf.tolist(),
            "horizons": self.rows(),
        }

    def write(self, out_dir, stem: str = "mc") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{stem}_report.csv"
        json_path = out_dir / f"{stem}_summary.json"
        rows = self.rows()
        _atomic_write(csv_path, lambda fh: _write_rows(fh, rows))
        _atomic_write(json_path, lambda fh: fh.write(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"))
        return csv_path, json_path


def _write_rows(fh, rows):
    writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _atomic_write(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer(fh)
    os.replace(tmp, path)


def _norm_crit(alpha: float) -> float:
    from scipy import stats

    return float(stats.norm.ppf(1 - alpha / 2))


_FIELDS = ("contains_irf", "contains_cirf", "plugin_irf", "plugin_cirf",
           "width", "unbounded", "unbounded_cirf")


def _one_replication(args):
    cfg, dgp, gamma, rep, truth = args
    s = cfg.response_var
    crit = _norm_crit(cfg.alpha)
    try:
        ds, z = simulate_panel(dgp, cfg, rep, gamma=gamma)
        model = fit_pvar(ds, cfg.p)
        mom = IvMoments(model, z, variance=cfg.variance)
        out = {name: np.zeros(cfg.H + 1) for name in _FIELDS}
        for h in range(cfg.H + 1):
            for cum, tag in ((False, "irf"), (True, "cirf")):
                target = truth[tag][h, s]
                q = mom.quadric(h, s, cumulative=cum)
                cs = invert_quadric(q, cfg.alpha)
                out[f"contains_{tag}"][h] = cs.contains(target)
                se = q.wald_se()
                out[f"plugin_{tag}"][h] = bool(np.isfinite(se) and abs(q.estimate - target) <= crit * se)
                if cum:
                    out["unbounded_cirf"][h] = cs.unbounded
                else:
                    out["unbounded"][h] = cs.unbounded
                    out["width"][h] = math.inf if cs.unbounded else cs.width
        return rep, out, mom.first_stage_f
    except PvarIvError as exc:
        logger.warning("replication %d failed: %s", rep, exc)
        return rep, None, math.nan


def _workers() -> int:
    raw = os.environ.get("PVARIV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"PVARIV_THREADS must be an integer, got {raw!r}") from None


def coverage_experiment(cfg: McConfig, workers: int | None = None) -> McReport:
    """Simulate, estimate and invert AR sets for every replication.

    Replication ``r`` draws from its own stream (see :func:`rep_rng`), so
    results do not depend on ``workers`` and the first ``k`` replications
    are the same for any ``reps >= k``. Failed replications are logged
    and excluded from the rates.
    """
    dgp = build_dgp(cfg.phi, cfg.sigma, cfg.b)
    if not cfg.allow_nonstationary and spectral_radius(dgp.phi) >= 1:
        raise ConfigError("phi is not stationary (set allow_nonstationary to override)")
    gamma = cfg.gamma if cfg.gamma is not None else gamma_for_concentration(cfg, dgp)
    true_irf = dgp.true_irf(cfg.H)
    truth = {"irf": true_irf, "cirf": np.cumsum(true_irf, axis=0)}
    jobs = [(cfg, dgp, gamma, rep, truth) for rep in range(cfg.reps)]
    workers = workers or _workers()
    if workers > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_replication, jobs, chunksize=max(1, cfg.reps // (4 * workers))))
    else:
        results = [_one_replication(job) for job in jobs]
    results.sort(key=lambda r: r[0])

    ok = [r for r in results if r[1] is not None]
    n_failed = len(results) - len(ok)
    if n_failed > 0.01 * cfg.reps:
        logger.warning("%d of %d replications failed", n_failed, cfg.reps)
    if not ok:
        raise PvarIvError("every replication failed")
    stacked = {name: np.array([r[1][name] for r in ok]) for name in _FIELDS}
    conc = np.array([r[2] for r in ok])
    widths = stacked["width"]
    finite = np.isfinite(widths)
    with np.errstate(invalid="ignore"):
        mean_width = np.where(finite.any(axis=0),
                              np.nansum(np.where(finite, widths, 0.0), axis=0) / np.maximum(finite.sum(axis=0), 1),
                              math.inf)
    return McReport(
        horizons=np.arange(cfg.H + 1),
        coverage_irf=stacked["contains_irf"].mean(axis=0),
        coverage_cirf=stacked["contains_cirf"].mean(axis=0),
        coverage_plugin=stacked["plugin_irf"].mean(axis=0),
        coverage_plugin_cirf=stacked["plugin_cirf"].mean(axis=0),
        mean_width=mean_width,
        frac_unbounded=stacked["unbounded"].mean(axis=0),
        frac_unbounded_cirf=stacked["unbounded_cirf"].mean(axis=0),
        mean_concentration=float(np.mean(conc)),
        population_concentration=population_concentration(cfg, dgp, gamma),
        gamma=float(gamma),
        n_reps=cfg.reps,
        n_failed=n_failed,
        contains_irf=stacked["contains_irf"].astype(bool),
        contains_cirf=stacked["contains_cirf"].astype(bool),
        concentration=conc,
        true_irf=truth["irf"][:, cfg.response_var],
        true_cirf=truth["cirf"][:, cfg.response_var],
    )
