"""Fixed-effects panel VAR: within (LSDV) estimation, lag selection and
residual diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import (
    DataError,
    DegenerateResiduals,
    SingularDesign,
    TooFewObservations,
    TooFewPeriods,
)
from .panel_data import PanelDataset

__all__ = [
    "PvarModel",
    "LagSelectionReport",
    "AutocorrelationReport",
    "NormalityReport",
    "companion_matrix",
    "spectral_radius",
    "fit_pvar",
    "select_lag",
    "lagged_residual_regression",
    "residual_autocorrelation_check",
    "shapiro_wilk",
    "normality_test",
]


def companion_matrix(phi) -> np.ndarray:
    """Stack ``p`` lag matrices ``(m, m)`` into the ``(mp, mp)`` companion form."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 2:
        phi = phi[None]
    p, m, _ = phi.shape
    comp = np.zeros((m * p, m * p))
    comp[:m, :] = np.hstack(list(phi))
    if p > 1:
        comp[m:, :-m] = np.eye(m * (p - 1))
    return comp


def spectral_radius(phi) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(phi)))))


@dataclass(frozen=True)
class PvarModel:
    """Fitted panel VAR ``x_it = (I - sum Phi_l) mu_i + sum Phi_l x_{i,t-l} + u_it``.

    Attributes
    ----------
    phi : ndarray (p, m, m)
        Slope matrices; ``phi[l-1]`` multiplies ``x_{t-l}``.
    mu : ndarray (N, m)
        Unit fixed effects (long-run unit means).
    sigma : ndarray (m, m)
        Residual covariance.
    residuals : ndarray (N, T-p, m) or None
        Within residuals; ``None`` for models restored from JSON.
    design : ndarray (N(T-p), mp) or None
        Demeaned lagged regressors, rows ordered unit-major like
        ``residuals.reshape(-1, m)``.
    """

    p: int
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    var_names: tuple
    nobs: int
    residuals: np.ndarray | None = None
    design: np.ndarray | None = None
    unit_ids: tuple = ()
    time_ids: tuple = ()
    dof_correction: bool = True
    xtx_inv: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.phi.shape[1]

    @property
    def n_units(self) -> int:
        return self.mu.shape[0]

    @property
    def companion(self) -> np.ndarray:
        return companion_matrix(self.phi)

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.phi)

    @property
    def stationary(self) -> bool:
        return self.spectral_radius < 1.0

    @property
    def coef_matrix(self) -> np.ndarray:
        """``B`` with ``x_t' = x_lags' B``; shape ``(mp, m)``."""
        return np.hstack(list(self.phi)).T

    def phi_se(self) -> np.ndarray:
        """Homoskedastic standard errors of ``phi``, shape ``(p, m, m)``."""
        if self.xtx_inv is None:
            raise DataError("model has no design information")
        m, p = self.m, self.p
        d = np.diag(self.xtx_inv)
        se = np.empty((p, m, m))
        for lag in range(p):
            for k in range(m):
                se[lag, k, :] = np.sqrt(self.sigma[k, k] * d[lag * m:(lag + 1) * m])
        return se

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "var_names": list(self.var_names),
            "phi": [np.asarray(f).tolist() for f in self.phi],
            "sigma": self.sigma.tolist(),
            "mu": self.mu.tolist(),
            "unit_ids": list(self.unit_ids),
            "nobs": self.nobs,
            "dof_correction": self.dof_correction,
            "spectral_radius": self.spectral_radius,
            "stationary": self.stationary,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "PvarModel":
        return cls(
            p=int(data["p"]),
            phi=np.asarray(data["phi"], dtype=float),
            mu=np.asarray(data["mu"], dtype=float),
            sigma=np.asarray(data["sigma"], dtype=float),
            var_names=tuple(data["var_names"]),
            nobs=int(data["nobs"]),
            unit_ids=tuple(data.get("unit_ids", ())),
            dof_correction=bool(data.get("dof_correction", True)),
        )

    @classmethod
    def from_json(cls, text: str) -> "PvarModel":
        return cls.from_dict(json.loads(text))


def _lagged_arrays(values: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``Y (N, T-p, m)`` and ``X (N, T-p, mp)`` with lags 1..p."""
    t = values.shape[1]
    y = values[:, p:, :]
    x = np.concatenate([values[:, p - lag:t - lag, :] for lag in range(1, p + 1)], axis=2)
    return y, x


def fit_pvar(ds: PanelDataset, p: int, dof_correction: bool = True) -> PvarModel:
    """Within (LSDV) estimator of a fixed-effects PVAR(p).

    Each unit's dependent variables and lags are demeaned over its
    estimation sample, then all equations are fit by pooled OLS. With
    ``dof_correction`` the residual covariance is divided by
    ``N(T-p) - m p`` instead of ``N(T-p)``.
    """
    p = int(p)
    if p < 1:
        raise DataError(f"lag order must be positive, got {p}")
    n, t, m = ds.shape
    if t - p < m * p + 2:
        raise TooFewPeriods(f"T={t} too short for p={p} with m={m}: need T - p >= {m * p + 2}")
    y, x = _lagged_arrays(ds.values, p)
    y_mean = y.mean(axis=1, keepdims=True)
    x_mean = x.mean(axis=1, keepdims=True)
    yd = (y - y_mean).reshape(-1, m)
    xd = (x - x_mean).reshape(-1, m * p)
    xtx = xd.T @ xd
    if np.linalg.matrix_rank(xtx) < m * p or np.linalg.cond(xtx) > 1e14:
        raise SingularDesign("lagged regressor cross-product is singular")
    xtx_inv = np.linalg.inv(xtx)
    coef = np.linalg.solve(xtx, xd.T @ yd)  # (mp, m)
    resid = yd - xd @ coef
    nobs = resid.shape[0]
    denom = nobs - m * p if dof_correction else nobs
    sigma = resid.T @ resid / denom
    sigma = 0.5 * (sigma + sigma.T)

    phi = np.stack([coef[lag * m:(lag + 1) * m, :].T for lag in range(p)])
    # unit intercepts a_i = ybar_i - B' xbar_i, then mu_i = (I - sum Phi)^{-1} a_i
    intercepts = y_mean[:, 0, :] - x_mean[:, 0, :] @ coef
    long_run = np.eye(m) - phi.sum(axis=0)
    try:
        mu = np.linalg.solve(long_run, intercepts.T).T
    except np.linalg.LinAlgError:
        mu = np.full_like(intercepts, np.nan)

    return PvarModel(
        p=p,
        phi=phi,
        mu=mu,
        sigma=sigma,
        var_names=ds.var_names,
        nobs=nobs,
        residuals=resid.reshape(n, t - p, m),
        design=xd,
        unit_ids=ds.unit_ids,
        time_ids=ds.time_ids[p:],
        dof_correction=dof_correction,
        xtx_inv=xtx_inv,
    )


@dataclass(frozen=True)
class LagSelectionReport:
    """Information criteria per lag order on a common estimation sample.

    Values are ``-2 (L(p) - L(p_max)) + penalty(p)``, so fit enters as a
    likelihood-ratio loss against the largest model.
    """

    p: np.ndarray
    loglik: np.ndarray
    mbic: np.ndarray
    maic: np.ndarray
    mqic: np.ndarray
    nobs: int

    @property
    def recommended(self) -> dict:
        # argmin returns the first minimum, so ties go to the smallest p
        return {
            name: int(self.p[int(np.argmin(getattr(self, name)))])
            for name in ("mbic", "maic", "mqic")
        }

    def rows(self) -> list[dict]:
        return [
            {"p": int(p), "MBIC": float(b), "MAIC": float(a), "MQIC": float(q), "loglik": float(ll)}
            for p, b, a, q, ll in zip(self.p, self.mbic, self.maic, self.mqic, self.loglik)
        ]


def select_lag(ds: PanelDataset, p_max: int) -> LagSelectionReport:
    p_max = int(p_max)
    if p_max < 1:
        raise DataError("p_max must be at least 1")
    m = ds.n_vars
    if ds.n_periods - p_max < m * p_max + 2:
        raise TooFewPeriods(f"T={ds.n_periods} too short for p_max={p_max}")
    orders = np.arange(1, p_max + 1)
    loglik = np.empty(p_max)
    nobs = ds.n_units * (ds.n_periods - p_max)
    for j, p in enumerate(orders):
        model = fit_pvar(ds.drop_first(p_max - p), int(p), dof_correction=False)
        _, logdet = np.linalg.slogdet(model.sigma)
        loglik[j] = -0.5 * nobs * (m * np.log(2 * np.pi) + logdet + m)
    loss = -2.0 * (loglik - loglik[-1])
    q = m * m * orders
    return LagSelectionReport(
        p=orders,
        loglik=loglik,
        mbic=loss + q * np.log(nobs),
        maic=loss + 2.0 * q,
        mqic=loss + 2.0 * q * np.log(np.log(nobs)),
        nobs=nobs,
    )


@dataclass(frozen=True)
class AutocorrelationReport:
    """Per-variable pooled regression of residuals on their own first lag."""

    var_names: tuple
    coef: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    level: float

    @property
    def clean(self) -> bool:
        return bool(np.all((self.ci_lo <= 0.0) & (self.ci_hi >= 0.0)))

    def rows(self) -> list[dict]:
        return [
            {"variable": v, "coef": float(c), "se": float(s), "ci_lo": float(lo), "ci_hi": float(hi)}
            for v, c, s, lo, hi in zip(self.var_names, self.coef, self.se, self.ci_lo, self.ci_hi)
        ]


def lagged_residual_regression(residuals: np.ndarray, var_names: Sequence[str] | None = None,
                               level: float = 0.95) -> AutocorrelationReport:
    """OLS (with intercept) of ``u_{i,t,s}`` on ``u_{i,t-1,s}``, pooled over units."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim == 2:
        residuals = residuals[:, :, None]
    n, t, m = residuals.shape
    if t < 3:
        raise TooFewPeriods("need at least 3 residual periods per unit")
    var_names = tuple(var_names) if var_names is not None else tuple(f"v{k}" for k in range(m))
    coef, se = np.empty(m), np.empty(m)
    crit = None
    for s in range(m):
        y = residuals[:, 1:, s].ravel()
        x = residuals[:, :-1, s].ravel()
        xc = x - x.mean()
        sxx = xc @ xc
        if sxx <= 0 or not np.isfinite(sxx):
            raise DegenerateResiduals(f"lagged residual of {var_names[s]} has zero variance")
        b = xc @ (y - y.mean()) / sxx
        e = y - y.mean() - b * xc
        dof = y.size - 2
        coef[s] = b
        se[s] = np.sqrt(e @ e / dof / sxx)
        crit = stats.t.ppf(0.5 + level / 2, dof)
    return AutocorrelationReport(var_names, coef, se, coef - crit * se, coef + crit * se, level)


def residual_autocorrelation_check(model: PvarModel, level: float = 0.95) -> AutocorrelationReport:
    if model.residuals is None:
        raise DataError("model carries no residuals")
    return lagged_residual_regression(model.residuals, model.var_names, level)


@dataclass(frozen=True)
class NormalityReport:
    var_names: tuple
    statistic: np.ndarray
    pvalue: np.ndarray

    def rows(self) -> list[dict]:
        return [
            {"variable": v, "W": float(w), "pvalue": float(pv)}
            for v, w, pv in zip(self.var_names, self.statistic, self.pvalue)
        ]


def shapiro_wilk(x) -> tuple[float, float]:
    """Shapiro-Wilk ``(W, p-value)``; thin wrapper over scipy."""
    res = stats.shapiro(np.asarray(x, dtype=float))
    return float(res.statistic), float(res.pvalue)


def normality_test(model: PvarModel, min_obs: int = 8) -> NormalityReport:
    if model.residuals is None:
        raise DataError("model carries no residuals")
    pooled = model.residuals.reshape(-1, model.m)
    if pooled.shape[0] < min_obs:
        raise TooFewObservations(f"need at least {min_obs} residuals, have {pooled.shape[0]}")
    w, pv = zip(*(shapiro_wilk(pooled[:, s]) for s in range(model.m)))
    return NormalityReport(tuple(model.var_names), np.array(w), np.array(pv))
