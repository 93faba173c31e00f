"""External-instrument identification of the policy shock's impact column."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import (
    DataError,
    DegenerateInstrument,
    NormalizationFailure,
    SingularQ,
    WeakDenominator,
)

__all__ = [
    "Normalization",
    "FirstStage",
    "IvEstimate",
    "StructuralColumn",
    "first_stage",
    "reduced_form",
    "iv_ratio",
    "standardized_shock_scale",
    "ar_statistic_point",
    "identify",
    "F_CAP",
]

F_CAP = 1e12


class Normalization(str, enum.Enum):
    UNIT = "unit"
    STANDARDIZED = "standardized"


def _prepare(z, *series, variance: str = "iid"):
    """Flatten aligned series and demean ``z`` by its grand mean.

    Returns the flat arrays plus cluster labels (one per unit) when the
    inputs are ``(N, T)`` panels.
    """
    z = np.asarray(getattr(z, "values", z), dtype=float)
    arrays = [np.asarray(s, dtype=float) for s in series]
    for a in arrays:
        if a.shape != z.shape:
            raise DataError(f"series shape {a.shape} does not match instrument shape {z.shape}")
    if variance not in ("iid", "cluster"):
        raise DataError(f"variance must be 'iid' or 'cluster', got {variance!r}")
    groups = None
    if variance == "cluster":
        if z.ndim != 2:
            raise DataError("cluster variance needs (N, T) panels")
        groups = np.repeat(np.arange(z.shape[0]), z.shape[1])
    zf = z.ravel()
    zc = zf - zf.mean()
    scale = max(1.0, abs(zf.mean()))
    if zc.size < 3 or np.sqrt(np.mean(zc * zc)) <= 1e-14 * scale:
        raise DegenerateInstrument("instrument has zero variance")
    return zc, [a.ravel() for a in arrays], groups


def _slope_and_var(y, zc, groups):
    """No-intercept slope of demeaned ``y`` on ``zc`` and its variance."""
    szz = zc @ zc
    yc = y - y.mean()
    b = (zc @ yc) / szz
    e = yc - b * zc
    if groups is None:
        var = (e @ e) / (y.size - 1) / szz
    else:
        scores = np.bincount(groups, weights=zc * e)
        var = (scores @ scores) / szz**2
    return b, var


@dataclass(frozen=True)
class FirstStage:
    delta: float
    se: float
    delta_ci: tuple
    f_stat: float
    f_capped: bool
    nobs: int


def first_stage(w_res, z, level: float = 0.95, variance: str = "iid") -> FirstStage:
    """Pooled OLS of the policy residual on the (demeaned) instrument."""
    zc, (w,), groups = _prepare(z, w_res, variance=variance)
    delta, var = _slope_and_var(w, zc, groups)
    se = float(np.sqrt(max(var, 0.0)))
    if se > 0 and np.isfinite(delta / se):
        f_stat, capped = float((delta / se) ** 2), False
        if f_stat > F_CAP:
            f_stat, capped = F_CAP, True
    else:
        f_stat, capped = F_CAP, True
    crit = stats.t.ppf(0.5 + level / 2, w.size - 1)
    return FirstStage(float(delta), se, (float(delta - crit * se), float(delta + crit * se)),
                      f_stat, capped, int(w.size))


def reduced_form(y_res, z) -> float:
    """``cov(y, z) / var(z)`` for one outcome residual."""
    zc, (y,), _ = _prepare(z, y_res)
    return float(zc @ (y - y.mean()) / (zc @ zc))


def iv_ratio(rho, delta: float, scale: float = 1.0) -> np.ndarray:
    """``beta_j = rho_j / delta``.

    ``scale`` is the natural magnitude of ``delta`` (``sd(w)/sd(z)``); the
    guard fires when ``|delta| <= 1e-12 * scale``.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if not np.isfinite(delta) or abs(delta) <= 1e-12 * abs(scale):
        raise WeakDenominator(f"first-stage coefficient {delta!r} is numerically zero")
    return rho / delta


@dataclass(frozen=True)
class StructuralColumn:
    """Impact column of the identified shock, policy variable first.

    ``gamma_vec`` stacks the projections ``(delta, rho_1, ..., rho_J)``.
    Under unit normalization ``r_col = (delta, beta_1, ..., beta_J)``;
    under standardized normalization ``r_col`` is the impact of a one
    standard deviation shock.
    """

    r_col: np.ndarray
    gamma_vec: np.ndarray
    normalization: Normalization = Normalization.UNIT

    @property
    def impulse(self) -> np.ndarray:
        """Impact vector per unit move in the policy variable."""
        return self.gamma_vec / self.gamma_vec[0]


def standardized_shock_scale(sigma, delta: float, rho) -> tuple[np.ndarray, StructuralColumn]:
    """Scale factors ``c`` giving a one-standard-deviation structural shock.

    Uses the covariance partition with the policy variable first. With
    ``k = rho / delta``::

        Q = k S11 k' - (S21 k' + k S21') + S22
        s12 s12' = (S21 - k S11)' Q^{-1} (S21 - k S11)
        s11 = sqrt(S11 - s12 s12')

    The impact column is ``s11 * (1, k)``, i.e. ``(delta c_1, rho_j c_j)``
    with every ``c_j = s11 / delta``.
    """
    sigma = np.asarray(sigma, dtype=float)
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    m = sigma.shape[0]
    if sigma.shape != (m, m) or rho.size != m - 1:
        raise DataError(f"sigma {sigma.shape} incompatible with {rho.size} outcomes")
    ratio = iv_ratio(rho, delta)[:, None]  # (J, 1)
    s11 = sigma[0, 0]
    s21 = sigma[1:, :1]
    s22 = sigma[1:, 1:]
    q = ratio * s11 @ ratio.T - (s21 @ ratio.T + ratio @ s21.T) + s22
    if np.linalg.cond(q) > 1e12:
        raise SingularQ("Q matrix is singular")
    gap = s21 - ratio * s11
    s12_sq = (gap.T @ np.linalg.solve(q, gap)).item()
    impact_var = s11 - s12_sq
    if not impact_var > 0:
        raise NormalizationFailure(f"implied impact variance {impact_var:.3g} is not positive")
    s11_impact = np.sqrt(impact_var)
    c = np.full(m, s11_impact / delta)
    gamma_vec = np.concatenate([[delta], rho])
    r_col = gamma_vec * c
    return c, StructuralColumn(r_col, gamma_vec, Normalization.STANDARDIZED)


def ar_statistic_point(y_res, w_res, z, beta0: float, variance: str = "iid") -> float:
    """Anderson-Rubin statistic for ``H0: beta = beta0``.

    Squared t-ratio of the slope of ``y - beta0 w`` on the demeaned
    instrument; chi-squared(1) under the null.
    """
    zc, (y, w), groups = _prepare(z, y_res, w_res, variance=variance)
    b, var = _slope_and_var(y - beta0 * w, zc, groups)
    if var <= 0:
        return 0.0 if b == 0 else float("inf")
    return float(b * b / var)


@dataclass(frozen=True)
class IvEstimate:
    delta: float
    delta_ci: tuple
    f_stat: float
    rho: np.ndarray
    beta: np.ndarray
    ar_stat: np.ndarray
    normalization: Normalization
    shock_scale: np.ndarray | None = None
    f_capped: bool = False
    delta_se: float = float("nan")
    nobs: int = 0
    variance: str = "iid"

    @property
    def column(self) -> StructuralColumn:
        gamma_vec = np.concatenate([[self.delta], self.rho])
        if self.normalization is Normalization.STANDARDIZED and self.shock_scale is not None:
            return StructuralColumn(gamma_vec * self.shock_scale, gamma_vec, Normalization.STANDARDIZED)
        return StructuralColumn(np.concatenate([[self.delta], self.beta]), gamma_vec, Normalization.UNIT)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "delta_se": self.delta_se,
            "ci": list(self.delta_ci),
            "f": self.f_stat,
            "f_capped": self.f_capped,
            "rho": self.rho.tolist(),
            "beta": self.beta.tolist(),
            "ar": self.ar_stat.tolist(),
            "normalization": self.normalization.value,
            "shock_scale": None if self.shock_scale is None else self.shock_scale.tolist(),
            "nobs": self.nobs,
            "variance": self.variance,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def identify(residuals, z, normalization: Normalization | str = Normalization.UNIT,
             sigma=None, beta0: float = 0.0, variance: str = "iid", level: float = 0.95) -> IvEstimate:
    """First stage, reduced forms, IV ratios and AR statistics in one pass.

    ``residuals`` is ``(N, T', m)`` with the policy variable first; ``z`` is
    the aligned ``(N, T')`` instrument.
    """
    normalization = Normalization(normalization)
    residuals = np.asarray(residuals, dtype=float)
    z = np.asarray(getattr(z, "values", z), dtype=float)
    w = residuals[..., 0]
    fs = first_stage(w, z, level=level, variance=variance)
    rho = np.array([reduced_form(residuals[..., j], z) for j in range(1, residuals.shape[-1])])
    zf = z.ravel()
    beta = iv_ratio(rho, fs.delta, scale=np.std(w) / np.std(zf))
    ar = np.array([
        ar_statistic_point(residuals[..., j], w, z, beta0, variance=variance)
        for j in range(1, residuals.shape[-1])
    ])
    scale = None
    if normalization is Normalization.STANDARDIZED:
        if sigma is None:
            raise DataError("standardized normalization needs the residual covariance")
        scale, _ = standardized_shock_scale(sigma, fs.delta, rho)
    return IvEstimate(
        delta=fs.delta,
        delta_ci=fs.delta_ci,
        f_stat=fs.f_stat,
        rho=rho,
        beta=beta,
        ar_stat=ar,
        normalization=normalization,
        shock_scale=scale,
        f_capped=fs.f_capped,
        delta_se=fs.se,
        nobs=fs.nobs,
        variance=variance,
    )
