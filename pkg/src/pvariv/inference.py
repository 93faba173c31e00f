"""Anderson-Rubin confidence sets for impulse responses by test inversion,
and delta-method (plug-in) comparison intervals.

For a response ``lambda`` at horizon ``h`` of variable ``s`` the moment is

    g(lambda0) = e_s' M_h(Phi) Gamma - lambda0 * e_1' Gamma

with ``M_h = C_h`` (point response) or ``sum_{k<=h} C_k`` (cumulative),
and ``Gamma`` the covariances of the reduced-form residuals with the
instrument. Its delta-method variance is quadratic in ``lambda0``, so the
statistic ``n g^2 / sigma^2`` can be evaluated on a whole grid at once.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .errors import DataError, DegenerateInstrument, GridInsufficient, SingularCovariance
from .pvar import PvarModel

__all__ = [
    "ConfidenceSet",
    "IvMoments",
    "ArQuadric",
    "WeakInstrumentWarning",
    "ar_confidence_set",
    "plug_in_confidence_set",
    "variance_lambda",
    "ma_jacobian_fd",
    "ma_jacobian_exact",
    "DEFAULT_GRID_POINTS",
    "DEFAULT_GRID_HALF_WIDTH",
]

DEFAULT_GRID_POINTS = 2001
DEFAULT_GRID_HALF_WIDTH = 20.0
_MAX_EXPANSIONS = 3


class WeakInstrumentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ConfidenceSet:
    """Union of disjoint ordered intervals; endpoints may be infinite."""

    level: float
    segments: tuple
    grid: tuple | None = None
    empty_on_grid: bool = False
    weak_warning: bool = False

    @property
    def unbounded(self) -> bool:
        return any(math.isinf(lo) or math.isinf(hi) for lo, hi in self.segments)

    @property
    def connected(self) -> bool:
        return len(self.segments) == 1

    @property
    def width(self) -> float:
        return float(sum(hi - lo for lo, hi in self.segments))

    @property
    def bounds(self) -> tuple:
        if not self.segments:
            return (math.nan, math.nan)
        return (self.segments[0][0], self.segments[-1][1])

    def contains(self, x: float) -> bool:
        return any(lo <= x <= hi for lo, hi in self.segments)

    def scaled(self, c: float) -> "ConfidenceSet":
        """The set ``{c * x}``."""
        if c == 0:
            raise DataError("scale must be non-zero")
        segs = [(c * lo, c * hi) if c > 0 else (c * hi, c * lo) for lo, hi in self.segments]
        segs.sort()
        return ConfidenceSet(self.level, tuple(segs), self.grid, self.empty_on_grid, self.weak_warning)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "segments": [[_jsonable(lo), _jsonable(hi)] for lo, hi in self.segments],
            "unbounded": self.unbounded,
            "empty_on_grid": self.empty_on_grid,
        }


def _jsonable(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


# ---------------------------------------------------------------------------
# MA coefficients and their derivatives with respect to the slope matrix


def _ma_stack(coef: np.ndarray, m: int, horizon: int) -> np.ndarray:
    """``C_0..C_H`` from the stacked slope matrix ``B`` of shape ``(mp, m)``."""
    p = coef.shape[0] // m
    comp = np.zeros((m * p, m * p))
    comp[:m, :] = coef.T
    if p > 1:
        comp[m:, :-m] = np.eye(m * (p - 1))
    out = np.empty((horizon + 1, m, m))
    power = np.eye(m * p)
    for h in range(horizon + 1):
        out[h] = power[:m, :m]
        power = comp @ power
    return out


def ma_jacobian_fd(coef, gamma, horizon: int, rel_step: float = 1e-6) -> np.ndarray:
    """Forward-difference Jacobian of ``C_h(B) gamma`` with respect to ``vec(B)``.

    ``vec`` stacks the columns of ``B`` (one column per equation). Returns
    an array of shape ``(H+1, m, m*m*p)``.
    """
    coef = np.asarray(coef, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    mp, m = coef.shape
    base = _ma_stack(coef, m, horizon) @ gamma
    jac = np.empty((horizon + 1, m, mp * m))
    for k in range(m):
        for a in range(mp):
            step = rel_step * (1.0 + abs(coef[a, k]))
            bumped = coef.copy()
            bumped[a, k] += step
            jac[:, :, k * mp + a] = (_ma_stack(bumped, m, horizon) @ gamma - base) / step
    return jac


def ma_jacobian_exact(coef, gamma, horizon: int) -> np.ndarray:
    """Product-rule Jacobian, ``d F^h = sum_k F^k dF F^(h-1-k)``."""
    coef = np.asarray(coef, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    mp, m = coef.shape
    p = mp // m
    comp = np.zeros((mp, mp))
    comp[:m, :] = coef.T
    if p > 1:
        comp[m:, :-m] = np.eye(m * (p - 1))
    powers = [np.eye(mp)]
    for _ in range(horizon):
        powers.append(comp @ powers[-1])
    sel = np.zeros((mp, m))
    sel[:m, :] = np.eye(m)
    jac = np.zeros((horizon + 1, m, mp * m))
    for h in range(1, horizon + 1):
        for k in range(h):
            left = (sel.T @ powers[k])[:, :m]  # rows s, columns = perturbed row r < m
            right = powers[h - 1 - k] @ (sel @ gamma)  # (mp,)
            # d/dF[r, c] contributes left[s, r] * right[c]; B[c, r] = F[r, c]
            jac[h] += np.einsum("sr,c->src", left, right).reshape(m, m * mp)
    return jac


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArQuadric:
    """``stat(l) = n (num - l den)^2 / (v11 - 2 l v12 + l^2 v22)``."""

    num: float
    den: float
    v11: float
    v12: float
    v22: float
    n: int

    @property
    def estimate(self) -> float:
        return self.num / self.den if self.den != 0 else math.nan

    def variance(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.v11 - 2.0 * lam * self.v12 + lam * lam * self.v22

    def statistic(self, lam):
        lam = np.asarray(lam, dtype=float)
        g = self.num - lam * self.den
        var = self.variance(lam)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(var > 0, self.n * g * g / np.where(var > 0, var, 1.0),
                           np.where(g == 0, 0.0, np.inf))
        return out

    def tail_statistic(self) -> float:
        """Limit of the statistic as ``|lambda| -> inf``."""
        if self.v22 <= 0:
            return math.inf
        return self.n * self.den**2 / self.v22

    def wald_se(self) -> float:
        lam = self.estimate
        if not np.isfinite(lam) or self.den == 0:
            return math.inf
        var = float(self.variance(lam))
        return math.sqrt(max(var, 0.0) / self.n) / abs(self.den)


class IvMoments:
    """Residual/instrument moments and their joint covariance.

    Parameters
    ----------
    model : PvarModel
        Fitted model carrying residuals and the demeaned design.
    z : array-like or InstrumentSeries
        Instrument aligned with ``model.residuals`` (``(N, T-p)``), or the
        full ``(N, T)`` panel, in which case the first ``p`` periods are dropped.
    variance : {"iid", "cluster"}
        ``iid``: homoskedastic moments independent across (unit, period).
        ``cluster``: robust to arbitrary dependence within a unit.
    jacobian : {"fd", "exact"}
        How derivatives of the MA coefficients are computed.
    """

    def __init__(self, model: PvarModel, z, variance: str = "iid", jacobian: str = "fd"):
        if model.residuals is None or model.design is None:
            raise DataError("inference needs a model fitted in this session (residuals and design)")
        if variance not in ("iid", "cluster"):
            raise DataError(f"variance must be 'iid' or 'cluster', got {variance!r}")
        if jacobian not in ("fd", "exact"):
            raise DataError(f"jacobian must be 'fd' or 'exact', got {jacobian!r}")
        self.model = model
        self.variance = variance
        self.jacobian = jacobian
        resid = model.residuals
        n_units, t_eff, m = resid.shape
        zarr = np.asarray(getattr(z, "values", z), dtype=float)
        if zarr.shape == (n_units, t_eff + model.p):
            zarr = zarr[:, model.p:]
        if zarr.shape != (n_units, t_eff):
            raise DataError(f"instrument shape {zarr.shape} does not match residuals {(n_units, t_eff)}")
        u = resid.reshape(-1, m)
        x = model.design
        n = u.shape[0]
        zf = zarr.ravel()
        zc = zf - zf.mean()
        szz = zc @ zc / n
        if szz <= 1e-28 * max(1.0, zf.mean() ** 2):
            raise DegenerateInstrument("instrument has zero variance")
        gamma = u.T @ zc / n
        v = u - np.outer(zc, gamma / szz)
        mp = x.shape[1]
        q_inv = np.linalg.inv(x.T @ x / n)

        if variance == "iid":
            w_bb = np.kron(model.sigma, q_inv)
            s_uv = u.T @ v / n
            s_xz = x.T @ zc / n
            w_bg = np.kron(np.eye(m), q_inv) @ np.kron(s_uv, s_xz[:, None])
            w_gg = szz * (v.T @ v) / (n - 1)
        else:
            psi_b = np.einsum("ik,ia->ika", u, x @ q_inv).reshape(n, m * mp)
            psi_g = v * zc[:, None]
            psi = np.hstack([psi_b, psi_g])
            groups = np.repeat(np.arange(n_units), t_eff)
            sums = np.zeros((n_units, psi.shape[1]))
            np.add.at(sums, groups, psi)
            w = sums.T @ sums / n
            w_bb, w_bg, w_gg = w[:m * mp, :m * mp], w[:m * mp, m * mp:], w[m * mp:, m * mp:]

        self.n = n
        self.m = m
        self.gamma = gamma
        self.z_var = szz
        self.cov = np.block([[w_bb, w_bg], [w_bg.T, w_gg]])
        self.cov = 0.5 * (self.cov + self.cov.T)
        if not np.all(np.isfinite(self.cov)):
            raise SingularCovariance("non-finite moment covariance")
        self._jac_cache: dict[int, np.ndarray] = {}

    @property
    def first_stage_f(self) -> float:
        w11 = self.cov[-self.m, -self.m]
        return math.inf if w11 <= 0 else self.n * self.gamma[0] ** 2 / w11

    def _jacobian(self, horizon: int) -> np.ndarray:
        cached = [h for h in self._jac_cache if h >= horizon]
        if cached:
            return self._jac_cache[min(cached)][:horizon + 1]
        coef = self.model.coef_matrix
        fn = ma_jacobian_fd if self.jacobian == "fd" else ma_jacobian_exact
        jac = fn(coef, self.gamma, horizon)
        self._jac_cache[horizon] = jac
        return jac

    def quadric(self, horizon: int, var: int, cumulative: bool = False) -> ArQuadric:
        if not 0 <= var < self.m:
            raise DataError(f"variable index {var} out of range")
        if horizon < 0:
            raise DataError("horizon must be non-negative")
        coefs = _ma_stack(self.model.coef_matrix, self.m, horizon)
        jac = self._jacobian(horizon)
        if cumulative:
            mat = coefs.sum(axis=0)
            d_b = jac[:, var, :].sum(axis=0)
        else:
            mat = coefs[horizon]
            d_b = jac[horizon, var, :]
        g1 = np.concatenate([d_b, mat[var, :]])
        g2 = np.zeros_like(g1)
        g2[d_b.size] = 1.0
        w = self.cov
        return ArQuadric(
            num=float(mat[var, :] @ self.gamma),
            den=float(self.gamma[0]),
            v11=float(g1 @ w @ g1),
            v12=float(g1 @ w @ g2),
            v22=float(g2 @ w @ g2),
            n=self.n,
        )


def _moments(model, z, variance, moments):
    if moments is not None:
        return moments
    return IvMoments(model, z, variance=variance)


def variance_lambda(model: PvarModel, z, horizon: int, var: int, lambda0: float,
                    variance: str = "iid", cumulative: bool = False, moments: IvMoments | None = None) -> float:
    """Delta-method asymptotic variance of ``sqrt(n) g(lambda0)``."""
    q = _moments(model, z, variance, moments).quadric(horizon, var, cumulative)
    return float(q.variance(lambda0))


def _segments_from_mask(grid, accepted, f, lo_open, hi_open):
    segs = []
    idx = np.flatnonzero(accepted)
    if idx.size == 0:
        return segs
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    for a, b in zip(starts, ends):
        if a == 0 and lo_open:
            lo = -math.inf
        elif a == 0:
            lo = grid[0]
        else:
            lo = _refine(f, grid[a - 1], grid[a])
        if b == grid.size - 1 and hi_open:
            hi = math.inf
        elif b == grid.size - 1:
            hi = grid[-1]
        else:
            hi = _refine(f, grid[b], grid[b + 1])
        segs.append((float(lo), float(hi)))
    return segs


def _refine(f, a, b):
    fa, fb = f(a), f(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    if np.sign(fa) == np.sign(fb) or not (np.isfinite(fa) and np.isfinite(fb)):
        return 0.5 * (a + b)
    return optimize.brentq(f, a, b, xtol=1e-14 * max(1.0, abs(a), abs(b)), rtol=4 * np.finfo(float).eps)


def invert_quadric(q: ArQuadric, alpha: float = 0.05, grid=None, allow_empty: bool = False) -> ConfidenceSet:
    """Grid inversion of the AR statistic with boundary refinement.

    Default grid: ``DEFAULT_GRID_POINTS`` points over the estimate plus or
    minus ``DEFAULT_GRID_HALF_WIDTH`` Wald standard errors, widened by a
    factor of four (up to three times) while an endpoint is accepted. An
    endpoint still accepted after that, with the statistic's limit at
    infinity also below the critical value, makes the set unbounded on
    that side.
    """
    if not 0 < alpha < 1:
        raise DataError(f"alpha must be in (0, 1), got {alpha}")
    crit = stats.chi2.ppf(1 - alpha, 1)
    level = 1 - alpha

    def excess(lam):
        # <= 0 exactly on the acceptance region; avoids dividing by the variance
        g = q.num - lam * q.den
        return float(q.n * g * g - crit * q.variance(lam))

    tails_accepted = q.tail_statistic() <= crit
    custom = grid is not None
    if custom:
        lo, hi, npts = grid
        npts = int(npts)
        if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo and npts >= 2):
            raise DataError(f"invalid grid {grid!r}")
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    else:
        npts = DEFAULT_GRID_POINTS
        center = q.estimate if np.isfinite(q.estimate) else 0.0
        se = q.wald_se()
        if se == 0.0:
            # zero sampling variance: only the point estimate survives
            return ConfidenceSet(level, ((center, center),), (center, center, 1))
        if not np.isfinite(se):
            se = max(1.0, abs(center))
        half = DEFAULT_GRID_HALF_WIDTH * se
        # make sure every boundary of the acceptance region lies inside the grid
        coeffs = [q.n * q.den**2 - crit * q.v22,
                  -2.0 * q.n * q.num * q.den + 2.0 * crit * q.v12,
                  q.n * q.num**2 - crit * q.v11]
        roots = np.roots(coeffs) if np.any(coeffs) else np.array([])
        roots = roots[np.abs(roots.imag) <= 1e-12 * np.maximum(1.0, np.abs(roots.real))].real
        if roots.size:
            half = max(half, 1.25 * float(np.max(np.abs(roots - center))))

    for expansion in range(_MAX_EXPANSIONS + 1):
        pts = np.linspace(center - half, center + half, npts)
        accepted = q.statistic(pts) <= crit
        if not (accepted[0] or accepted[-1]) or expansion == _MAX_EXPANSIONS:
            break
        if tails_accepted:
            break
        half *= 4.0

    if not accepted.any():
        if tails_accepted:
            accepted[0] = accepted[-1] = True
        elif allow_empty:
            return ConfidenceSet(level, (), (pts[0], pts[-1], npts), empty_on_grid=True)
        else:
            raise GridInsufficient("no grid point accepted; widen or refine the grid")

    segs = _segments_from_mask(pts, accepted, excess,
                               lo_open=bool(accepted[0] and tails_accepted),
                               hi_open=bool(accepted[-1] and tails_accepted))
    return ConfidenceSet(level, tuple(segs), (float(pts[0]), float(pts[-1]), npts))


def ar_confidence_set(model: PvarModel, z, horizon: int, var: int, alpha: float = 0.05, grid=None,
                      variance: str = "iid", cumulative: bool = False,
                      moments: IvMoments | None = None, allow_empty: bool = False) -> ConfidenceSet:
    """AR confidence set for the unit-normalized response of ``var`` at ``horizon``.

    Accepts ``lambda0`` iff ``n g(lambda0)^2 / sigma^2(lambda0)`` is below
    the chi-squared(1) quantile. ``grid`` is ``(lo, hi, n_points)``.
    """
    q = _moments(model, z, variance, moments).quadric(horizon, var, cumulative)
    return invert_quadric(q, alpha=alpha, grid=grid, allow_empty=allow_empty)


def plug_in_confidence_set(model: PvarModel, z, horizon: int, var: int, alpha: float = 0.05,
                           variance: str = "iid", cumulative: bool = False,
                           moments: IvMoments | None = None, warn: bool = True) -> ConfidenceSet:
    """Delta-method Wald interval ``lambda_hat +/- z_{1-alpha/2} se``."""
    mom = _moments(model, z, variance, moments)
    q = mom.quadric(horizon, var, cumulative)
    lam = q.estimate
    se = q.wald_se()
    crit = stats.norm.ppf(1 - alpha / 2)
    weak = mom.first_stage_f < 10
    if weak and warn:
        warnings.warn(f"first-stage F = {mom.first_stage_f:.2f} < 10; plug-in interval unreliable",
                      WeakInstrumentWarning, stacklevel=2)
    return ConfidenceSet(1 - alpha, ((lam - crit * se, lam + crit * se),), weak_warning=weak)
