"""Moving-average coefficients and impulse responses to the identified shock."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, WeakDenominator
from .pvar import PvarModel, companion_matrix
from .svar_iv import Normalization, StructuralColumn

__all__ = ["IrfResult", "ma_coefficients", "irf_point", "cumulative", "write_irf_csv", "DEFAULT_SHOCK"]

DEFAULT_SHOCK = 0.01


def ma_coefficients(phi, horizon: int) -> np.ndarray:
    """``C_0 .. C_H`` as an ``(H+1, m, m)`` array.

    ``C_h`` is the top-left ``m x m`` block of the companion matrix to the
    power ``h``.
    """
    if horizon < 0:
        raise DataError("horizon must be non-negative")
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 2:
        phi = phi[None]
    m = phi.shape[1]
    comp = companion_matrix(phi)
    out = np.empty((horizon + 1, m, m))
    power = np.eye(comp.shape[0])
    for h in range(horizon + 1):
        out[h] = power[:m, :m]
        power = comp @ power
    return out


@dataclass(frozen=True)
class IrfResult:
    """Responses of every variable to the identified shock.

    ``responses[h, s]`` is the response of variable ``s`` at horizon ``h``;
    ``cs``/``cs_cumulative`` map ``(h, s)`` to confidence sets already in
    the units of ``responses``.
    """

    responses: np.ndarray
    shock_size: float
    var_names: tuple
    normalization: Normalization = Normalization.UNIT
    cumulative: np.ndarray | None = None
    cs: dict = field(default_factory=dict)
    cs_cumulative: dict = field(default_factory=dict)

    @property
    def horizons(self) -> np.ndarray:
        return np.arange(self.responses.shape[0])

    @property
    def max_horizon(self) -> int:
        return self.responses.shape[0] - 1


def irf_point(model: PvarModel | np.ndarray, gamma: StructuralColumn, horizon: int = 10,
              shock_size: float = DEFAULT_SHOCK, var_names=None) -> IrfResult:
    """Point impulse responses.

    Unit normalization: ``shock_size * C_h Gamma / Gamma[0]``, so the policy
    variable moves by ``shock_size`` on impact and outcome ``j`` by
    ``shock_size * beta_j``. Standardized normalization:
    ``shock_size * C_h r_col`` (``shock_size`` in standard deviations).

    ``model`` may also be a bare ``(p, m, m)`` slope array.
    """
    phi = model.phi if isinstance(model, PvarModel) else np.asarray(model, dtype=float)
    if var_names is None:
        var_names = model.var_names if isinstance(model, PvarModel) else ()
    coefs = ma_coefficients(phi, horizon)
    if gamma.normalization is Normalization.STANDARDIZED:
        impulse = np.asarray(gamma.r_col, dtype=float)
    else:
        g = np.asarray(gamma.gamma_vec, dtype=float)
        if not np.isfinite(g[0]) or abs(g[0]) <= 1e-300:
            raise WeakDenominator("zero policy loading in the structural column")
        impulse = g / g[0]
    if impulse.size != coefs.shape[1]:
        raise DataError(f"column of length {impulse.size} for a {coefs.shape[1]}-variable model")
    responses = shock_size * (coefs @ impulse)
    return cumulative(IrfResult(responses, float(shock_size), tuple(var_names), gamma.normalization))


def cumulative(irf: IrfResult) -> IrfResult:
    """Attach running sums over horizons."""
    return replace(irf, cumulative=np.cumsum(irf.responses, axis=0))


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def write_irf_csv(irf: IrfResult, path) -> None:
    """Plot-data CSV: one row per (horizon, variable, set segment).

    Columns: ``horizon, variable, response, cumulative, segment, cs_lo,
    cs_hi, cum_cs_lo, cum_cs_hi``. Missing sets leave the interval cells
    empty; disconnected sets produce one row per segment.
    """
    cum = irf.cumulative if irf.cumulative is not None else np.cumsum(irf.responses, axis=0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["horizon", "variable", "response", "cumulative", "segment",
                         "cs_lo", "cs_hi", "cum_cs_lo", "cum_cs_hi"])
        for h in range(irf.responses.shape[0]):
            for s, name in enumerate(irf.var_names or range(irf.responses.shape[1])):
                pt = irf.cs.get((h, s))
                ct = irf.cs_cumulative.get((h, s))
                seg_pt = list(pt.segments) if pt is not None else []
                seg_ct = list(ct.segments) if ct is not None else []
                for k in range(max(1, len(seg_pt), len(seg_ct))):
                    a = seg_pt[k] if k < len(seg_pt) else None
                    b = seg_ct[k] if k < len(seg_ct) else None
                    writer.writerow([
                        h, name, _fmt(irf.responses[h, s]), _fmt(cum[h, s]), k,
                        _fmt(a[0]) if a else "", _fmt(a[1]) if a else "",
                        _fmt(b[0]) if b else "", _fmt(b[1]) if b else "",
                    ])
