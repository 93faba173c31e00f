"""Balanced panel container, CSV ingestion, growth transforms and the
aggregate (Bartik-type) instrument."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DegenerateDenominator,
    DuplicateKey,
    ParseError,
    UnbalancedPanel,
)

__all__ = [
    "PanelDataset",
    "GrowthSpec",
    "InstrumentMode",
    "InstrumentSeries",
    "load_csv",
    "write_csv",
    "growth_transform",
    "build_instrument",
]


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel of ``N`` units, ``T`` periods and ``m`` variables.

    ``values[i, t, k]`` is variable ``var_names[k]`` for unit ``unit_ids[i]``
    in period ``time_ids[t]``.
    """

    unit_ids: tuple
    time_ids: tuple
    var_names: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        object.__setattr__(self, "unit_ids", tuple(self.unit_ids))
        object.__setattr__(self, "time_ids", tuple(self.time_ids))
        object.__setattr__(self, "var_names", tuple(self.var_names))
        if values.ndim != 3:
            raise DataError(f"values must be N x T x m, got shape {values.shape}")
        n, t, m = values.shape
        if (n, t, m) != (len(self.unit_ids), len(self.time_ids), len(self.var_names)):
            raise DataError(
                f"label lengths ({len(self.unit_ids)}, {len(self.time_ids)}, "
                f"{len(self.var_names)}) do not match values shape {values.shape}"
            )
        if n < 2:
            raise DataError("a panel needs at least two units")
        if len(set(self.var_names)) != m:
            raise DataError("duplicate variable names")
        if any(b <= a for a, b in zip(self.time_ids, self.time_ids[1:])):
            raise DataError("time_ids must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise UnbalancedPanel("panel contains missing or non-finite cells")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]

    @property
    def n_vars(self) -> int:
        return self.values.shape[2]

    def variable(self, name: str) -> np.ndarray:
        """Return the ``N x T`` slice for one variable."""
        try:
            k = self.var_names.index(name)
        except ValueError:
            raise DataError(f"unknown variable {name!r}; have {list(self.var_names)}") from None
        return self.values[:, :, k]

    def select(self, names: Sequence[str]) -> "PanelDataset":
        cols = [self.var_names.index(n) if n in self.var_names else -1 for n in names]
        if -1 in cols:
            missing = [n for n, c in zip(names, cols) if c < 0]
            raise DataError(f"unknown variables {missing}")
        return PanelDataset(self.unit_ids, self.time_ids, tuple(names), self.values[:, :, cols])

    def drop_first(self, k: int) -> "PanelDataset":
        """Drop the first ``k`` periods."""
        return PanelDataset(self.unit_ids, self.time_ids[k:], self.var_names, self.values[:, k:, :])


class GrowthSpec:
    """``(num_t - num_{t-k}) / den_{t-k}`` growth of one variable."""

    def __init__(self, numerator_var: str, denominator_var: str, horizon_k: int = 1, name: str | None = None):
        if horizon_k not in (1, 2):
            raise DataError(f"horizon_k must be 1 or 2, got {horizon_k}")
        self.numerator_var = numerator_var
        self.denominator_var = denominator_var
        self.horizon_k = int(horizon_k)
        self.name = name or f"{numerator_var}_g{horizon_k}"

    def __repr__(self):
        return (
            f"GrowthSpec({self.numerator_var!r}, {self.denominator_var!r}, "
            f"horizon_k={self.horizon_k}, name={self.name!r})"
        )


class InstrumentMode(str, enum.Enum):
    COMMON_AGGREGATE = "common_aggregate"
    SHARE_WEIGHTED = "share_weighted"


@dataclass(frozen=True)
class InstrumentSeries:
    values: np.ndarray
    construction_tag: InstrumentMode
    unit_ids: tuple = field(default=())
    time_ids: tuple = field(default=())

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"instrument must be N x T, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("instrument contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "construction_tag", InstrumentMode(self.construction_tag))
        object.__setattr__(self, "unit_ids", tuple(self.unit_ids))
        object.__setattr__(self, "time_ids", tuple(self.time_ids))

    def drop_first(self, k: int) -> "InstrumentSeries":
        return InstrumentSeries(self.values[:, k:], self.construction_tag, self.unit_ids, self.time_ids[k:])


def load_csv(path, schema: Mapping | None = None) -> PanelDataset:
    """Read a long-format panel CSV.

    Parameters
    ----------
    path : path-like
        File with a header row; one row per (unit, time).
    schema : mapping, optional
        ``{"unit": <col>, "time": <col>, "vars": [<col>, ...]}``. Defaults to
        ``unit``/``time`` columns and every other column as a variable.

    Raises
    ------
    ParseError
        Non-numeric value or non-integer time.
    DuplicateKey
        Repeated (unit, time) pair.
    UnbalancedPanel
        Missing (unit, time) cell or empty value.
    """
    schema = dict(schema or {})
    unit_col = schema.get("unit", "unit")
    time_col = schema.get("time", "time")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    raw.columns = [c.strip() for c in raw.columns]
    var_cols = list(schema.get("vars") or [c for c in raw.columns if c not in (unit_col, time_col)])
    missing = [c for c in [unit_col, time_col, *var_cols] if c not in raw.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")
    if not var_cols:
        raise ParseError(f"{path}: no variable columns")

    units = raw[unit_col].str.strip()
    try:
        times = raw[time_col].str.strip().map(int)
    except ValueError as exc:
        raise ParseError(f"{path}: time column must hold integer years ({exc})") from exc

    data = {}
    for col in var_cols:
        cells = raw[col].str.strip()
        if (cells == "").any():
            row = int(np.flatnonzero((cells == "").to_numpy())[0]) + 2
            raise UnbalancedPanel(f"{path}: empty cell in column {col!r} (line {row})")
        try:
            data[col] = cells.map(float)
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric value in column {col!r} ({exc})") from exc
    frame = pd.DataFrame({"unit": units, "time": times, **data})

    dup = frame.duplicated(["unit", "time"])
    if dup.any():
        first = frame.loc[dup, ["unit", "time"]].iloc[0]
        raise DuplicateKey(f"{path}: duplicate key unit={first['unit']!r} time={first['time']}")

    unit_ids = sorted(frame["unit"].unique(), key=_natural_key)
    time_ids = sorted(frame["time"].unique())
    if len(frame) != len(unit_ids) * len(time_ids):
        raise UnbalancedPanel(
            f"{path}: {len(frame)} rows but {len(unit_ids)} units x {len(time_ids)} periods"
        )
    frame = frame.set_index(["unit", "time"]).reindex(
        pd.MultiIndex.from_product([unit_ids, time_ids], names=["unit", "time"])
    )
    values = frame[var_cols].to_numpy(dtype=float).reshape(len(unit_ids), len(time_ids), len(var_cols))
    if not np.all(np.isfinite(values)):
        raise UnbalancedPanel(f"{path}: non-finite cells")
    return PanelDataset(tuple(unit_ids), tuple(int(t) for t in time_ids), tuple(var_cols), values)


def _natural_key(label: str):
    # numeric unit labels sort numerically, everything else lexically
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def write_csv(ds: PanelDataset, path, extra: Mapping[str, np.ndarray] | None = None) -> None:
    """Write ``ds`` in the long format read by :func:`load_csv`.

    ``extra`` adds ``N x T`` columns (e.g. an instrument) after the variables.
    """
    extra = dict(extra or {})
    n, t, _ = ds.shape
    frame = pd.DataFrame(
        {
            "unit": np.repeat(np.asarray(ds.unit_ids, dtype=object), t),
            "time": np.tile(np.asarray(ds.time_ids), n),
        }
    )
    for k, name in enumerate(ds.var_names):
        frame[name] = ds.values[:, :, k].ravel()
    for name, arr in extra.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (n, t):
            raise DataError(f"extra column {name!r} has shape {arr.shape}, expected {(n, t)}")
        frame[name] = arr.ravel()
    frame.to_csv(path, index=False, float_format="%.17g")


def growth_transform(ds: PanelDataset, specs: Sequence[GrowthSpec]) -> PanelDataset:
    """Apply ``(num_t - num_{t-k}) / den_{t-k}`` for each spec.

    The output holds one variable per spec (named ``spec.name``) and drops
    the first ``k`` periods.
    """
    if not specs:
        raise DataError("no growth specs given")
    ks = {s.horizon_k for s in specs}
    if len(ks) != 1:
        raise DataError(f"all growth specs must share one horizon, got {sorted(ks)}")
    k = ks.pop()
    if ds.n_periods <= k:
        raise DataError(f"need more than {k} periods for a {k}-period growth rate")
    out = np.empty((ds.n_units, ds.n_periods - k, len(specs)))
    for j, spec in enumerate(specs):
        num = ds.variable(spec.numerator_var)
        den = ds.variable(spec.denominator_var)[:, :-k]
        if np.any(den <= 0):
            raise DegenerateDenominator(f"non-positive values in denominator {spec.denominator_var!r}")
        out[:, :, j] = (num[:, k:] - num[:, :-k]) / den
    return PanelDataset(ds.unit_ids, ds.time_ids[k:], tuple(s.name for s in specs), out)


def build_instrument(
    ds: PanelDataset,
    spending_var: str,
    gdp_var: str,
    mode: InstrumentMode | str = InstrumentMode.COMMON_AGGREGATE,
    horizon_k: int = 1,
) -> InstrumentSeries:
    """National spending growth instrument, aligned with the growth panel.

    ``common_aggregate``: ``(sum_i exp_t - sum_i exp_{t-k}) / sum_i gdp_{t-k}``,
    the same for every unit. ``share_weighted``: that series times unit
    ``i``'s sample-mean share of national spending.
    """
    mode = InstrumentMode(mode)
    spend = ds.variable(spending_var)
    gdp = ds.variable(gdp_var)
    k = int(horizon_k)
    if ds.n_periods <= k:
        raise DataError(f"need more than {k} periods")
    nat_spend = spend.sum(axis=0)
    nat_gdp = gdp.sum(axis=0)[:-k]
    if np.any(nat_gdp <= 0):
        raise DegenerateDenominator("national GDP is non-positive in some period")
    national = (nat_spend[k:] - nat_spend[:-k]) / nat_gdp
    if mode is InstrumentMode.COMMON_AGGREGATE:
        values = np.broadcast_to(national, (ds.n_units, national.size)).copy()
    else:
        if np.any(nat_spend == 0):
            raise DegenerateDenominator("national spending is zero in some period")
        shares = (spend / nat_spend).mean(axis=1)
        values = shares[:, None] * national[None, :]
    return InstrumentSeries(values, mode, ds.unit_ids, ds.time_ids[k:])
