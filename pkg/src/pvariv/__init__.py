"""Panel structural VARs identified with an external instrument."""

from .errors import *  # noqa: F401,F403
from .inference import ConfidenceSet, IvMoments, ar_confidence_set, plug_in_confidence_set, variance_lambda
from .irf import IrfResult, cumulative, irf_point, ma_coefficients
from .montecarlo import McConfig, McReport, build_dgp, coverage_experiment, simulate_panel
from .panel_data import (
    GrowthSpec,
    InstrumentMode,
    InstrumentSeries,
    PanelDataset,
    build_instrument,
    growth_transform,
    load_csv,
)
from .pvar import PvarModel, fit_pvar, normality_test, residual_autocorrelation_check, select_lag
from .svar_iv import (
    IvEstimate,
    Normalization,
    StructuralColumn,
    ar_statistic_point,
    first_stage,
    identify,
    iv_ratio,
    reduced_form,
    standardized_shock_scale,
)

__version__ = "0.1.0"

__all__ = [
    "ConfidenceSet",
    "GrowthSpec",
    "InstrumentMode",
    "InstrumentSeries",
    "IrfResult",
    "IvEstimate",
    "IvMoments",
    "McConfig",
    "McReport",
    "Normalization",
    "PanelDataset",
    "PvarModel",
    "StructuralColumn",
    "ar_confidence_set",
    "ar_statistic_point",
    "build_dgp",
    "build_instrument",
    "coverage_experiment",
    "cumulative",
    "first_stage",
    "fit_pvar",
    "growth_transform",
    "identify",
    "irf_point",
    "iv_ratio",
    "load_csv",
    "ma_coefficients",
    "normality_test",
    "plug_in_confidence_set",
    "reduced_form",
    "residual_autocorrelation_check",
    "select_lag",
    "simulate_panel",
    "standardized_shock_scale",
    "variance_lambda",
]
