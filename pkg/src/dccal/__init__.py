"""Semi-parametric DCC model for joint portfolio VaR and ES.

Estimation minimizes the asymmetric Laplace (AL) joint loss in two steps:
per-asset ES-CAViaR models with Indirect-GARCH dynamics give volatilities,
then a correlation-targeted DCC recursion and the portfolio tail factors are
fitted on the portfolio return.
"""

from .dcc import DccFit, DccParams, fit_dcc, forecast_one_step, refilter_dcc
from .errors import (
    DccAlError,
    DimError,
    DomainError,
    FitError,
    InfeasibleError,
    InfeasibleParams,
    IngestError,
    InitError,
    InternalError,
    RankError,
    SimError,
    TestError,
)
from .escaviar import AssetRiskFit, AssetRiskParams, filter_asset, fit_asset
from .optimizer import MultistartConfig
from .scoring import JointForecast, RiskLevel, al_log_score, quantile_loss
from .timeseries import PortfolioWeights, ReturnPanel, WindowSpec, equal_weights, load_panel

__version__ = "0.1.0"

__all__ = [
    "AssetRiskFit", "AssetRiskParams", "DccAlError", "DccFit", "DccParams", "DimError",
    "DomainError", "FitError", "InfeasibleError", "InfeasibleParams", "IngestError", "InitError",
    "InternalError", "JointForecast", "MultistartConfig", "PortfolioWeights", "RankError",
    "ReturnPanel", "RiskLevel", "SimError", "TestError", "WindowSpec", "al_log_score",
    "equal_weights", "filter_asset", "fit_asset", "fit_dcc", "forecast_one_step", "load_panel",
    "quantile_loss", "refilter_dcc",
]
