"""One-step-ahead central and quantile forecasts for latent factor series.

Three interchangeable engines: an IID bootstrap of the sample mean, quantile
gradient-boosted trees on lagged time-series features, and a file adapter for
forecasts produced by an external model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class QuantileForecast:
    """Central forecast plus a level -> value quantile map for one factor.

    Quantile values are re-sorted ascending across ascending levels on
    construction, so the monotonicity invariant always holds.
    """

    factor_id: int
    target_period: int
    central: float
    quantiles: dict[float, float] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.central):
            raise ValueError("central forecast must be finite")
        levels = sorted(self.quantiles)
        values = sorted(self.quantiles[a] for a in levels)
        self.quantiles = dict(zip(levels, values))


from .features import FEATURE_NAMES, FeatureVector, build_features  # noqa: E402
from .iid_bootstrap import iid_bs_forecast                          # noqa: E402
from .qboost import (GbtConfig, GbtModel, pinball_loss, qboost_forecast,  # noqa: E402
                     qboost_train, select_peers)
from .external import external_forecast_load, write_forecast_csv   # noqa: E402

__all__ = [
    "QuantileForecast", "FeatureVector", "FEATURE_NAMES", "build_features",
    "iid_bs_forecast", "GbtConfig", "GbtModel", "qboost_train",
    "qboost_forecast", "pinball_loss", "select_peers",
    "external_forecast_load", "write_forecast_csv",
]
