"""Nonparametric baseline: sample-mean forecast with bootstrap quantiles."""
from __future__ import annotations

import numpy as np

from ..core import FactorSeries, RngStream
from ..errors import InsufficientData
from . import QuantileForecast

DEFAULT_RESAMPLES = 1000
LEVELS = (0.05, 0.95)


def iid_bs_forecast(series: FactorSeries, t: int, rng: RngStream,
                    b_resamples: int = DEFAULT_RESAMPLES) -> QuantileForecast:
    """Forecast period t+1 as the mean of the history up to t; the quantile
    band comes from the empirical 5%/95% quantiles of B resampled means."""
    hist = series.up_to(t)
    n = hist.shape[0]
    if n < 2:
        raise InsufficientData(f"factor {series.factor_id}: {n} observations up to {t}")
    central = float(np.mean(hist))
    idx = rng.generator().integers(0, n, size=(b_resamples, n))
    means = hist[idx].mean(axis=1)
    lo, hi = np.quantile(means, LEVELS)
    return QuantileForecast(series.factor_id, t + 1, central,
                            {LEVELS[0]: float(lo), LEVELS[1]: float(hi)})
