"""Lagged time-series features for the boosted-tree forecaster.

37 features per (factor, period): lagged returns, moving averages, rolling
std / min / max, rates of change, long-window z-scores, a short-vs-long
momentum spread, and lags of three correlated peer factors.  Every value is
computed from data up to and including the anchor period t.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import FactorSeries
from ..errors import InsufficientHistory

LAGS = (1, 3, 5, 10)
WINDOWS = (3, 5, 10, 20)
ROC_LAGS = (1, 3, 5, 10)
Z_WINDOWS = (30, 60, 90)
PEER_LAGS = (1, 3, 5)
N_PEERS = 3

# longest window is 90, plus one extra observation of headroom
MIN_HISTORY = 91

FEATURE_NAMES: tuple[str, ...] = tuple(
    [f"lag_{l}" for l in LAGS]
    + [f"ma_{m}" for m in WINDOWS]
    + [f"std_{m}" for m in WINDOWS]
    + [f"min_{m}" for m in WINDOWS]
    + [f"max_{m}" for m in WINDOWS]
    + [f"roc_{l}" for l in ROC_LAGS]
    + [f"z_{m}" for m in Z_WINDOWS]
    + ["mom_5_20"]
    + [f"peer{p}_lag_{l}" for p in range(N_PEERS) for l in PEER_LAGS]
)
assert len(FEATURE_NAMES) == 37


@dataclass(frozen=True)
class FeatureVector:
    """Named feature values for one (factor, anchor period)."""

    factor_id: int
    period: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature value")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))


def build_features(series: FactorSeries, peers: list[FactorSeries], t: int) -> FeatureVector:
    """Feature vector anchored at period t (forecasting target is t+1)."""
    if len(peers) != N_PEERS:
        raise ValueError(f"need exactly {N_PEERS} peer series")
    r = series.up_to(t)
    if r.shape[0] < MIN_HISTORY:
        raise InsufficientHistory(
            f"factor {series.factor_id}: {r.shape[0]} observations up to {t}, need {MIN_HISTORY}")

    def rolling_std(window: np.ndarray) -> float:
        # exactly 0 on a constant window (avoids 1e-18 rounding artifacts)
        if window.min() == window.max():
            return 0.0
        return float(np.std(window, ddof=1))

    vals: list[float] = []
    vals += [r[-1 - l] for l in LAGS]
    means = {m: float(np.mean(r[-m:])) for m in (*WINDOWS, *Z_WINDOWS)}
    vals += [means[m] for m in WINDOWS]
    vals += [rolling_std(r[-m:]) for m in WINDOWS]
    vals += [float(np.min(r[-m:])) for m in WINDOWS]
    vals += [float(np.max(r[-m:])) for m in WINDOWS]
    for l in ROC_LAGS:
        past = r[-1 - l]
        vals.append(r[-1] / past - 1.0 if past != 0.0 else 0.0)
    for m in Z_WINDOWS:
        sd = rolling_std(r[-m:])
        vals.append((r[-1] - means[m]) / sd if sd != 0.0 else 0.0)
    vals.append(means[5] - means[20])
    for peer in peers:
        pr = peer.up_to(t)
        if pr.shape[0] < max(PEER_LAGS) + 1:
            raise InsufficientHistory(f"peer {peer.factor_id}: too short at {t}")
        vals += [pr[-1 - l] for l in PEER_LAGS]
    return FeatureVector(series.factor_id, t, np.asarray(vals, dtype=float))
