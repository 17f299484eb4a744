"""Uncertainty-ranked factor selection and tangency portfolio construction.

Factors are scored by the mean absolute deviation of their quantile
forecasts from the central forecast, ranked ascending, and the lowest-
uncertainty subset feeds a maximum-Sharpe (tangency) portfolio in factor
space, which is then projected to tradable asset weights, truncated to the
largest positions and leg-normalized to a gross-2, net-0 book.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import projection_operator
from .errors import AllZeroWeights, DegenerateDenominator, SingularCovariance
from .forecasters import QuantileForecast

TOP_N_DEFAULT = 300
DENOMINATOR_EPS = 1e-12
COV_RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class UncertaintyScore:
    factor_id: int
    u: float
    target_period: int


@dataclass
class SelectionPlan:
    """Everything chosen at one rebalance for one (engine, kappa) pair."""

    ranked_factors: list[int]
    kappa: int
    mu: np.ndarray
    sigma_f: np.ndarray
    w_f: np.ndarray
    w_r: np.ndarray

    @property
    def selected(self) -> list[int]:
        return self.ranked_factors[:self.kappa]


def uncertainty(fc: QuantileForecast) -> UncertaintyScore:
    """Mean absolute deviation of the quantile forecasts from the central."""
    if not fc.quantiles:
        raise ValueError(f"factor {fc.factor_id}: no quantile levels")
    u = float(np.mean([abs(v - fc.central) for v in fc.quantiles.values()]))
    return UncertaintyScore(fc.factor_id, u, fc.target_period)


def rank_factors(scores: list[UncertaintyScore]) -> list[int]:
    """Factor ids ascending by uncertainty; ties break by id ascending."""
    return [s.factor_id for s in sorted(scores, key=lambda s: (s.u, s.factor_id))]


def tangency(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Maximum-Sharpe weights Sigma^-1 mu renormalized to sum exactly 1.

    A failed Cholesky factorization triggers one ridge repair
    (delta = 1e-8 trace / kappa); a second failure raises
    :class:`SingularCovariance`.  A numerically zero normalizer raises
    :class:`DegenerateDenominator` so the caller can skip the rebalance.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    k = mu.shape[0]
    if sigma.shape != (k, k):
        raise ValueError(f"shape mismatch: mu {mu.shape}, sigma {sigma.shape}")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        ridge = COV_RIDGE_SCALE * np.trace(sigma) / k
        try:
            chol = np.linalg.cholesky(sigma + ridge * np.eye(k))
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance(str(exc)) from exc
    raw = np.linalg.solve(chol.T, np.linalg.solve(chol, mu))
    denom = float(raw.sum())
    if abs(denom) < DENOMINATOR_EPS:
        raise DegenerateDenominator(f"1'Sigma^-1 mu = {denom:.3e}")
    w = raw / denom
    return w / w.sum()


def project_to_assets(w_f: np.ndarray, w_f_rows: np.ndarray, z_t: np.ndarray) -> np.ndarray:
    """Asset weights Z (Z'Z)^-1 W_f_rows' w_f before truncation."""
    w_f = np.asarray(w_f, dtype=float)
    w_f_rows = np.asarray(w_f_rows, dtype=float)
    if w_f_rows.shape[0] != w_f.shape[0]:
        raise ValueError(f"shape mismatch: w_f {w_f.shape}, rows {w_f_rows.shape}")
    return projection_operator(z_t) @ (w_f_rows.T @ w_f)


def truncate_and_normalize(w_r: np.ndarray, top_n: int = TOP_N_DEFAULT) -> np.ndarray:
    """Keep the ``top_n`` largest weights in absolute value, then scale the
    long leg to +1 and the short leg to -1 (gross 2, net 0).  A one-sided
    book is scaled to gross 1 instead."""
    w = np.asarray(w_r, dtype=float).copy()
    nonzero = np.flatnonzero(w)
    if nonzero.size == 0:
        raise AllZeroWeights("no nonzero weights to truncate")
    if nonzero.size > top_n:
        order = np.argsort(-np.abs(w), kind="stable")
        w[order[top_n:]] = 0.0
    pos = w > 0
    neg = w < 0
    pos_sum = float(w[pos].sum())
    neg_sum = float(-w[neg].sum())
    if pos_sum > 0.0 and neg_sum > 0.0:
        w[pos] /= pos_sum
        w[neg] /= neg_sum
    elif pos_sum > 0.0:
        w[pos] /= pos_sum
    else:
        w[neg] /= neg_sum
    return w


def build_plan(ranked: list[int], kappa: int, centrals: dict[int, float],
               factor_history: dict[int, np.ndarray], w_f_matrix: np.ndarray,
               z_t: np.ndarray, top_n: int = TOP_N_DEFAULT) -> SelectionPlan:
    """Assemble the per-rebalance plan for one kappa: tangency over the
    selected factors' forecasts and expanding sample covariance, projected
    and normalized."""
    selected = ranked[:kappa]
    mu = np.array([centrals[f] for f in selected])
    hist = np.column_stack([factor_history[f] for f in selected])
    if kappa == 1:
        sigma = np.array([[float(np.var(hist[:, 0], ddof=1))]])
    else:
        sigma = np.cov(hist, rowvar=False, ddof=1)
    w_f = tangency(mu, sigma)
    w_r = project_to_assets(w_f, w_f_matrix[selected, :], z_t)
    w_r = truncate_and_normalize(w_r, top_n)
    return SelectionPlan(list(ranked), kappa, mu, sigma, w_f, w_r)
