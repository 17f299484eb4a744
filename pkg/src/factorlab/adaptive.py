"""Adaptive choice of the factor-subset size from past performance only.

Each candidate subset size kappa is scored by the Sortino ratio of its
strategy's trailing returns; a log-sum-exp surrogate in theta = log kappa
turns the discrete argmax into a smooth 1-D problem, a quadratic penalty on
theta - theta_prev keeps the choice from jumping, and the minimizer is found
by a dense grid plus golden-section refinement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdaptiveConfig:
    lse_lambda: float = 1.0
    eta: float = 2.0
    lookback: int = 12
    epsilon: float = 1e-6
    warmup_periods: int = 12

    def __post_init__(self):
        if self.lse_lambda <= 0:
            raise ValueError("lse_lambda must be > 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.lookback < 2:
            raise ValueError("lookback must be >= 2")


@dataclass
class KappaTrace:
    """Per-period chosen theta and kappa for one forecasting model."""

    model: str
    periods: list[int]
    thetas: list[float]
    kappas: list[int]


GRID_POINTS = 2000
GOLDEN_TOL = 1e-6
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def sortino(returns: np.ndarray, epsilon: float = 1e-6) -> float:
    """mean(r) / (sqrt(mean(min(r, 0)^2)) + epsilon)."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise ValueError("empty return window")
    downside = math.sqrt(float(np.mean(np.minimum(r, 0.0) ** 2)))
    return float(np.mean(r)) / (downside + epsilon)


def lse_objective(theta: float, sortino_by_kappa: dict[int, float], lse_lambda: float) -> float:
    """(1/lambda) log sum_k exp(lambda SoR(k) - lambda (theta - log k)^2),
    computed with max-subtraction so it never overflows."""
    if not sortino_by_kappa:
        raise ValueError("empty sortino map")
    terms = np.array([lse_lambda * s - lse_lambda * (theta - math.log(k)) ** 2
                      for k, s in sortino_by_kappa.items()])
    m = terms.max()
    return float(m + math.log(np.exp(terms - m).sum())) / lse_lambda


def _golden_section(fn, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def select_kappa(config: AdaptiveConfig, sortino_by_kappa: dict[int, float],
                 theta_prev: float) -> tuple[float, int]:
    """Minimize -LSE(theta) + (eta/2)(theta - theta_prev)^2 over
    theta in [log 1 - 1, log K + 1]; kappa* = round(exp theta*) clamped."""
    k_max = max(sortino_by_kappa)

    def objective(theta: float) -> float:
        return (-lse_objective(theta, sortino_by_kappa, config.lse_lambda)
                + 0.5 * config.eta * (theta - theta_prev) ** 2)

    lo, hi = -1.0, math.log(k_max) + 1.0
    grid = np.linspace(lo, hi, GRID_POINTS)
    values = [objective(t) for t in grid]
    best = int(np.argmin(values))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, GRID_POINTS - 1)]
    theta_star = _golden_section(objective, a, b, GOLDEN_TOL)
    if objective(grid[best]) < objective(theta_star):
        theta_star = float(grid[best])
    kappa_star = min(max(round(math.exp(theta_star)), 1), k_max)
    return float(theta_star), int(kappa_star)


def kappa_schedule(returns_by_kappa: dict[int, np.ndarray], periods: list[int],
                   config: AdaptiveConfig, model: str = "model") -> KappaTrace:
    """Run the adaptive selection over a realized backtest history.

    ``returns_by_kappa[k][i]`` is the period ``periods[i]`` realized return of
    the fixed-k strategy.  The first ``warmup_periods`` rebalances use
    kappa = round(K/2); afterwards each period scores the trailing
    ``lookback`` returns and chains theta through the regularizer.
    """
    k_max = max(returns_by_kappa)
    kappa0 = _round_half_even(k_max / 2.0)
    theta = math.log(k_max / 2.0)
    trace = KappaTrace(model, [], [], [])
    for i, t in enumerate(periods):
        if i < config.warmup_periods or i < config.lookback:
            trace.periods.append(t)
            trace.thetas.append(theta)
            trace.kappas.append(kappa0)
            continue
        sor = {k: sortino(r[i - config.lookback:i], config.epsilon)
               for k, r in returns_by_kappa.items()}
        theta, kappa = select_kappa(config, sor, theta)
        trace.periods.append(t)
        trace.thetas.append(theta)
        trace.kappas.append(kappa)
    return trace


def _round_half_even(x: float) -> int:
    return int(round(x))
