"""Performance statistics and factor-regression alphas for monthly ledgers.

Annualization is from monthly data: arithmetic (x12) for the mean,
sqrt(12) for volatility, geometric for the CAGR.  Ratio conventions: Sortino
against a zero target, Omega at a zero threshold, Sharpe on excess returns
(risk-free defaults to zero).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import fmt12
from .errors import CollinearFactors, InsufficientData

MONTHS_PER_YEAR = 12
MIN_OBSERVATIONS = 12
RANK_TOL = 1e-10


@dataclass(frozen=True)
class PerfReport:
    total_return: float
    cagr: float
    annual_return: float
    annual_vol: float
    sharpe: float
    sortino: float
    omega: float
    max_drawdown: float
    beta: float | None = None
    alpha_annualized: float | None = None
    avg_monthly_turnover: float | None = None

    def rows(self) -> list[tuple[str, float]]:
        out = [
            ("Total Return (%)", 100.0 * self.total_return),
            ("CAGR (%)", 100.0 * self.cagr),
            ("Sharpe Ratio", self.sharpe),
            ("Sortino Ratio", self.sortino),
            ("Omega Ratio", self.omega),
            ("Annual Return (%)", 100.0 * self.annual_return),
            ("Annual Volatility (%)", 100.0 * self.annual_vol),
            ("Max Drawdown (%)", 100.0 * self.max_drawdown),
        ]
        if self.beta is not None:
            out.append(("Market Beta", self.beta))
        if self.alpha_annualized is not None:
            out.append(("Market Alpha (%)", 100.0 * self.alpha_annualized))
        if self.avg_monthly_turnover is not None:
            out.append(("Monthly Turnover", self.avg_monthly_turnover))
        return out


def max_drawdown(returns: np.ndarray) -> float:
    wealth = np.cumprod(1.0 + returns)
    peak = np.maximum.accumulate(wealth)
    return float(np.max(1.0 - wealth / peak))


def _safe_div(num: float, den: float) -> float:
    return 0.0 if den == 0.0 else num / den


def perf_report(returns, benchmark=None, rf=None, avg_monthly_turnover: float | None = None) -> PerfReport:
    """Full statistics for a monthly return series; benchmark and risk-free
    series (aligned, same length) are optional."""
    r = np.asarray(returns, dtype=float)
    if r.shape[0] < MIN_OBSERVATIONS:
        raise InsufficientData(f"{r.shape[0]} observations, need >= {MIN_OBSERVATIONS}")
    excess = r - np.asarray(rf, dtype=float) if rf is not None else r

    total = float(np.prod(1.0 + r)) - 1.0
    cagr = float(np.prod(1.0 + r)) ** (MONTHS_PER_YEAR / r.shape[0]) - 1.0
    ann_ret = MONTHS_PER_YEAR * float(np.mean(r))
    ann_vol = math.sqrt(MONTHS_PER_YEAR) * float(np.std(r))
    sharpe = _safe_div(MONTHS_PER_YEAR * float(np.mean(excess)),
                       math.sqrt(MONTHS_PER_YEAR) * float(np.std(excess)))
    downside = math.sqrt(MONTHS_PER_YEAR * float(np.mean(np.minimum(excess, 0.0) ** 2)))
    sortino = _safe_div(MONTHS_PER_YEAR * float(np.mean(excess)), downside)
    gains = float(np.sum(np.maximum(r, 0.0)))
    losses = float(np.sum(np.maximum(-r, 0.0)))
    if losses == 0.0:
        omega = math.inf if gains > 0.0 else 0.0
    else:
        omega = gains / losses

    beta = alpha_ann = None
    if benchmark is not None:
        b = np.asarray(benchmark, dtype=float)
        b_ex = b - np.asarray(rf, dtype=float) if rf is not None else b
        var_b = float(np.var(b_ex))
        if var_b == 0.0:
            beta, alpha_ann = 0.0, MONTHS_PER_YEAR * float(np.mean(excess))
        else:
            beta = float(np.cov(excess, b_ex, ddof=0)[0, 1]) / var_b
            alpha_ann = MONTHS_PER_YEAR * float(np.mean(excess) - beta * np.mean(b_ex))

    return PerfReport(total, cagr, ann_ret, ann_vol, sharpe, sortino, omega,
                      max_drawdown(r), beta, alpha_ann, avg_monthly_turnover)


# ---------------------------------------------------------------------------
# Expanding factor regressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaStep:
    n_factors: int
    factor_added: str
    alpha_monthly: float
    t_stat: float


def _ols_white(X: np.ndarray, y: np.ndarray):
    """OLS coefficients plus heteroskedasticity-robust (White) standard
    errors; returns (coef, se, r_squared)."""
    XtX_inv = np.linalg.inv(X.T @ X)
    coef = XtX_inv @ (X.T @ y)
    resid = y - X @ coef
    meat = (X * resid[:, None] ** 2).T @ X
    cov = XtX_inv @ meat @ XtX_inv
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0.0 else 0.0
    return coef, se, r2


def expanding_alpha_regression(returns, factors: list[tuple[str, np.ndarray]]):
    """Alphas from regressions on expanding prefixes of the factor list.

    Step j regresses the returns on an intercept plus the first j factors and
    reports the intercept (monthly alpha) with its White t-statistic; the
    final step also reports the regression R^2.  A factor that is collinear
    with the design assembled so far is dropped with a warning.

    Returns (steps, final_r_squared).
    """
    y = np.asarray(returns, dtype=float)
    n = y.shape[0]
    X = np.ones((n, 1))
    steps: list[AlphaStep] = []
    coef, se, r2 = _ols_white(X, y)
    steps.append(AlphaStep(0, "", float(coef[0]), _safe_div(float(coef[0]), float(se[0]))))
    for name, series in factors:
        f = np.asarray(series, dtype=float)
        if f.shape[0] != n:
            raise ValueError(f"factor {name!r} has length {f.shape[0]}, returns have {n}")
        candidate = np.column_stack([X, f])
        if np.linalg.matrix_rank(candidate, tol=RANK_TOL * max(1.0, float(np.abs(candidate).max()))) <= X.shape[1]:
            warnings.warn(f"factor {name!r} is collinear; dropped", CollinearFactors)
            continue
        X = candidate
        coef, se, r2 = _ols_white(X, y)
        steps.append(AlphaStep(X.shape[1] - 1, name, float(coef[0]),
                               _safe_div(float(coef[0]), float(se[0]))))
    return steps, r2


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def write_report_txt(reports: dict[str, PerfReport], path) -> None:
    names = sorted(reports)
    metric_names = [m for m, _ in reports[names[0]].rows()]
    width = max(len(m) for m in metric_names) + 2
    col = max(max(len(n) for n in names) + 2, 14)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" " * width + "".join(n.rjust(col) for n in names) + "\n")
        for i, metric in enumerate(metric_names):
            cells = []
            for n in names:
                rows = reports[n].rows()
                cells.append((f"{rows[i][1]:.3f}" if i < len(rows) else "").rjust(col))
            fh.write(metric.ljust(width) + "".join(cells) + "\n")


def write_report_csv(reports: dict[str, PerfReport], path) -> None:
    names = sorted(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric"] + names)
        metric_names = [m for m, _ in reports[names[0]].rows()]
        for i, metric in enumerate(metric_names):
            writer.writerow([metric] + [fmt12(reports[n].rows()[i][1]) for n in names])


def write_wealth_csv(periods, returns, path) -> None:
    wealth = np.cumprod(1.0 + np.asarray(returns, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "wealth"])
        for s, w in zip(periods, wealth):
            writer.writerow([s, fmt12(w)])


def write_frontier_csv(reports: dict[str, PerfReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "annual_vol", "annual_return"])
        for name in sorted(reports):
            writer.writerow([name, fmt12(reports[name].annual_vol),
                             fmt12(reports[name].annual_return)])
