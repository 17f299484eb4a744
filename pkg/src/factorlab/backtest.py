"""Expanding-window backtest: annual model recalibration, monthly
forecasting / selection / rebalancing, turnover and linear transaction
costs, and strategy-level tangency ensembling.

A decision at period t uses data dated <= t only; the resulting position is
held over period t+1.  Every random draw is keyed by (seed, purpose, period,
factor) so identical inputs reproduce ledgers bitwise and perturbing data
after t cannot change any decision taken at t.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import cae
from .adaptive import AdaptiveConfig, KappaTrace, select_kappa, sortino
from .core import FactorSeries, PanelData, RngStream, cross_sectional_ols, fmt12
from .errors import (AllZeroWeights, CostExceedsCapital, DegenerateDenominator,
                     DegeneratePortfolioValue, SingularCovariance)
from .forecasters import (GbtConfig, QuantileForecast, build_features,
                          external_forecast_load, iid_bs_forecast, qboost_train,
                          qboost_forecast, select_peers)
from .forecasters.features import MIN_HISTORY
from .selection import build_plan, rank_factors, tangency, uncertainty

logger = logging.getLogger(__name__)

NEUTRAL_NET_TOL = 1e-8
VALUE_EPS = 1e-6
ENSEMBLE_WARMUP = 12


@dataclass(frozen=True)
class BacktestConfig:
    train_start: int
    oos_start: int
    oos_end: int
    k_factors: int
    retrain_every: int = 12
    rebalance_every: int = 1
    cost_kappa: float = 0.001
    top_n: int = 300
    forecaster_set: tuple[str, ...] = ("iid", "qboost")
    kappa_mode: str = "adaptive"          # "adaptive" | "fixed:<n>"
    kappa_grid: tuple[int, ...] | None = None
    external_forecast_path: str | None = None
    iid_resamples: int = 1000

    def __post_init__(self):
        if self.oos_end <= self.oos_start:
            raise ValueError("oos_end must be > oos_start")
        if self.cost_kappa < 0:
            raise ValueError("cost_kappa must be >= 0")
        for f in self.forecaster_set:
            if f not in ("iid", "qboost", "external"):
                raise ValueError(f"unknown forecaster {f!r}")
        if self.kappa_mode != "adaptive":
            if not self.kappa_mode.startswith("fixed:"):
                raise ValueError(f"kappa_mode must be 'adaptive' or 'fixed:<n>', got {self.kappa_mode!r}")
            try:
                fixed = int(self.kappa_mode.split(":", 1)[1])
            except ValueError as exc:
                raise ValueError(f"bad kappa_mode {self.kappa_mode!r}") from exc
            if fixed not in self.grid():
                raise ValueError(f"fixed kappa {fixed} outside grid {self.grid()}")

    def grid(self) -> tuple[int, ...]:
        if self.kappa_grid is not None:
            return self.kappa_grid
        return tuple(range(1, self.k_factors + 1))


@dataclass
class LedgerRow:
    period: int          # realization period: the position is held over it
    gross: float
    net: float
    turnover: float
    kappa: int


@dataclass
class BacktestLedger:
    strategy: str
    rows: list[LedgerRow] = field(default_factory=list)
    weights: dict[int, dict[str, float]] = field(default_factory=dict)   # by realization period
    drifted: dict[int, dict[str, float]] = field(default_factory=dict)   # pre-rebalance book

    def periods(self) -> list[int]:
        return [r.period for r in self.rows]

    def gross_series(self) -> np.ndarray:
        return np.array([r.gross for r in self.rows])

    def net_series(self) -> np.ndarray:
        return np.array([r.net for r in self.rows])


@dataclass
class BacktestResult:
    ledgers: dict[str, BacktestLedger]
    kappa_traces: dict[str, KappaTrace]
    # per engine: (decision period, factor ids ascending by uncertainty)
    rankings: dict[str, list[tuple[int, list[int]]]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Accounting primitives
# ---------------------------------------------------------------------------

def drift_weights(w_prev: dict[str, float], asset_returns: dict[str, float]) -> dict[str, float]:
    """Pre-rebalance weights after the period's returns are realized.

    A market-neutral book (net ~ 0) has no meaningful total-capital
    denominator, so each position compounds in place; other books renormalize
    by the portfolio value and raise :class:`DegeneratePortfolioValue` when
    that value collapses.
    """
    if not w_prev:
        return {}
    gross = sum(abs(v) for v in w_prev.values())
    net = sum(w_prev.values())
    grown = {a: v * (1.0 + asset_returns.get(a, 0.0)) for a, v in w_prev.items()}
    if abs(net) <= NEUTRAL_NET_TOL * max(gross, 1.0):
        return grown
    value = sum(grown.values())
    if abs(value) < VALUE_EPS:
        raise DegeneratePortfolioValue(f"portfolio value {value:.3e} too close to zero")
    return {a: v / value for a, v in grown.items()}


def turnover(w_dagger: dict[str, float], w_new: dict[str, float]) -> float:
    """l1 distance between the drifted book and the new book; ids missing on
    one side count as weight 0."""
    ids = set(w_dagger) | set(w_new)
    return float(sum(abs(w_dagger.get(a, 0.0) - w_new.get(a, 0.0)) for a in ids))


def net_return(gross: float, to: float, cost_kappa: float) -> float:
    """Linear cost model (1 - kappa TO)(1 + gross) - 1.

    The zero-cost branch returns ``gross`` itself so that a costless ledger
    is bitwise identical to its gross series."""
    cost = cost_kappa * to
    if cost >= 1.0:
        raise CostExceedsCapital(f"kappa*TO = {cost:.4f} >= 1")
    if cost == 0.0:
        return gross
    return (1.0 - cost) * (1.0 + gross) - 1.0


# ---------------------------------------------------------------------------
# Per-strategy bookkeeping
# ---------------------------------------------------------------------------

class _StrategyBook:
    def __init__(self, name: str):
        self.name = name
        self.w_prev: dict[str, float] = {}
        self.ledger = BacktestLedger(name)

    def settle(self, decision_t: int, target: int, w_target: dict[str, float] | None,
               kappa: int, panel: PanelData, cost_kappa: float) -> None:
        """Drift through period decision_t, trade into w_target (or hold on
        None), then realize the return of ``target``."""
        ret_t = _returns_map(panel, decision_t)
        w_dagger = drift_weights(self.w_prev, ret_t)
        w_new = dict(w_dagger) if w_target is None else w_target
        to = 0.0 if w_target is None else turnover(w_dagger, w_new)
        if to > 4.0:
            # a gross-2 book can only exceed the theoretical flip bound
            # through drift slack
            logger.warning("%s at t=%d: turnover %.3f exceeds 4.0", self.name,
                           decision_t, to)
        ret_target = _returns_map(panel, target)
        gross = float(sum(v * ret_target.get(a, 0.0) for a, v in w_new.items()))
        net = net_return(gross, to, cost_kappa)
        self.ledger.rows.append(LedgerRow(target, gross, net, to, kappa))
        self.ledger.weights[target] = w_new
        self.ledger.drifted[target] = w_dagger
        self.w_prev = w_new


def _returns_map(panel: PanelData, s: int) -> dict[str, float]:
    if s not in panel.returns:
        return {}
    return dict(zip(panel.assets[s], panel.returns[s]))


# ---------------------------------------------------------------------------
# Forecast engines (per decision period)
# ---------------------------------------------------------------------------

class _QBoostState:
    """Per-factor boosting models plus the peer choice, refit per window."""

    def __init__(self):
        self.models = {}
        self.peers = {}

    def refit(self, series: list[FactorSeries], train_end: int, gbt_config: GbtConfig,
              rng: RngStream) -> None:
        by_id = {s.factor_id: s for s in series}
        for fid in sorted(by_id):
            peers = select_peers(series, fid, train_end)
            rows, targets = [], []
            s = by_id[fid]
            periods = np.asarray(s.periods)
            usable = periods[periods <= train_end]
            for j, t in enumerate(usable[:-1]):
                if j + 1 < MIN_HISTORY:
                    continue
                rows.append(build_features(s, peers, int(t)).values)
                targets.append(s.values[j + 1])
            self.models[fid] = qboost_train(np.array(rows), np.array(targets),
                                            gbt_config, rng.derive("fit", fid))
            self.peers[fid] = [p.factor_id for p in peers]

    def forecast(self, series: list[FactorSeries], fid: int, t: int) -> QuantileForecast:
        by_id = {s.factor_id: s for s in series}
        peers = [by_id[p] for p in self.peers[fid]]
        x = build_features(by_id[fid], peers, t)
        return qboost_forecast(self.models[fid], x)


def _forecast_all(engine: str, series: list[FactorSeries], t: int, config: BacktestConfig,
                  qb: _QBoostState | None, rng: RngStream) -> list[QuantileForecast]:
    if engine == "iid":
        return [iid_bs_forecast(s, t, rng.derive("iidbs", s.factor_id, t), config.iid_resamples)
                for s in series]
    if engine == "qboost":
        return [qb.forecast(series, s.factor_id, t) for s in series]
    if engine == "external":
        return external_forecast_load(config.external_forecast_path,
                                      [s.factor_id for s in series], t + 1)
    raise ValueError(f"unknown engine {engine!r}")


# ---------------------------------------------------------------------------
# Main engine
# ---------------------------------------------------------------------------

def run_backtest(panel: PanelData, config: BacktestConfig, rng: RngStream,
                 cae_config: cae.CaeConfig | None = None,
                 gbt_config: GbtConfig | None = None,
                 adaptive_config: AdaptiveConfig | None = None,
                 models_provider=None, threads: int = 1) -> BacktestResult:
    """Run every fixed-kappa variant (and the adaptive variant) of every
    configured forecaster over the out-of-sample window.

    ``models_provider(panel, train_end, rng, threads) -> list[CaeModel]``
    replaces CAE training when supplied (e.g. oracle models in tests).
    """
    gbt_config = gbt_config or GbtConfig()
    adaptive_config = adaptive_config or AdaptiveConfig()
    if models_provider is None:
        if cae_config is None:
            raise ValueError("need cae_config or models_provider")

        def models_provider(p, train_end, r, th):
            return cae.train(cae_config, p, train_end, r, th)

    grid = config.grid()
    adaptive_on = config.kappa_mode == "adaptive"
    if config.oos_end > panel.last_period:
        raise ValueError(f"oos_end {config.oos_end} beyond panel end {panel.last_period}")
    decisions = [t for t in range(config.oos_start - 1, config.oos_end)
                 if (t - (config.oos_start - 1)) % config.rebalance_every == 0]

    # the OLS projections g_s = (Z'Z)^-1 Z' r_s are pure data; compute once
    all_periods = np.asarray(panel.periods)
    G_all = np.stack([cross_sectional_ols(panel.characteristics[s], panel.returns[s])
                      for s in panel.periods])

    def series_up_to(w_f: np.ndarray, t: int) -> list[FactorSeries]:
        idx = int(np.searchsorted(all_periods, t, side="right"))
        F = G_all[:idx] @ w_f.T
        pds = tuple(int(p) for p in all_periods[:idx])
        return [FactorSeries(k, pds, F[:, k].copy()) for k in range(F.shape[1])]

    books: dict[str, _StrategyBook] = {}
    for engine in config.forecaster_set:
        for k in grid:
            name = f"{engine}-k{k}"
            books[name] = _StrategyBook(name)
        if adaptive_on:
            books[f"{engine}-adaptive"] = _StrategyBook(f"{engine}-adaptive")

    gross_history: dict[str, dict[int, list[float]]] = {
        e: {k: [] for k in grid} for e in config.forecaster_set}
    theta_state = {e: math.log(config.k_factors / 2.0) for e in config.forecaster_set}
    kappa_traces = {e: KappaTrace(e, [], [], []) for e in config.forecaster_set}

    models: list[cae.CaeModel] = []
    qb_states = {e: _QBoostState() for e in config.forecaster_set if e == "qboost"}
    w_f_avg = None
    rankings: dict[str, list[tuple[int, list[int]]]] = {e: [] for e in config.forecaster_set}

    for i, t in enumerate(decisions):
        boundary = (t - decisions[0]) % config.retrain_every == 0
        if boundary:
            models = models_provider(panel, t, rng.derive("cae", t), threads)
            w_f_avg = cae.average_w_f(models)
            if "qboost" in qb_states:
                qb_states["qboost"].refit(series_up_to(w_f_avg, t), t, gbt_config,
                                          rng.derive("qboost", t))

        series = series_up_to(w_f_avg, t)
        history = {s.factor_id: s.values for s in series}
        target = t + 1
        z_next = panel.characteristics[target]
        assets_next = panel.assets[target]

        for engine in config.forecaster_set:
            forecasts = _forecast_all(engine, series, t, config,
                                      qb_states.get(engine), rng.derive("fc", engine))
            scores = [uncertainty(fc) for fc in forecasts]
            ranked = rank_factors(scores)
            rankings[engine].append((t, ranked))
            centrals = {fc.factor_id: fc.central for fc in forecasts}

            plans: dict[int, dict[str, float] | None] = {}
            for k in grid:
                try:
                    plan = build_plan(ranked, k, centrals, history, w_f_avg,
                                      z_next, config.top_n)
                    plans[k] = {assets_next[j]: plan.w_r[j]
                                for j in np.flatnonzero(plan.w_r)}
                except (DegenerateDenominator, SingularCovariance, AllZeroWeights) as exc:
                    logger.warning("%s k=%d at t=%d: %s; holding previous book",
                                   engine, k, t, exc)
                    plans[k] = None
                books[f"{engine}-k{k}"].settle(t, target, plans[k], k, panel,
                                               config.cost_kappa)
                gross_history[engine][k].append(books[f"{engine}-k{k}"].ledger.rows[-1].gross)

            if adaptive_on:
                if i < adaptive_config.warmup_periods or i < adaptive_config.lookback:
                    kappa_star = _round_half_even(config.k_factors / 2.0)
                    theta_star = theta_state[engine]
                else:
                    # score each candidate on its trailing realized returns,
                    # excluding the return that will only realize at t+1
                    sor = {k: sortino(np.array(gross_history[engine][k][i - adaptive_config.lookback:i]),
                                      adaptive_config.epsilon) for k in grid}
                    theta_star, kappa_star = select_kappa(adaptive_config, sor,
                                                          theta_state[engine])
                    theta_state[engine] = theta_star
                kappa_star = _snap_to_grid(kappa_star, grid)
                kappa_traces[engine].periods.append(t)
                kappa_traces[engine].thetas.append(theta_star)
                kappa_traces[engine].kappas.append(kappa_star)
                books[f"{engine}-adaptive"].settle(t, target, plans.get(kappa_star),
                                                   kappa_star, panel, config.cost_kappa)

    return BacktestResult({name: b.ledger for name, b in books.items()},
                          {e: kappa_traces[e] for e in config.forecaster_set if adaptive_on},
                          rankings)


def _round_half_even(x: float) -> int:
    return int(round(x))


def _snap_to_grid(kappa: int, grid: tuple[int, ...]) -> int:
    """Nearest grid member in log space; identity when kappa is in the grid
    (always the case for the default full 1..K grid)."""
    if kappa in grid:
        return kappa
    return min(grid, key=lambda k: (abs(math.log(k) - math.log(max(kappa, 1))), k))


# ---------------------------------------------------------------------------
# Strategy-level ensembling
# ---------------------------------------------------------------------------

def ensemble_tangency(strategy_returns: dict[str, np.ndarray], benchmark: np.ndarray | None = None,
                      min_history: int = ENSEMBLE_WARMUP) -> tuple[np.ndarray, np.ndarray]:
    """Expanding-window tangency over strategy return series.

    Returns (weights[t, j], ensemble_return[t]) where the weight row at t is
    decided from returns strictly before t; the first ``min_history`` periods
    fall back to equal weights, and a degenerate solve holds the previous row.
    When ``benchmark`` is given it joins as the last column (variant A).
    """
    names = sorted(strategy_returns)
    cols = [np.asarray(strategy_returns[n], dtype=float) for n in names]
    if benchmark is not None:
        cols.append(np.asarray(benchmark, dtype=float))
    R = np.column_stack(cols)
    n_periods, n_strats = R.shape
    weights = np.zeros((n_periods, n_strats))
    prev = np.full(n_strats, 1.0 / n_strats)
    for t in range(n_periods):
        if t >= min_history:
            mu = R[:t].mean(axis=0)
            sigma = np.cov(R[:t], rowvar=False, ddof=1)
            try:
                prev = tangency(mu, sigma)
            except (DegenerateDenominator, SingularCovariance) as exc:
                logger.warning("ensemble at index %d: %s; holding previous weights", t, exc)
        weights[t] = prev
    returns = np.einsum("tj,tj->t", weights, R)
    return weights, returns


# ---------------------------------------------------------------------------
# Ledger files and causality helpers
# ---------------------------------------------------------------------------

def write_ledger_csv(ledger: BacktestLedger, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "gross", "net", "turnover", "kappa"])
        for row in ledger.rows:
            writer.writerow([row.period, fmt12(row.gross), fmt12(row.net),
                             fmt12(row.turnover), row.kappa])


def read_ledger_csv(path, strategy: str | None = None) -> BacktestLedger:
    ledger = BacktestLedger(strategy or str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                ledger.rows.append(LedgerRow(int(row[0]), float(row[1]), float(row[2]),
                                             float(row[3]), int(row[4])))
    return ledger


def write_weights_csv(ledger: BacktestLedger, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "asset_id", "weight"])
        for period in sorted(ledger.weights):
            for asset in sorted(ledger.weights[period]):
                writer.writerow([period, asset, fmt12(ledger.weights[period][asset])])


def write_kappa_trace_csv(traces: dict[str, KappaTrace], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "model", "theta", "kappa"])
        for model in sorted(traces):
            tr = traces[model]
            for t, theta, kappa in zip(tr.periods, tr.thetas, tr.kappas):
                writer.writerow([t, model, fmt12(theta), kappa])


def perturb_future(panel: PanelData, cut: int, rng: RngStream) -> PanelData:
    """Shuffle returns dated after ``cut`` (and characteristics dated after
    ``cut``, i.e. stored under period > cut + 1).  Decisions taken at or
    before ``cut`` must be unchanged by this perturbation."""
    g = rng.generator()
    returns = {}
    chars = {}
    for s in panel.periods:
        r = panel.returns[s].copy()
        z = panel.characteristics[s].copy()
        if s > cut:
            r = r[g.permutation(r.shape[0])] * (1.0 + 0.1 * g.standard_normal(r.shape[0]))
        if s > cut + 1:
            z = z[g.permutation(z.shape[0])]
        returns[s] = r
        chars[s] = z
    return PanelData(panel.periods, panel.assets, returns, chars, panel.n_characteristics)
