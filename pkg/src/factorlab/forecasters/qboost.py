"""Gradient-boosted quantile regression trees, built from scratch.

One booster per quantile level.  Each round fits a depth-limited tree to the
first-order pinball gradients with exact greedy splits (weighted variance
reduction), then refits every leaf to the weighted empirical alpha-quantile
of the current residuals.  Bayesian bootstrapping draws exponential(1) row
weights each round.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..core import FactorSeries, RngStream
from ..errors import InsufficientData
from . import QuantileForecast

logger = logging.getLogger(__name__)

MIN_TRAIN_ROWS = 50
GAIN_EPS = 1e-12


@dataclass(frozen=True)
class GbtConfig:
    learning_rate: float = 0.05
    n_trees: int = 50
    max_depth: int = 3
    quantile_levels: tuple[float, ...] = (0.05, 0.5, 0.95)
    bayesian_bootstrap: bool = True
    min_samples_leaf: int = 1


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict_one(self, x: np.ndarray) -> float:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return self.value[node]

    def depth(self) -> int:
        def walk(node: int) -> int:
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)


@dataclass
class GbtModel:
    """Per-quantile boosters: initial constant plus a list of trees."""

    init: dict[float, float]
    trees: dict[float, list[Tree]]
    config: GbtConfig
    n_features: int
    train_loss_path: dict[float, list[float]] = field(default_factory=dict)

    def predict(self, x: np.ndarray, alpha: float) -> float:
        f = self.init[alpha]
        lr = self.config.learning_rate
        for tree in self.trees[alpha]:
            f += lr * tree.predict_one(x)
        return f


def pinball_loss(y, pred, alpha: float):
    """L_alpha(y, yhat) = max(alpha (y - yhat), (alpha - 1)(y - yhat)),
    averaged over arrays."""
    d = np.asarray(y, dtype=float) - np.asarray(pred, dtype=float)
    return float(np.mean(np.maximum(alpha * d, (alpha - 1.0) * d)))


def weighted_quantile(values: np.ndarray, weights: np.ndarray, alpha: float) -> float:
    """Smallest v whose cumulative weight reaches alpha of the total."""
    order = np.argsort(values, kind="stable")
    cw = np.cumsum(weights[order])
    pos = int(np.searchsorted(cw, alpha * cw[-1], side="left"))
    return float(values[order][min(pos, values.shape[0] - 1)])


def _best_split(X: np.ndarray, g: np.ndarray, w: np.ndarray, idx: np.ndarray,
                min_leaf: int):
    """Exact greedy search over all feature thresholds; returns
    (feature, threshold, left_idx, right_idx) or None."""
    n = idx.shape[0]
    if n < 2 * min_leaf:
        return None
    gw = g[idx] * w[idx]
    total_w = float(w[idx].sum())
    total_gw = float(gw.sum())
    parent = total_gw * total_gw / total_w
    best_gain, best = GAIN_EPS, None
    for j in range(X.shape[1]):
        xs = X[idx, j]
        order = np.argsort(xs, kind="stable")
        xs_s = xs[order]
        if xs_s[0] == xs_s[-1]:
            continue
        cw = np.cumsum(w[idx][order])
        cgw = np.cumsum(gw[order])
        pos = np.arange(1, n)
        valid = (xs_s[:-1] < xs_s[1:]) & (pos >= min_leaf) & (n - pos >= min_leaf)
        if not valid.any():
            continue
        lw, lg = cw[:-1][valid], cgw[:-1][valid]
        gain = lg * lg / lw + (total_gw - lg) ** 2 / (total_w - lw) - parent
        k = int(np.argmax(gain))
        if gain[k] > best_gain:
            cut = pos[valid][k]
            best_gain = float(gain[k])
            best = (j, 0.5 * (xs_s[cut - 1] + xs_s[cut]), idx[order[:cut]], idx[order[cut:]])
    return best


def _grow(tree: Tree, X, g, w, res, idx, depth: int, config: GbtConfig, alpha: float,
          leaf_rows: list) -> int:
    node = tree.new_node()
    split = _best_split(X, g, w, idx, config.min_samples_leaf) if depth < config.max_depth else None
    if split is None:
        tree.value[node] = weighted_quantile(res[idx], w[idx], alpha)
        leaf_rows.append((node, idx))
        return node
    j, thr, left_idx, right_idx = split
    tree.feature[node] = j
    tree.threshold[node] = thr
    tree.left[node] = _grow(tree, X, g, w, res, left_idx, depth + 1, config, alpha, leaf_rows)
    tree.right[node] = _grow(tree, X, g, w, res, right_idx, depth + 1, config, alpha, leaf_rows)
    return node


def _fit_booster(X: np.ndarray, y: np.ndarray, alpha: float, config: GbtConfig,
                 rng: RngStream):
    n = y.shape[0]
    init = weighted_quantile(y, np.ones(n), alpha)
    if np.all(y == y[0]):
        return init, [], []
    F = np.full(n, init)
    trees: list[Tree] = []
    loss_path: list[float] = []
    all_rows = np.arange(n)
    for m in range(config.n_trees):
        if config.bayesian_bootstrap:
            w = rng.derive("round", m).generator().standard_exponential(n)
        else:
            w = np.ones(n)
        g = np.where(y > F, alpha, alpha - 1.0)
        res = y - F
        tree = Tree()
        leaf_rows: list = []
        _grow(tree, X, g, w, res, all_rows, 0, config, alpha, leaf_rows)
        for node, rows in leaf_rows:
            F[rows] += config.learning_rate * tree.value[node]
        trees.append(tree)
        loss_path.append(pinball_loss(y, F, alpha))
    return init, trees, loss_path


def qboost_train(X: np.ndarray, y: np.ndarray, config: GbtConfig, rng: RngStream) -> GbtModel:
    """Fit one booster per quantile level on (feature row, next-period target)
    pairs.  A constant target yields a constant-leaf model (logged)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if y.shape[0] < MIN_TRAIN_ROWS:
        raise InsufficientData(f"{y.shape[0]} training rows, need >= {MIN_TRAIN_ROWS}")
    if np.all(y == y[0]):
        logger.warning("constant target %.6g: fitting constant-leaf model", y[0])
    model = GbtModel({}, {}, config, X.shape[1])
    for alpha in config.quantile_levels:
        init, trees, path = _fit_booster(X, y, alpha, config, rng.derive("alpha", alpha))
        model.init[alpha] = init
        model.trees[alpha] = trees
        model.train_loss_path[alpha] = path
    return model


def qboost_forecast(model: GbtModel, x) -> QuantileForecast:
    """Median prediction as the central forecast; the three quantile outputs
    are sorted so the band always brackets the central value."""
    values = np.asarray(getattr(x, "values", x), dtype=float)
    lo, mid, hi = sorted(model.predict(values, a) for a in model.config.quantile_levels)
    target = getattr(x, "period", 0) + 1
    fid = getattr(x, "factor_id", -1)
    return QuantileForecast(fid, target, mid, {model.config.quantile_levels[0]: lo,
                                               model.config.quantile_levels[-1]: hi})


def select_peers(all_series: list[FactorSeries], factor_id: int, t: int,
                 n_peers: int = 3) -> list[FactorSeries]:
    """The n_peers other factors with the highest absolute Pearson correlation
    to ``factor_id`` over the histories up to t (tie -> lower factor id)."""
    target = next(s for s in all_series if s.factor_id == factor_id)
    tv = target.up_to(t)
    scored = []
    for s in all_series:
        if s.factor_id == factor_id:
            continue
        sv = s.up_to(t)
        n = min(tv.shape[0], sv.shape[0])
        a, b = tv[-n:], sv[-n:]
        sa, sb = np.std(a), np.std(b)
        corr = 0.0 if sa == 0.0 or sb == 0.0 else float(np.corrcoef(a, b)[0, 1])
        scored.append((-abs(corr), s.factor_id, s))
    scored.sort(key=lambda item: (item[0], item[1]))
    if len(scored) < n_peers:
        raise ValueError(f"need at least {n_peers} peer factors, have {len(scored)}")
    return [s for _, _, s in scored[:n_peers]]
