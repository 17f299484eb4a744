"""Conditional autoencoder: characteristic-to-beta network plus factor
projection, trained jointly on the cross-sectional pricing loss.

The beta network is a plain ReLU stack; latent factors are a linear
projection f_s = W_f (Z'Z)^-1 Z' r_s of each period's return cross-section.
Both parameter groups are learned with mini-batch gradient descent and the
analytic gradients below (checked against finite differences in the tests).
Ensembling trains several "experts" from independent random initializations
and averages their outputs, never their raw weights.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import FactorSeries, PanelData, RngStream, cross_sectional_ols
from .errors import Diverged

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CaeConfig:
    """Training hyperparameters.  Defaults are the production values."""

    k_factors: int = 50
    hidden_layers: tuple[int, ...] = (32, 16)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 10_000
    l1_lambda: float = 1e-5
    patience: int = 5
    n_experts: int = 50
    validation_months: int = 144
    retrain_frequency_months: int = 12
    grad_through_projection: bool = True
    optimizer: str = "gd"   # "gd" | "adam"; adam is an extension, off by default

    def __post_init__(self):
        if self.k_factors < 1:
            raise ValueError("k_factors must be >= 1")
        if any(w < 1 for w in self.hidden_layers):
            raise ValueError("hidden widths must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class CaeModel:
    """One trained expert: beta-network weights plus the projection matrix."""

    weights: list[np.ndarray]   # W_l, shape (out, in)
    biases: list[np.ndarray]    # b_l, shape (out,)
    w_f: np.ndarray             # (K, P)
    training_window: tuple[int, int] = (0, 0)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_factors(self) -> int:
        return self.w_f.shape[0]

    @property
    def n_characteristics(self) -> int:
        return self.weights[0].shape[1]

    def copy_params(self) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        return ([w.copy() for w in self.weights],
                [b.copy() for b in self.biases], self.w_f.copy())


class PricingLoss(NamedTuple):
    total: float
    mean: float
    n_obs: int


def init_model(config: CaeConfig, n_characteristics: int, rng: RngStream) -> CaeModel:
    """Uniform(-a, a) initialization with a = sqrt(6 / (fan_in + fan_out))."""
    g = rng.generator()
    widths = [n_characteristics, *config.hidden_layers, config.k_factors]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(g.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    a = np.sqrt(6.0 / (n_characteristics + config.k_factors))
    w_f = g.uniform(-a, a, size=(config.k_factors, n_characteristics))
    return CaeModel(weights, biases, w_f)


# ---------------------------------------------------------------------------
# Forward / loss / gradients
# ---------------------------------------------------------------------------

def beta_forward(model: CaeModel, z: np.ndarray) -> np.ndarray:
    """Factor loadings for one characteristics vector (or a stack of them)."""
    out, _ = _forward(model, np.atleast_2d(np.asarray(z, dtype=float)))
    return out[0] if np.asarray(z).ndim == 1 else out


def _forward(model: CaeModel, Z: np.ndarray):
    """ReLU stack; returns betas and the per-layer caches for backprop."""
    a = Z
    caches = []
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        u = a @ W.T + b
        caches.append((a, u))
        a = np.maximum(u, 0.0)
    caches.append((a, None))
    return a @ model.weights[-1].T + model.biases[-1], caches


def extract_factors(model: CaeModel, Z: np.ndarray, r: np.ndarray) -> np.ndarray:
    """f_s = W_f (Z'Z)^-1 Z' r_s for one period's cross-section."""
    return model.w_f @ cross_sectional_ols(Z, r)


def _window_arrays(panel: PanelData, periods) -> dict:
    """Stack a set of periods into flat observation arrays.

    g_s = (Z'Z)^-1 Z' r_s is pure data, so it is precomputed once per period;
    factors are recovered as f_s = W_f g_s wherever needed.
    """
    periods = [s for s in periods if s in panel.returns]
    if not periods:
        raise ValueError("empty period set")
    G = np.stack([cross_sectional_ols(panel.characteristics[s], panel.returns[s])
                  for s in periods])
    Z_all = np.concatenate([panel.characteristics[s] for s in periods])
    r_all = np.concatenate([panel.returns[s] for s in periods])
    s_idx = np.concatenate([np.full(panel.returns[s].shape[0], j, dtype=np.intp)
                            for j, s in enumerate(periods)])
    return {"periods": periods, "G": G, "Z": Z_all, "r": r_all, "s_idx": s_idx}


def _l1_total(model: CaeModel) -> float:
    return (sum(float(np.abs(w).sum()) for w in model.weights)
            + sum(float(np.abs(b).sum()) for b in model.biases)
            + float(np.abs(model.w_f).sum()))


def pricing_loss(model: CaeModel, panel: PanelData, periods, l1_lambda: float = 0.0) -> PricingLoss:
    """Sum over (s, i) of squared pricing errors, plus the optional L1 term;
    the per-observation mean excludes regularization."""
    arr = _window_arrays(panel, periods)
    betas, _ = _forward(model, arr["Z"])
    F = arr["G"] @ model.w_f.T
    err = arr["r"] - np.einsum("ij,ij->i", betas, F[arr["s_idx"]])
    sq = float(err @ err)
    total = sq + (l1_lambda * _l1_total(model) if l1_lambda else 0.0)
    return PricingLoss(total, sq / err.shape[0], err.shape[0])


def pricing_loss_gradients(model: CaeModel, arr: dict, l1_lambda: float = 0.0,
                           grad_through_projection: bool = True,
                           rows: np.ndarray | None = None):
    """Loss (sum form) and analytic gradients for every parameter group.

    ``rows`` restricts the squared-error term to a subset of observations
    (mini-batch); the L1 term always covers the full parameter set.
    """
    Z, r, s_idx, G = arr["Z"], arr["r"], arr["s_idx"], arr["G"]
    if rows is not None:
        Z, r, s_idx = Z[rows], r[rows], s_idx[rows]
    betas, caches = _forward(model, Z)
    F = G @ model.w_f.T
    F_rows = F[s_idx]
    err = r - np.einsum("ij,ij->i", betas, F_rows)
    loss = float(err @ err)

    dbeta = (-2.0 * err)[:, None] * F_rows
    grads_w = [np.zeros_like(w) for w in model.weights]
    grads_b = [np.zeros_like(b) for b in model.biases]
    delta = dbeta
    for layer in range(len(model.weights) - 1, -1, -1):
        a_in, u = caches[layer]
        grads_w[layer] = delta.T @ a_in
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer]) * (caches[layer - 1][1] > 0.0)

    if grad_through_projection:
        grad_wf = ((-2.0 * err)[:, None] * betas).T @ G[s_idx]
    else:
        grad_wf = np.zeros_like(model.w_f)

    if l1_lambda:
        loss += l1_lambda * _l1_total(model)
        for gw, w in zip(grads_w, model.weights):
            gw += l1_lambda * np.sign(w)
        for gb, b in zip(grads_b, model.biases):
            gb += l1_lambda * np.sign(b)
        grad_wf = grad_wf + l1_lambda * np.sign(model.w_f)

    return loss, grads_w, grads_b, grad_wf


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _mean_pricing_loss(model: CaeModel, arr: dict) -> float:
    betas, _ = _forward(model, arr["Z"])
    F = arr["G"] @ model.w_f.T
    err = arr["r"] - np.einsum("ij,ij->i", betas, F[arr["s_idx"]])
    return float(err @ err) / err.shape[0]


class _AdamState:
    """Standard Adam moments for one list of parameter arrays."""

    BETA1, BETA2, EPS = 0.9, 0.999, 1e-8

    def __init__(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.BETA1 ** self.t
        c2 = 1.0 - self.BETA2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.EPS)


def _train_one_expert(config: CaeConfig, train_arr: dict, val_arr: dict,
                      n_characteristics: int, rng: RngStream,
                      window: tuple[int, int]) -> CaeModel:
    model = init_model(config, n_characteristics, rng.derive("init"))
    model.training_window = window
    n_obs = train_arr["r"].shape[0]
    train_loss_init = _mean_pricing_loss(model, train_arr)

    adam = _AdamState([*model.weights, *model.biases, model.w_f]) \
        if config.optimizer == "adam" else None
    best = model.copy_params()
    best_val = _mean_pricing_loss(model, val_arr)
    stale = 0
    last_val = best_val
    epochs_run = 0
    for epoch in range(config.epochs):
        perm = rng.derive("epoch", epoch).generator().permutation(n_obs)
        for start in range(0, n_obs, config.batch_size):
            rows = perm[start:start + config.batch_size]
            loss, gw, gb, gwf = pricing_loss_gradients(
                model, train_arr, config.l1_lambda, config.grad_through_projection, rows)
            if not np.isfinite(loss):
                raise Diverged(f"non-finite training loss at epoch {epoch}")
            inv_n = 1.0 / rows.shape[0]
            grads = [g * inv_n for g in (*gw, *gb, gwf)]
            if adam is not None:
                adam.step([*model.weights, *model.biases, model.w_f], grads,
                          config.learning_rate)
            else:
                params = [*model.weights, *model.biases, model.w_f]
                for p, g in zip(params, grads):
                    p -= config.learning_rate * g
        epochs_run = epoch + 1
        last_val = _mean_pricing_loss(model, val_arr)
        if not np.isfinite(last_val):
            raise Diverged(f"non-finite validation loss at epoch {epoch}")
        if last_val < best_val - 1e-15:
            best_val = last_val
            best = model.copy_params()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.weights, model.biases, model.w_f = best
    model.diagnostics = {
        "epochs_run": epochs_run,
        "val_loss_best": best_val,
        "val_loss_last_epoch": last_val,
        "train_loss_init": train_loss_init,
        "train_loss_final": _mean_pricing_loss(model, train_arr),
    }
    return model


def train(config: CaeConfig, panel: PanelData, train_end: int, rng: RngStream,
          threads: int = 1) -> list[CaeModel]:
    """Train ``n_experts`` models on all panel periods <= train_end.

    The trailing ``validation_months`` periods of the window are held out for
    early stopping; gradient descent runs on the remainder.
    """
    window = [s for s in panel.periods if s <= train_end]
    if len(window) < config.validation_months + 24:
        raise ValueError(
            f"training window has {len(window)} periods; needs >= "
            f"{config.validation_months + 24} (validation_months + 24)")
    split = len(window) - config.validation_months
    train_arr = _window_arrays(panel, window[:split])
    val_arr = _window_arrays(panel, window[split:])
    bounds = (window[0], window[-1])

    def run(e: int) -> CaeModel:
        return _train_one_expert(config, train_arr, val_arr,
                                 panel.n_characteristics,
                                 rng.derive("expert", e), bounds)

    if threads > 1 and config.n_experts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            models = list(pool.map(run, range(config.n_experts)))
    else:
        models = [run(e) for e in range(config.n_experts)]
    logger.info("trained %d experts on window %s", len(models), bounds)
    return models


def factor_series(models: list[CaeModel], panel: PanelData, periods) -> list[FactorSeries]:
    """Per-period factors averaged element-wise across experts.

    f_s is linear in W_f, so averaging expert factor series equals projecting
    with the expert-averaged W_f.
    """
    periods = [s for s in periods if s in panel.returns]
    G = np.stack([cross_sectional_ols(panel.characteristics[s], panel.returns[s])
                  for s in periods])
    w_f_avg = np.mean([m.w_f for m in models], axis=0)
    F = G @ w_f_avg.T
    return [FactorSeries(k, tuple(periods), F[:, k].copy())
            for k in range(F.shape[1])]


def average_w_f(models: list[CaeModel]) -> np.ndarray:
    return np.mean([m.w_f for m in models], axis=0)


# ---------------------------------------------------------------------------
# Serialization (versioned text format: shapes, then row-major parameters)
# ---------------------------------------------------------------------------

FORMAT_TAG = "factorlab-cae 1"


def save_model(model: CaeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_TAG + "\n")
        fh.write(f"{model.n_factors} {model.n_characteristics} {len(model.weights)}\n")
        fh.write(f"{model.training_window[0]} {model.training_window[1]}\n")
        for W, b in zip(model.weights, model.biases):
            fh.write(f"layer {W.shape[0]} {W.shape[1]}\n")
            for row in W:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
            fh.write(" ".join(repr(float(v)) for v in b) + "\n")
        fh.write(f"w_f {model.w_f.shape[0]} {model.w_f.shape[1]}\n")
        for row in model.w_f:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_model(path) -> CaeModel:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != FORMAT_TAG:
        raise ValueError(f"{path}: not a {FORMAT_TAG!r} file")
    _, _, n_layers = (int(v) for v in lines[1].split())
    lo, hi = (int(v) for v in lines[2].split())
    pos = 3
    weights, biases = [], []
    for _ in range(n_layers):
        tag, out_d, in_d = lines[pos].split()
        assert tag == "layer"
        out_d, in_d = int(out_d), int(in_d)
        pos += 1
        W = np.array([[float(v) for v in lines[pos + i].split()] for i in range(out_d)])
        pos += out_d
        b = np.array([float(v) for v in lines[pos].split()])
        pos += 1
        weights.append(W.reshape(out_d, in_d))
        biases.append(b)
    tag, k, p = lines[pos].split()
    assert tag == "w_f"
    k, p = int(k), int(p)
    pos += 1
    w_f = np.array([[float(v) for v in lines[pos + i].split()] for i in range(k)])
    return CaeModel(weights, biases, w_f.reshape(k, p), (lo, hi))
