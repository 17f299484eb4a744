"""Synthetic markets with planted latent-factor structure.

The generator instantiates the return model r_{i,s} = beta(z_{i,s-1})' f_s + u
exactly, and hands back the planted factors and betas so downstream claims can
be checked against known ground truth.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import FactorSeries, PanelData, RngStream, fmt12, rank_normalize

# Persistence of the latent characteristic attributes (slow-moving, like real
# firm characteristics).
CHAR_PERSISTENCE = 0.95


@dataclass(frozen=True)
class FactorDynamics:
    """One factor's law of motion: f_t = mu + phi (f_{t-1} - mu) + sigma eps.

    phi = 0 gives the IID-normal(mu, sigma) flavor; |phi| < 1 gives a
    stationary AR(1) around mu.
    """

    mu: float = 0.0
    phi: float = 0.0
    sigma: float = 0.01

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if abs(self.phi) >= 1:
            raise ValueError("|phi| must be < 1")


@dataclass(frozen=True)
class SynthSpec:
    n_assets: int
    n_characteristics: int
    k_true: int
    n_periods: int
    factor_dynamics: tuple[FactorDynamics, ...]
    beta_map: str = "linear"          # "linear" | "nonlinear"
    idio_sigma: float = 0.0
    seed: int = 0
    nonlinear_width: int = 16

    def __post_init__(self):
        if self.k_true > self.n_characteristics:
            raise ValueError("k_true must be <= n_characteristics")
        if len(self.factor_dynamics) != self.k_true:
            raise ValueError("need one FactorDynamics per factor")
        if self.beta_map not in ("linear", "nonlinear"):
            raise ValueError(f"unknown beta_map {self.beta_map!r}")
        if self.idio_sigma < 0:
            raise ValueError("idio_sigma must be >= 0")


@dataclass
class GroundTruth:
    """Planted structure returned alongside the panel for oracle tests."""

    factors: np.ndarray                     # (T, K_true), row t = f at period t+1... see periods
    factor_periods: tuple[int, ...]
    betas_by_period: dict[int, np.ndarray]  # period -> (N, K_true) realized loadings
    linear_beta_matrix: np.ndarray | None   # (P, K_true) when beta_map == "linear"

    def factor_series(self) -> list[FactorSeries]:
        return [FactorSeries(k, self.factor_periods, self.factors[:, k].copy())
                for k in range(self.factors.shape[1])]


def _draw_factor_paths(spec: SynthSpec, rng: RngStream) -> np.ndarray:
    """Sequential simulation of the K_true factor paths (T rows)."""
    T, K = spec.n_periods, spec.k_true
    out = np.empty((T, K))
    for k, dyn in enumerate(spec.factor_dynamics):
        g = rng.derive("factor", k).generator()
        eps = g.standard_normal(T + 1)
        # start at a stationary draw so early periods are not special
        stat_sd = dyn.sigma / np.sqrt(1.0 - dyn.phi ** 2)
        f = dyn.mu + stat_sd * eps[0]
        for t in range(T):
            f = dyn.mu + dyn.phi * (f - dyn.mu) + dyn.sigma * eps[t + 1]
            out[t, k] = f
    return out


def _beta_params(spec: SynthSpec, rng: RngStream):
    g = rng.derive("beta-map").generator()
    P, K = spec.n_characteristics, spec.k_true
    if spec.beta_map == "linear":
        return (g.standard_normal((P, K)) / np.sqrt(P),)
    H = spec.nonlinear_width
    w1 = g.standard_normal((H, P)) * np.sqrt(2.0 / P)
    w2 = g.standard_normal((K, H)) * np.sqrt(2.0 / H)
    return w1, w2


def _betas(spec: SynthSpec, params, z: np.ndarray) -> np.ndarray:
    if spec.beta_map == "linear":
        return z @ params[0]
    w1, w2 = params
    return np.maximum(z @ w1.T, 0.0) @ w2.T


def generate(spec: SynthSpec) -> tuple[PanelData, GroundTruth]:
    """Simulate a panel satisfying the planted factor model exactly up to the
    drawn idiosyncratic noise.

    Characteristics evolve as slow AR(1) latent attributes per asset and are
    rank-normalized per period; the characteristics stored under period s are
    dated s-1.  Every random draw is keyed by (seed, purpose, period) so a
    longer run is a prefix-extension of a shorter one.
    """
    rng = RngStream(spec.seed, ("synth",))
    N, P, T = spec.n_assets, spec.n_characteristics, spec.n_periods

    factors = _draw_factor_paths(spec, rng)
    beta_params = _beta_params(spec, rng)

    latent = rng.derive("chars-init").generator().standard_normal((N, P))
    periods = tuple(range(1, T + 1))
    assets = {s: tuple(f"A{i:04d}" for i in range(N)) for s in periods}
    returns: dict[int, np.ndarray] = {}
    characteristics: dict[int, np.ndarray] = {}
    betas_by_period: dict[int, np.ndarray] = {}

    for t, s in enumerate(periods):
        # z stored under period s is the attribute state dated s-1
        z = np.column_stack([rank_normalize(latent[:, j]) for j in range(P)])
        beta = _betas(spec, beta_params, z)
        u = rng.derive("idio", s).generator().standard_normal(N) if spec.idio_sigma > 0 else 0.0
        returns[s] = beta @ factors[t] + spec.idio_sigma * u
        characteristics[s] = z
        betas_by_period[s] = beta
        shock = rng.derive("chars", s).generator().standard_normal((N, P))
        latent = CHAR_PERSISTENCE * latent + np.sqrt(1.0 - CHAR_PERSISTENCE ** 2) * shock

    panel = PanelData(periods, assets, returns, characteristics, P)
    truth = GroundTruth(factors, periods, betas_by_period,
                        beta_params[0] if spec.beta_map == "linear" else None)
    return panel, truth


# ---------------------------------------------------------------------------
# Truth files
# ---------------------------------------------------------------------------

def write_truth_csv(truth: GroundTruth, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "factor_id", "value"])
        for t, s in enumerate(truth.factor_periods):
            for k in range(truth.factors.shape[1]):
                writer.writerow([s, k, fmt12(truth.factors[t, k])])


def write_truth_betas_csv(truth: GroundTruth, path) -> None:
    """Linear maps ship the planted P x K matrix; nonlinear maps ship the
    realized per-period loadings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if truth.linear_beta_matrix is not None:
            writer.writerow(["char_index", "factor_id", "value"])
            B = truth.linear_beta_matrix
            for p in range(B.shape[0]):
                for k in range(B.shape[1]):
                    writer.writerow([p, k, fmt12(B[p, k])])
        else:
            writer.writerow(["period", "asset_index", "factor_id", "value"])
            for s, beta in truth.betas_by_period.items():
                for i in range(beta.shape[0]):
                    for k in range(beta.shape[1]):
                        writer.writerow([s, i, k, fmt12(beta[i, k])])
