"""Quantile forecasting backends and the exchange-file plumbing.

Two model families:

* ``chronos:<checkpoint>`` -- a pretrained zero-shot time-series foundation
  model loaded through the optional ``chronos`` library.  When the library or
  checkpoint is missing, :class:`ModelUnavailable` explains what to install;
  nothing else in the pipeline depends on it.
* ``builtin:ar1`` -- an offline Gaussian AR(1) predictive model, useful for
  testing the exchange contract and for air-gapped runs.

Output schema: ``target_period,factor_id,level,value`` with levels exactly
0.1 .. 0.9 plus a ``central`` row equal to the 0.5 level.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 10))
_Z = {a: NormalDist().inv_cdf(a) for a in LEVELS}


class ModelUnavailable(RuntimeError):
    """The requested forecasting model cannot be loaded in this environment."""


@dataclass(frozen=True)
class BridgeConfig:
    model: str = "builtin:ar1"
    context_length: int | None = None   # None = full history
    input_path: str = ""
    output_path: str = ""
    device: str = "cpu"
    rolling_targets: int = 1            # forecast the last N one-step targets


# ---------------------------------------------------------------------------
# Series IO (input schema: period,factor_id,value)
# ---------------------------------------------------------------------------

def load_series(path) -> dict[int, tuple[list[int], np.ndarray]]:
    data: dict[int, list[tuple[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["period", "factor_id", "value"]:
            raise ValueError(f"{path}: expected header period,factor_id,value")
        for row in reader:
            if row:
                data.setdefault(int(row[1]), []).append((int(row[0]), float(row[2])))
    out = {}
    for fid in sorted(data):
        rows = sorted(data[fid])
        out[fid] = ([p for p, _ in rows], np.array([v for _, v in rows]))
    return out


def write_exchange_csv(rows: list[tuple[int, int, str, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target_period", "factor_id", "level", "value"])
        for target, fid, level, value in rows:
            writer.writerow([target, fid, level, format(value, ".12g")])


# ---------------------------------------------------------------------------
# Builtin backend: Gaussian AR(1) predictive quantiles
# ---------------------------------------------------------------------------

def _ar1_quantiles(history: np.ndarray) -> dict[float, float]:
    """Predictive quantiles of x_{T+1} from an AR(1) fit with Gaussian errors.

    Degenerate histories (constant, or too short) collapse to the last level
    with zero spread."""
    x = np.asarray(history, dtype=float)
    if x.shape[0] < 3 or np.all(x == x[0]):
        center = float(x[-1]) if x.shape[0] else 0.0
        return {a: center for a in LEVELS}
    mean = float(np.mean(x))
    prev, curr = x[:-1] - mean, x[1:] - mean
    denom = float(prev @ prev)
    phi = float(prev @ curr) / denom if denom > 0.0 else 0.0
    phi = max(min(phi, 0.999), -0.999)
    resid = curr - phi * prev
    sd = float(np.sqrt(np.mean(resid ** 2)))
    center = mean + phi * (float(x[-1]) - mean)
    return {a: center + sd * _Z[a] for a in LEVELS}


class _BuiltinAr1:
    def forecast(self, history: np.ndarray) -> dict[float, float]:
        return _ar1_quantiles(history)


# ---------------------------------------------------------------------------
# Chronos backend (optional dependency; loaded lazily)
# ---------------------------------------------------------------------------

class _ChronosModel:
    def __init__(self, checkpoint: str, device: str):
        try:
            import torch  # noqa: F401
            from chronos import ChronosBoltPipeline
        except ImportError as exc:
            raise ModelUnavailable(
                f"cannot import the chronos library ({exc}); install "
                "'chronos-forecasting' and its torch dependency, or use the "
                "builtin:ar1 model") from exc
        try:
            self._pipeline = ChronosBoltPipeline.from_pretrained(checkpoint, device_map=device)
        except Exception as exc:
            raise ModelUnavailable(
                f"cannot load checkpoint {checkpoint!r}: {exc}") from exc

    def forecast(self, history: np.ndarray) -> dict[float, float]:
        import torch
        quantiles, _ = self._pipeline.predict_quantiles(
            context=torch.tensor(history, dtype=torch.float32).unsqueeze(0),
            prediction_length=1, quantile_levels=list(LEVELS))
        values = quantiles[0, 0, :].tolist()
        return dict(zip(LEVELS, (float(v) for v in values)))


def _load_model(config: BridgeConfig):
    kind, _, name = config.model.partition(":")
    if kind == "builtin":
        if name not in ("", "ar1"):
            raise ModelUnavailable(f"unknown builtin model {name!r}; only 'ar1' exists")
        return _BuiltinAr1()
    if kind == "chronos":
        if not name:
            raise ModelUnavailable("chronos model needs a checkpoint id, e.g. "
                                   "chronos:amazon/chronos-bolt-base")
        return _ChronosModel(name, config.device)
    raise ModelUnavailable(f"unknown model family {config.model!r}; use "
                           "builtin:ar1 or chronos:<checkpoint>")


# ---------------------------------------------------------------------------
# Main entry
# ---------------------------------------------------------------------------

def bridge_forecast(config: BridgeConfig) -> int:
    """Forecast every factor in the input export and write the exchange CSV.

    With ``rolling_targets = n`` the last n one-step-ahead targets are each
    forecast from the history strictly before them (causal truncation), so a
    single run can cover a backtest window.  Returns the row count written.
    """
    series = load_series(config.input_path)
    if not series:
        raise ValueError(f"{config.input_path}: no factor series found")
    shortest = min(len(values) for _, values in series.values())
    if config.rolling_targets >= shortest:
        raise ValueError(f"rolling_targets {config.rolling_targets} needs series "
                         f"longer than {config.rolling_targets} (shortest is {shortest})")
    model = _load_model(config)
    rows: list[tuple[int, int, str, float]] = []
    for fid in sorted(series):
        periods, values = series[fid]
        for back in range(config.rolling_targets - 1, -1, -1):
            cut = len(values) - back          # history = values[:cut]
            history = values[:cut]
            if config.context_length is not None:
                history = history[-config.context_length:]
            target = periods[cut - 1] + 1
            quantiles = _sorted_levels(model.forecast(history))
            for level in LEVELS:
                rows.append((target, fid, format(level, ".12g"), quantiles[level]))
            rows.append((target, fid, "central", quantiles[0.5]))
    write_exchange_csv(rows, config.output_path)
    return len(rows)


def _sorted_levels(quantiles: dict[float, float]) -> dict[float, float]:
    values = sorted(quantiles[a] for a in LEVELS)
    return dict(zip(LEVELS, values))
