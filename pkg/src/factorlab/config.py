"""Plain-text run configuration: ``[section]`` headers and ``key = value``
lines, no nesting.  Unknown sections or keys are rejected with the file,
line and field named in the error.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .adaptive import AdaptiveConfig
from .backtest import BacktestConfig
from .cae import CaeConfig
from .errors import ConfigError
from .forecasters import GbtConfig
from .synthdata import FactorDynamics, SynthSpec

_DYNAMICS_RE = re.compile(r"^(iid|ar1)\(([^)]*)\)(?:\s*\*\s*(\d+))?$")


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "yes", "1", "on"):
        return True
    if text.lower() in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(v) for v in text.split(","))


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


SCHEMA: dict[str, dict[str, object]] = {
    "synth": {
        "n_assets": int, "n_characteristics": int, "k_true": int, "n_periods": int,
        "beta_map": str, "idio_sigma": float, "nonlinear_width": int,
        "factor_dynamics": str,
    },
    "cae": {
        "k_factors": int, "hidden_layers": _parse_int_list, "learning_rate": float,
        "epochs": int, "batch_size": int, "l1_lambda": float, "patience": int,
        "n_experts": int, "validation_months": int, "retrain_frequency_months": int,
        "grad_through_projection": _parse_bool, "optimizer": str,
    },
    "qboost": {
        "learning_rate": float, "n_trees": int, "max_depth": int,
        "bayesian_bootstrap": _parse_bool, "min_samples_leaf": int,
    },
    "adaptive": {
        "lse_lambda": float, "eta": float, "lookback": int, "epsilon": float,
        "warmup_periods": int,
    },
    "backtest": {
        "train_start": int, "oos_start": int, "oos_end": int, "retrain_every": int,
        "rebalance_every": int, "cost_kappa": float, "top_n": int,
        "forecasters": _parse_str_list, "kappa_mode": str,
        "kappa_grid": _parse_int_list, "external_forecast_path": str,
        "iid_resamples": int, "ensemble": str, "benchmark_path": str,
    },
    "run": {"seed": int, "threads": int},
}


@dataclass
class RunConfig:
    """Parsed sections plus the raw resolved key-value view for manifests."""

    sections: dict[str, dict[str, object]] = field(default_factory=dict)
    path: str = ""
    text: str = ""

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    # -- typed views -------------------------------------------------------

    def synth_spec(self, seed: int) -> SynthSpec:
        sec = self.sections.get("synth")
        if sec is None:
            raise ConfigError("missing [synth] section", self.path)
        required = ("n_assets", "n_characteristics", "k_true", "n_periods", "factor_dynamics")
        for key in required:
            if key not in sec:
                raise ConfigError("required key missing", self.path, field=f"synth.{key}")
        dynamics = parse_factor_dynamics(str(sec["factor_dynamics"]), self.path)
        if len(dynamics) != sec["k_true"]:
            raise ConfigError(f"factor_dynamics has {len(dynamics)} entries, k_true is {sec['k_true']}",
                              self.path, field="synth.factor_dynamics")
        return SynthSpec(
            n_assets=sec["n_assets"], n_characteristics=sec["n_characteristics"],
            k_true=sec["k_true"], n_periods=sec["n_periods"], factor_dynamics=dynamics,
            beta_map=sec.get("beta_map", "linear"), idio_sigma=sec.get("idio_sigma", 0.0),
            seed=seed, nonlinear_width=sec.get("nonlinear_width", 16))

    def cae_config(self) -> CaeConfig:
        sec = dict(self.sections.get("cae", {}))
        if "hidden_layers" in sec:
            sec["hidden_layers"] = tuple(sec["hidden_layers"])
        try:
            return CaeConfig(**sec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), self.path, field="cae") from exc

    def gbt_config(self) -> GbtConfig:
        try:
            return GbtConfig(**self.sections.get("qboost", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), self.path, field="qboost") from exc

    def adaptive_config(self) -> AdaptiveConfig:
        try:
            return AdaptiveConfig(**self.sections.get("adaptive", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), self.path, field="adaptive") from exc

    def backtest_config(self, k_factors: int) -> BacktestConfig:
        sec = dict(self.sections.get("backtest", {}))
        sec.pop("ensemble", None)
        sec.pop("benchmark_path", None)
        if "forecasters" in sec:
            sec["forecaster_set"] = tuple(sec.pop("forecasters"))
        if "kappa_grid" in sec:
            sec["kappa_grid"] = tuple(sec["kappa_grid"])
        for key in ("train_start", "oos_start", "oos_end"):
            if key not in sec:
                raise ConfigError("required key missing", self.path, field=f"backtest.{key}")
        try:
            return BacktestConfig(k_factors=k_factors, **sec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), self.path, field="backtest") from exc


def parse_factor_dynamics(text: str, path: str = "") -> tuple[FactorDynamics, ...]:
    """Parse entries like ``ar1(mu=0.01, phi=0.9, sigma=0.004); iid(sigma=0.02)*9``."""
    out: list[FactorDynamics] = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        m = _DYNAMICS_RE.match(chunk)
        if m is None:
            raise ConfigError(f"bad factor dynamics entry {chunk!r}", path,
                              field="synth.factor_dynamics")
        kind, params_text, repeat = m.group(1), m.group(2), int(m.group(3) or 1)
        params = {}
        for pair in params_text.split(","):
            pair = pair.strip()
            if not pair:
                continue
            if "=" not in pair:
                raise ConfigError(f"bad parameter {pair!r} in {chunk!r}", path,
                                  field="synth.factor_dynamics")
            key, value = (p.strip() for p in pair.split("=", 1))
            params[key] = float(value)
        if kind == "iid" and "phi" in params:
            raise ConfigError("iid entries cannot set phi", path, field="synth.factor_dynamics")
        try:
            dyn = FactorDynamics(mu=params.pop("mu", 0.0), phi=params.pop("phi", 0.0),
                                 sigma=params.pop("sigma", 0.01))
        except ValueError as exc:
            raise ConfigError(str(exc), path, field="synth.factor_dynamics") from exc
        if params:
            raise ConfigError(f"unknown parameters {sorted(params)} in {chunk!r}", path,
                              field="synth.factor_dynamics")
        out.extend([dyn] * repeat)
    if not out:
        raise ConfigError("empty factor_dynamics", path, field="synth.factor_dynamics")
    return tuple(out)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from exc
    sections: dict[str, dict[str, object]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", str(path), lineno)
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", str(path), lineno)
        if current is None:
            raise ConfigError("key outside any [section]", str(path), lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA[current]:
            raise ConfigError("unknown key", str(path), lineno, f"{current}.{key}")
        parser = SCHEMA[current][key]
        try:
            sections[current][key] = parser(value)
        except ValueError as exc:
            raise ConfigError(str(exc), str(path), lineno, f"{current}.{key}") from exc
    return RunConfig(sections, str(path), text)


def manifest_lines(config: RunConfig, command: str, seed: int, version: str,
                   extra: dict[str, str] | None = None) -> list[str]:
    lines = [
        f"tool_version = {version}",
        f"command = {command}",
        f"config_path = {config.path}",
        f"config_sha256 = {config.sha256()}",
        f"seed = {seed}",
    ]
    for name, value in (extra or {}).items():
        lines.append(f"{name} = {value}")
    for section in sorted(config.sections):
        for key in sorted(config.sections[section]):
            lines.append(f"{section}.{key} = {config.sections[section][key]}")
    return lines
