"""Batch command-line front end: generate, train, forecast, backtest, report.

Every command is deterministic given identical inputs and seeds, writes a
manifest echoing the fully-resolved configuration, and exits 0 on success,
1 on validation errors (bad config, missing files) and 2 on runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, backtest as bt, cae, metrics, synthdata
from .config import RunConfig, load_config, manifest_lines
from .core import (RngStream, fmt12, read_factor_series_csv, read_panel_csv,
                   write_factor_series_csv, write_panel_csv)
from .errors import ConfigError, FactorLabError
from .forecasters import (external_forecast_load, iid_bs_forecast, qboost_train,
                          qboost_forecast, select_peers, write_forecast_csv,
                          build_features)
from .forecasters.features import MIN_HISTORY

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _require_file(path, what: str) -> Path:
    if not path:
        raise ConfigError(f"missing required {what}")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}", str(p))
    return p


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("FACTORLAB_THREADS")
    return max(1, int(env)) if env else 1


def _seed(args, config: RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    return int(config.get("run", "seed", 0))


def _write_manifest(out_dir: Path, config: RunConfig, command: str, seed: int,
                    extra: dict[str, str] | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = manifest_lines(config, command, seed, __version__, extra)
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_benchmark_csv(path) -> dict[int, float]:
    out: dict[int, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                out[int(row[0])] = float(row[1])
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    spec_path = args.spec or args.config
    if not spec_path:
        raise ConfigError("gen needs --spec (or --config)")
    config = load_config(_require_file(spec_path, "spec file"))
    seed = _seed(args, config)
    spec = config.synth_spec(seed)
    panel, truth = synthdata.generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_panel_csv(panel, out)
    extra = {"panel": str(out)}
    if args.truth:
        truth_path = Path(args.truth)
        synthdata.write_truth_csv(truth, truth_path)
        betas_path = truth_path.with_suffix(".betas.csv")
        synthdata.write_truth_betas_csv(truth, betas_path)
        extra["truth"] = str(truth_path)
        extra["truth_betas"] = str(betas_path)
    _write_manifest(out.parent, config, "gen", seed, extra)
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(_require_file(args.config, "config file"))
    panel = read_panel_csv(_require_file(args.panel, "panel file"))
    seed = _seed(args, config)
    cae_config = config.cae_config()
    train_end = panel.last_period
    models = cae.train(cae_config, panel, train_end, RngStream(seed, ("train",)),
                       threads=_threads(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, model in enumerate(models):
        cae.save_model(model, out / f"expert_{i:03d}.txt")
    series = cae.factor_series(models, panel, [s for s in panel.periods if s <= train_end])
    write_factor_series_csv(series, out / "factors.csv")
    _write_manifest(out, config, "train", seed,
                    {"panel": str(args.panel), "n_experts": str(len(models)),
                     "train_end": str(train_end)})
    return EXIT_OK


def cmd_forecast(args) -> int:
    config = load_config(_require_file(args.config, "config file"))
    series = read_factor_series_csv(_require_file(args.series, "factor series file"))
    seed = _seed(args, config)
    t = max(s.periods[-1] for s in series)
    engine = args.forecaster or "iid"
    rng = RngStream(seed, ("forecast",))
    if engine == "iid":
        forecasts = [iid_bs_forecast(s, t, rng.derive("iidbs", s.factor_id, t),
                                     int(config.get("backtest", "iid_resamples", 1000)))
                     for s in series]
    elif engine == "qboost":
        gbt_config = config.gbt_config()
        forecasts = []
        for s in series:
            peers = select_peers(series, s.factor_id, t)
            rows, targets = [], []
            for j in range(MIN_HISTORY - 1, len(s.periods) - 1):
                rows.append(build_features(s, peers, s.periods[j]).values)
                targets.append(s.values[j + 1])
            model = qboost_train(np.array(rows), np.array(targets), gbt_config,
                                 rng.derive("qboost", s.factor_id))
            forecasts.append(qboost_forecast(model, build_features(s, peers, t)))
    elif engine == "external":
        path = config.get("backtest", "external_forecast_path")
        if not path:
            raise ConfigError("external forecaster needs backtest.external_forecast_path",
                              config.path)
        forecasts = external_forecast_load(_require_file(path, "forecast file"),
                                           [s.factor_id for s in series], t + 1)
    else:
        raise ConfigError(f"unknown forecaster {engine!r}", config.path)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_forecast_csv(forecasts, out)
    _write_manifest(out.parent, config, "forecast", seed,
                    {"series": str(args.series), "engine": engine, "target": str(t + 1)})
    return EXIT_OK


def cmd_backtest(args) -> int:
    config = load_config(_require_file(args.config, "config file"))
    panel = read_panel_csv(_require_file(args.panel, "panel file"))
    seed = _seed(args, config)
    cae_config = config.cae_config()
    bt_config = config.backtest_config(cae_config.k_factors)
    if args.forecaster:
        bt_config = _replace_forecasters(bt_config, (args.forecaster,))
    if args.kappa:
        bt_config = _replace_kappa_mode(bt_config, args.kappa)
    result = bt.run_backtest(panel, bt_config, RngStream(seed, ("backtest",)),
                             cae_config=cae_config, gbt_config=config.gbt_config(),
                             adaptive_config=config.adaptive_config(),
                             threads=_threads(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, ledger in sorted(result.ledgers.items()):
        bt.write_ledger_csv(ledger, out / f"{name}.csv")
        bt.write_weights_csv(ledger, out / f"{name}.weights.csv")
    if result.kappa_traces:
        bt.write_kappa_trace_csv(result.kappa_traces, out / "kappa_trace.csv")
    _write_ensembles(config, bt_config, result, out)
    _write_manifest(out, config, "backtest", seed,
                    {"panel": str(args.panel), "strategies": str(len(result.ledgers))})
    return EXIT_OK


def _replace_forecasters(cfg: bt.BacktestConfig, forecasters) -> bt.BacktestConfig:
    from dataclasses import replace
    return replace(cfg, forecaster_set=tuple(forecasters))


def _replace_kappa_mode(cfg: bt.BacktestConfig, mode: str) -> bt.BacktestConfig:
    from dataclasses import replace
    return replace(cfg, kappa_mode=mode)


def _write_ensembles(config: RunConfig, bt_config, result, out: Path) -> None:
    variant = str(config.get("backtest", "ensemble", "none")).lower()
    if variant == "none":
        return
    if bt_config.kappa_mode == "adaptive":
        members = [f"{e}-adaptive" for e in bt_config.forecaster_set]
    else:
        k = bt_config.kappa_mode.split(":", 1)[1]
        members = [f"{e}-k{k}" for e in bt_config.forecaster_set]
    series = {m: result.ledgers[m].gross_series() for m in members}
    periods = result.ledgers[members[0]].periods()
    benchmark = None
    bench_path = config.get("backtest", "benchmark_path")
    if variant in ("a", "both"):
        if not bench_path:
            raise ConfigError("ensemble A needs backtest.benchmark_path", config.path)
        bench_map = _read_benchmark_csv(_require_file(bench_path, "benchmark file"))
        try:
            benchmark = np.array([bench_map[p] for p in periods])
        except KeyError as exc:
            raise ConfigError(f"benchmark missing period {exc}", str(bench_path)) from exc
    jobs = []
    if variant in ("a", "both"):
        jobs.append(("ensemble-A", benchmark))
    if variant in ("b", "both"):
        jobs.append(("ensemble-B", None))
    for name, bench in jobs:
        _, returns = bt.ensemble_tangency(series, bench)
        ledger = bt.BacktestLedger(name)
        for p, r in zip(periods, returns):
            ledger.rows.append(bt.LedgerRow(p, float(r), float(r), 0.0, 0))
        bt.write_ledger_csv(ledger, out / f"{name}.csv")


def cmd_report(args) -> int:
    ledger_path = Path(args.ledger)
    if ledger_path.is_dir():
        files = sorted(p for p in ledger_path.glob("*.csv")
                       if not p.name.endswith(("weights.csv", "kappa_trace.csv")))
    else:
        files = [_require_file(ledger_path, "ledger file")]
    if not files:
        raise ConfigError(f"no ledger CSVs under {ledger_path}", str(ledger_path))
    benchmark_map = _read_benchmark_csv(_require_file(args.benchmark, "benchmark file")) \
        if args.benchmark else None
    rf_map = _read_benchmark_csv(_require_file(args.rf, "risk-free file")) if args.rf else None
    use_net = args.series_kind == "net"

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports: dict[str, metrics.PerfReport] = {}
    for path in files:
        ledger = bt.read_ledger_csv(path, path.stem)
        returns = ledger.net_series() if use_net else ledger.gross_series()
        periods = ledger.periods()
        bench = np.array([benchmark_map[p] for p in periods]) if benchmark_map else None
        rf = np.array([rf_map[p] for p in periods]) if rf_map else None
        turnover = float(np.mean([r.turnover for r in ledger.rows]))
        reports[path.stem] = metrics.perf_report(returns, bench, rf, turnover)
        metrics.write_wealth_csv(periods, returns, out / f"wealth_{path.stem}.csv")
        if args.factors:
            factor_series = []
            for fpath in args.factors.split(","):
                fmap = _read_benchmark_csv(_require_file(fpath.strip(), "factor file"))
                factor_series.append((Path(fpath.strip()).stem,
                                      np.array([fmap[p] for p in periods])))
            steps, final_r2 = metrics.expanding_alpha_regression(returns, factor_series)
            with open(out / f"alphas_{path.stem}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["n_factors", "factor_added", "alpha_monthly", "t_stat"])
                for step in steps:
                    writer.writerow([step.n_factors, step.factor_added,
                                     fmt12(step.alpha_monthly), fmt12(step.t_stat)])
                writer.writerow(["final_r2", "", fmt12(final_r2), ""])
    metrics.write_report_txt(reports, out / "report.txt")
    metrics.write_report_csv(reports, out / "report.csv")
    metrics.write_frontier_csv(reports, out / "frontier.csv")
    lines = [f"tool_version = {__version__}", "command = report",
             f"ledger = {args.ledger}", f"series_kind = {args.series_kind}",
             f"strategies = {len(reports)}"]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factorlab",
                                     description="latent factor portfolio lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--threads", type=int,
                       help="worker cap (or FACTORLAB_THREADS)")

    p = sub.add_parser("gen", help="generate a synthetic panel")
    common(p)
    p.add_argument("--spec", help="synthetic spec config (alias of --config)")
    p.add_argument("--out", required=True, help="panel CSV to write")
    p.add_argument("--truth", help="ground-truth factor CSV to write")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train factor models on a panel")
    common(p)
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("forecast", help="forecast a factor-series export")
    common(p)
    p.add_argument("--series", required=True, help="period,factor_id,value CSV")
    p.add_argument("--forecaster", choices=["iid", "qboost", "external"])
    p.add_argument("--out", required=True, help="forecast CSV to write")
    p.set_defaults(fn=cmd_forecast)

    p = sub.add_parser("backtest", help="run the expanding-window backtest")
    common(p)
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True, help="ledger directory")
    p.add_argument("--forecaster", choices=["iid", "qboost", "external"],
                   help="restrict to one engine")
    p.add_argument("--kappa", help="'fixed:N' or 'adaptive'")
    p.set_defaults(fn=cmd_backtest)

    p = sub.add_parser("report", help="performance report from ledgers")
    common(p)
    p.add_argument("--ledger", required=True, help="ledger CSV or directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--benchmark", help="period,value benchmark CSV")
    p.add_argument("--rf", help="period,value risk-free CSV")
    p.add_argument("--factors", help="comma-separated factor CSVs for alpha regressions")
    p.add_argument("--series-kind", choices=["gross", "net"], default="net")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FactorLabError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
