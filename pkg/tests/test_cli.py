import numpy as np
import pytest

from factorlab.cli import main
from factorlab.config import load_config, parse_factor_dynamics
from factorlab.core import read_factor_series_csv, read_panel_csv
from factorlab.errors import ConfigError
from factorlab.forecasters import external_forecast_load

SMALL_CFG = """
[run]
seed = 7

[synth]
n_assets = 50
n_characteristics = 6
k_true = 4
n_periods = 220
beta_map = linear
idio_sigma = 0.002
factor_dynamics = ar1(mu=0.015, phi=0.9, sigma=0.004359); iid(mu=0.0, sigma=0.03)*3

[cae]
k_factors = 4
hidden_layers =
learning_rate = 0.01
optimizer = adam
epochs = 25
batch_size = 10000
l1_lambda = 0.0
patience = 10
n_experts = 1
validation_months = 60

[adaptive]
lookback = 12

[backtest]
train_start = 1
oos_start = 181
oos_end = 220
cost_kappa = 0.001
top_n = 300
forecasters = iid
kappa_mode = adaptive
ensemble = none
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(SMALL_CFG)
    return root, cfg


@pytest.fixture(scope="module")
def generated(workdir):
    root, cfg = workdir
    panel = root / "panel.csv"
    truth = root / "truth.csv"
    code = main(["gen", "--spec", str(cfg), "--out", str(panel), "--truth", str(truth)])
    assert code == 0
    return root, cfg, panel, truth


class TestConfigParsing:
    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[run]\nseed = 1\nbogus = 2\n")
        with pytest.raises(ConfigError) as err:
            load_config(bad)
        assert "bogus" in str(err.value) and "line 3" in str(err.value)

    def test_unknown_section_rejected(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[nope]\nx = 1\n")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_factor_dynamics_repeat(self):
        dyn = parse_factor_dynamics("iid(sigma=0.02)*3; ar1(mu=0.01, phi=0.5, sigma=0.01)")
        assert len(dyn) == 4
        assert dyn[0].sigma == 0.02 and dyn[0].phi == 0.0
        assert dyn[3].phi == 0.5

    def test_factor_dynamics_bad_entry(self):
        with pytest.raises(ConfigError):
            parse_factor_dynamics("garch(1)")


class TestGen:
    def test_panel_and_truth_written(self, generated):
        root, cfg, panel, truth = generated
        p = read_panel_csv(panel)
        assert p.periods == tuple(range(1, 221))
        assert p.n_characteristics == 6
        assert truth.exists() and truth.with_suffix(".betas.csv").exists()
        assert (root / "manifest.txt").exists()

    def test_missing_spec_file_exit_1(self, tmp_path, capsys):
        code = main(["gen", "--spec", str(tmp_path / "nope.cfg"), "--out",
                     str(tmp_path / "p.csv")])
        assert code == 1
        assert "nope.cfg" in capsys.readouterr().err

    def test_gen_deterministic(self, generated, tmp_path):
        root, cfg, panel, _ = generated
        other = tmp_path / "panel2.csv"
        assert main(["gen", "--spec", str(cfg), "--out", str(other)]) == 0
        assert other.read_bytes() == panel.read_bytes()


@pytest.fixture(scope="module")
def trained(generated, tmp_path_factory):
    root, cfg, panel, _ = generated
    out = tmp_path_factory.mktemp("models")
    assert main(["train", "--panel", str(panel), "--config", str(cfg),
                 "--out", str(out)]) == 0
    return cfg, panel, out


@pytest.fixture(scope="module")
def backtested(generated, tmp_path_factory):
    root, cfg, panel, _ = generated
    out = tmp_path_factory.mktemp("ledgers")
    assert main(["backtest", "--panel", str(panel), "--config", str(cfg),
                 "--out", str(out)]) == 0
    return cfg, panel, out


class TestTrainForecast:
    def test_models_and_series_written(self, trained):
        cfg, panel, out = trained
        assert (out / "expert_000.txt").exists()
        series = read_factor_series_csv(out / "factors.csv")
        assert len(series) == 4

    def test_forecast_iid_roundtrip(self, trained, tmp_path):
        cfg, panel, out = trained
        fc_path = tmp_path / "fc.csv"
        assert main(["forecast", "--series", str(out / "factors.csv"),
                     "--forecaster", "iid", "--config", str(cfg),
                     "--out", str(fc_path)]) == 0
        series = read_factor_series_csv(out / "factors.csv")
        target = max(s.periods[-1] for s in series) + 1
        fcs = external_forecast_load(fc_path, [s.factor_id for s in series], target)
        assert len(fcs) == 4


class TestBacktestReport:
    def test_ledgers_written(self, backtested):
        cfg, panel, out = backtested
        for k in range(1, 5):
            assert (out / f"iid-k{k}.csv").exists()
            assert (out / f"iid-k{k}.weights.csv").exists()
        assert (out / "iid-adaptive.csv").exists()
        assert (out / "kappa_trace.csv").exists()
        assert (out / "manifest.txt").exists()

    def test_report_outputs(self, backtested, tmp_path):
        cfg, panel, out = backtested
        report_dir = tmp_path / "report"
        assert main(["report", "--ledger", str(out), "--out", str(report_dir)]) == 0
        assert (report_dir / "report.txt").exists()
        assert (report_dir / "report.csv").exists()
        assert (report_dir / "frontier.csv").exists()
        assert (report_dir / "wealth_iid-adaptive.csv").exists()

    def test_report_rerun_byte_identical(self, backtested, tmp_path):
        cfg, panel, out = backtested
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["report", "--ledger", str(out), "--out", str(d1)]) == 0
        assert main(["report", "--ledger", str(out), "--out", str(d2)]) == 0
        for f1 in sorted(d1.iterdir()):
            assert f1.read_bytes() == (d2 / f1.name).read_bytes()

    def test_backtest_rerun_byte_identical(self, backtested, tmp_path_factory):
        cfg, panel, out = backtested
        out2 = tmp_path_factory.mktemp("ledgers2")
        assert main(["backtest", "--panel", str(panel), "--config", str(cfg),
                     "--out", str(out2)]) == 0
        for f1 in sorted(out.glob("*.csv")):
            assert f1.read_bytes() == (out2 / f1.name).read_bytes(), f1.name

    def test_kappa_flag_fixed_mode(self, backtested, tmp_path_factory):
        cfg, panel, out = backtested
        out2 = tmp_path_factory.mktemp("fixed")
        assert main(["backtest", "--panel", str(panel), "--config", str(cfg),
                     "--out", str(out2), "--kappa", "fixed:2"]) == 0
        assert (out2 / "iid-k2.csv").exists()
        assert not (out2 / "iid-adaptive.csv").exists()

    def test_report_on_missing_ledger_exit_1(self, tmp_path, capsys):
        code = main(["report", "--ledger", str(tmp_path / "missing.csv"),
                     "--out", str(tmp_path / "r")])
        assert code == 1
        assert "missing.csv" in capsys.readouterr().err

    def test_report_with_benchmark_and_factor_regressions(self, backtested, tmp_path):
        cfg, panel, out = backtested
        ledger = out / "iid-adaptive.csv"
        periods = [int(row.split(",")[0]) for row in
                   ledger.read_text().splitlines()[1:]]
        rng = np.random.default_rng(0)
        bench = tmp_path / "bench.csv"
        bench.write_text("period,value\n" + "\n".join(
            f"{p},{0.005 + 0.02 * rng.standard_normal():.6f}" for p in periods) + "\n")
        factor = tmp_path / "mkt.csv"
        factor.write_text("period,value\n" + "\n".join(
            f"{p},{0.01 * rng.standard_normal():.6f}" for p in periods) + "\n")
        report_dir = tmp_path / "report"
        assert main(["report", "--ledger", str(ledger), "--out", str(report_dir),
                     "--benchmark", str(bench), "--factors", str(factor)]) == 0
        alphas = (report_dir / "alphas_iid-adaptive.csv").read_text().splitlines()
        assert alphas[0] == "n_factors,factor_added,alpha_monthly,t_stat"
        assert len(alphas) == 4  # header, 0-factor step, 1-factor step, final r2
        report_csv = (report_dir / "report.csv").read_text()
        assert "Market Beta" in report_csv

    def test_backtest_ensemble_a_requires_benchmark(self, generated, tmp_path):
        root, cfg, panel, _ = generated
        cfg_a = tmp_path / "ens_a.cfg"
        cfg_a.write_text(SMALL_CFG.replace("ensemble = none", "ensemble = A"))
        code = main(["backtest", "--panel", str(panel), "--config", str(cfg_a),
                     "--out", str(tmp_path / "led")])
        assert code == 1

    def test_backtest_ensemble_a_with_benchmark(self, generated, tmp_path):
        root, cfg, panel, _ = generated
        rng = np.random.default_rng(1)
        bench = tmp_path / "bench.csv"
        bench.write_text("period,value\n" + "\n".join(
            f"{p},{0.005 + 0.02 * rng.standard_normal():.6f}" for p in range(181, 221)) + "\n")
        cfg_a = tmp_path / "ens_a.cfg"
        cfg_a.write_text(SMALL_CFG.replace(
            "ensemble = none", f"ensemble = A\nbenchmark_path = {bench}"))
        out = tmp_path / "led"
        assert main(["backtest", "--panel", str(panel), "--config", str(cfg_a),
                     "--out", str(out)]) == 0
        assert (out / "ensemble-A.csv").exists()

    def test_threads_env_fallback(self, generated, tmp_path, monkeypatch):
        root, cfg, panel, _ = generated
        monkeypatch.setenv("FACTORLAB_THREADS", "2")
        out = tmp_path / "models_env"
        assert main(["train", "--panel", str(panel), "--config", str(cfg),
                     "--out", str(out)]) == 0
        baseline = root / "panel.csv"  # same panel; compare against threads=1 run
        out1 = tmp_path / "models_t1"
        monkeypatch.delenv("FACTORLAB_THREADS")
        assert main(["train", "--panel", str(baseline), "--config", str(cfg),
                     "--out", str(out1), "--threads", "1"]) == 0
        assert (out / "expert_000.txt").read_bytes() == (out1 / "expert_000.txt").read_bytes()
