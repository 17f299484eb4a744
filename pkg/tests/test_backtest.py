import numpy as np
import pytest

from factorlab.backtest import (BacktestConfig, BacktestLedger, LedgerRow,
                                drift_weights, ensemble_tangency, net_return,
                                perturb_future, read_ledger_csv, run_backtest,
                                turnover, write_ledger_csv)
from factorlab.cae import CaeModel
from factorlab.core import RngStream
from factorlab.errors import CostExceedsCapital, DegeneratePortfolioValue
from factorlab.synthdata import FactorDynamics, SynthSpec, generate


class TestDriftWeights:
    def test_zero_returns_no_drift(self):
        w = {"a": 0.6, "b": 0.4}
        assert drift_weights(w, {"a": 0.0, "b": 0.0}) == w

    def test_long_only_hand_computed(self):
        out = drift_weights({"a": 0.5, "b": 0.5}, {"a": 0.1, "b": -0.1})
        assert out["a"] == pytest.approx(0.55)
        assert out["b"] == pytest.approx(0.45)

    def test_single_asset_stays_one(self):
        out = drift_weights({"a": 1.0}, {"a": 0.37})
        assert out["a"] == pytest.approx(1.0)

    def test_market_neutral_legs_compound_in_place(self):
        out = drift_weights({"a": 1.0, "b": -1.0}, {"a": 0.1, "b": 0.05})
        assert out["a"] == pytest.approx(1.1)
        assert out["b"] == pytest.approx(-1.05)

    def test_missing_return_treated_as_zero(self):
        out = drift_weights({"a": 0.5, "b": 0.5}, {"a": 0.2})
        assert out["a"] == pytest.approx(0.6 / 1.1)
        assert out["b"] == pytest.approx(0.5 / 1.1)

    def test_degenerate_value_raises(self):
        with pytest.raises(DegeneratePortfolioValue):
            drift_weights({"a": 1.0, "b": 0.5}, {"a": -1.0, "b": -1.0})


class TestTurnover:
    def test_identical_zero(self):
        assert turnover({"a": 1.0}, {"a": 1.0}) == 0.0

    def test_full_rotation(self):
        assert turnover({"a": 1.0, "b": 0.0}, {"a": 0.0, "b": 1.0}) == pytest.approx(2.0)

    def test_gross_two_flip_is_four(self):
        assert turnover({"a": 1.0, "b": -1.0}, {"a": -1.0, "b": 1.0}) == pytest.approx(4.0)

    def test_missing_ids_count_as_zero(self):
        assert turnover({"a": 0.5}, {"b": 0.5}) == pytest.approx(1.0)


class TestNetReturn:
    def test_zero_turnover_net_equals_gross(self):
        assert net_return(0.0123, 0.0, 0.001) == 0.0123

    def test_hand_value(self):
        assert net_return(0.01, 2.0, 0.001) == pytest.approx(0.998 * 1.01 - 1.0)

    def test_zero_gross(self):
        assert net_return(0.0, 1.0, 0.001) == pytest.approx(-0.001)

    def test_cost_exceeding_capital(self):
        with pytest.raises(CostExceedsCapital):
            net_return(0.0, 4.0, 0.3)


# ---------------------------------------------------------------------------
# Engine fixtures: small planted panel with an oracle factor model
# ---------------------------------------------------------------------------

def planted_panel(seed=17, n_assets=40, p=6, k=4, periods=200, idio=0.002):
    planted = FactorDynamics(mu=0.015, phi=0.9, sigma=0.01 * np.sqrt(1 - 0.81))
    others = tuple(FactorDynamics(mu=0.0, phi=0.0, sigma=0.03) for _ in range(k - 1))
    spec = SynthSpec(n_assets, p, k, periods, (planted, *others), beta_map="linear",
                     idio_sigma=idio, seed=seed)
    return generate(spec)


def oracle_provider_for(truth):
    B = truth.linear_beta_matrix

    def provider(panel, train_end, rng, threads):
        return [CaeModel([B.T.copy()], [np.zeros(B.shape[1])], np.linalg.pinv(B),
                         (panel.first_period, train_end))]
    return provider


def small_config(**kw):
    base = dict(train_start=1, oos_start=161, oos_end=200, k_factors=4,
                forecaster_set=("iid",), kappa_mode="adaptive", cost_kappa=0.001)
    base.update(kw)
    return BacktestConfig(**base)


@pytest.fixture(scope="module")
def small_run():
    panel, truth = planted_panel()
    config = small_config()
    result = run_backtest(panel, config, RngStream(3, ("bt",)),
                          models_provider=oracle_provider_for(truth))
    return panel, truth, config, result


class TestRunBacktest:
    def test_strategies_present(self, small_run):
        _, _, config, result = small_run
        names = set(result.ledgers)
        assert {f"iid-k{k}" for k in range(1, 5)} <= names
        assert "iid-adaptive" in names

    def test_ledger_cost_identity_bitwise(self, small_run):
        _, _, config, result = small_run
        for ledger in result.ledgers.values():
            for row in ledger.rows:
                assert row.net == net_return(row.gross, row.turnover, config.cost_kappa)

    def test_turnover_bounded(self, small_run):
        _, _, _, result = small_run
        for ledger in result.ledgers.values():
            assert all(0.0 <= r.turnover <= 4.5 for r in ledger.rows)

    def test_books_market_neutral_gross_two(self, small_run):
        _, _, _, result = small_run
        ledger = result.ledgers["iid-k2"]
        for period, w in ledger.weights.items():
            vals = np.array(list(w.values()))
            assert abs(vals.sum()) < 1e-9
            assert abs(np.abs(vals).sum() - 2.0) < 1e-9

    def test_zero_cost_net_equals_gross(self, small_run):
        panel, truth, _, _ = small_run
        config = small_config(cost_kappa=0.0, kappa_mode="fixed:2", kappa_grid=(1, 2))
        result = run_backtest(panel, config, RngStream(3, ("bt",)),
                              models_provider=oracle_provider_for(truth))
        for ledger in result.ledgers.values():
            assert np.array_equal(ledger.gross_series(), ledger.net_series())

    def test_deterministic_rerun_bitwise(self, small_run):
        panel, truth, config, result = small_run
        again = run_backtest(panel, config, RngStream(3, ("bt",)),
                             models_provider=oracle_provider_for(truth))
        for name, ledger in result.ledgers.items():
            other = again.ledgers[name]
            assert [(r.period, r.gross, r.net, r.turnover, r.kappa) for r in ledger.rows] \
                == [(r.period, r.gross, r.net, r.turnover, r.kappa) for r in other.rows]

    def test_future_shuffle_leaves_past_rows_bitwise(self, small_run):
        panel, truth, config, result = small_run
        cut = 180
        shuffled = perturb_future(panel, cut, RngStream(9, ("shuffle",)))
        other = run_backtest(shuffled, config, RngStream(3, ("bt",)),
                             models_provider=oracle_provider_for(truth))
        for name, ledger in result.ledgers.items():
            mine = [(r.period, r.gross, r.net, r.turnover, r.kappa)
                    for r in ledger.rows if r.period <= cut]
            theirs = [(r.period, r.gross, r.net, r.turnover, r.kappa)
                      for r in other.ledgers[name].rows if r.period <= cut]
            assert mine == theirs and len(mine) > 0

    def test_adaptive_warmup_uses_half_k(self, small_run):
        _, _, _, result = small_run
        trace = result.kappa_traces["iid"]
        assert trace.kappas[:12] == [2] * 12

    def test_kappa_column_matches_trace(self, small_run):
        _, _, _, result = small_run
        trace = result.kappa_traces["iid"]
        ledger = result.ledgers["iid-adaptive"]
        assert [r.kappa for r in ledger.rows] == trace.kappas


class TestEnsembleTangency:
    def test_identical_series_split_evenly(self):
        rng = np.random.default_rng(0)
        r = 0.01 + 0.02 * rng.standard_normal(30)
        weights, _ = ensemble_tangency({"a": r, "b": r.copy()})
        np.testing.assert_allclose(weights[-1], [0.5, 0.5], atol=1e-6)

    def test_dominant_strategy_closed_form(self):
        rng = np.random.default_rng(1)
        n = 4000
        a = 0.002 + 0.01 * rng.standard_normal(n)
        b = 0.001 + 0.01 * rng.standard_normal(n)
        weights, _ = ensemble_tangency({"a": a, "b": b})
        # with Sigma ~ sigma^2 I and mu ~ (2, 1), tangency ~ (2/3, 1/3)
        np.testing.assert_allclose(weights[-1], [2 / 3, 1 / 3], atol=0.08)

    def test_warmup_equal_weights(self):
        rng = np.random.default_rng(2)
        series = {"a": rng.standard_normal(20), "b": rng.standard_normal(20),
                  "c": rng.standard_normal(20)}
        weights, _ = ensemble_tangency(series)
        np.testing.assert_allclose(weights[:12], 1.0 / 3.0)

    def test_benchmark_column_appended(self):
        rng = np.random.default_rng(3)
        series = {"a": 0.01 + 0.01 * rng.standard_normal(40)}
        bench = 0.005 + 0.02 * rng.standard_normal(40)
        weights, returns = ensemble_tangency(series, benchmark=bench)
        assert weights.shape == (40, 2)
        recon = weights[:, 0] * series["a"] + weights[:, 1] * bench
        np.testing.assert_allclose(returns, recon, atol=1e-14)

    def test_causal_weights(self):
        rng = np.random.default_rng(4)
        series = {"a": rng.standard_normal(30) * 0.01 + 0.002,
                  "b": rng.standard_normal(30) * 0.01 + 0.001}
        weights, _ = ensemble_tangency(series)
        tampered = {k: v.copy() for k, v in series.items()}
        tampered["a"][20:] += 1.0
        weights2, _ = ensemble_tangency(tampered)
        assert np.array_equal(weights[:21], weights2[:21])


class TestLedgerCsv:
    def test_round_trip(self, tmp_path):
        ledger = BacktestLedger("s")
        ledger.rows = [LedgerRow(5, 0.01, 0.009, 1.5, 3),
                       LedgerRow(6, -0.02, -0.0213, 1.2, 4)]
        path = tmp_path / "ledger.csv"
        write_ledger_csv(ledger, path)
        back = read_ledger_csv(path, "s")
        assert [(r.period, r.kappa) for r in back.rows] == [(5, 3), (6, 4)]
        assert back.rows[0].gross == pytest.approx(0.01, abs=1e-12)
