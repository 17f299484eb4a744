import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factorlab.errors import CollinearFactors, InsufficientData
from factorlab.metrics import (expanding_alpha_regression, max_drawdown, perf_report,
                               write_report_csv, write_report_txt)


def brute_force_ols_coef(X, y):
    return np.linalg.inv(X.T @ X) @ (X.T @ y)


class TestPerfReport:
    def test_constant_one_percent(self):
        r = np.full(24, 0.01)
        rep = perf_report(r)
        assert rep.total_return == pytest.approx(1.01 ** 24 - 1.0, rel=1e-12)
        assert rep.cagr == pytest.approx(1.01 ** 12 - 1.0, rel=1e-12)
        assert rep.max_drawdown == 0.0
        assert rep.omega == math.inf
        assert rep.annual_return == pytest.approx(0.12)

    def test_drawdown_hand_path(self):
        rep = perf_report(np.array([0.1, -0.1] + [0.0] * 10))
        assert rep.max_drawdown == pytest.approx(0.10, abs=1e-12)

    def test_zero_series_all_ratios_zero(self):
        rep = perf_report(np.zeros(24))
        assert rep.sharpe == 0.0 and rep.sortino == 0.0 and rep.omega == 0.0
        assert rep.max_drawdown == 0.0 and rep.total_return == 0.0

    def test_annualization_conventions(self):
        rng = np.random.default_rng(3)
        r = 0.01 + 0.02 * rng.standard_normal(120)
        rep = perf_report(r)
        assert rep.annual_return == pytest.approx(12 * r.mean())
        assert rep.annual_vol == pytest.approx(math.sqrt(12) * r.std())
        assert rep.sharpe == pytest.approx(12 * r.mean() / (math.sqrt(12) * r.std()))
        downside = math.sqrt(12 * np.mean(np.minimum(r, 0.0) ** 2))
        assert rep.sortino == pytest.approx(12 * r.mean() / downside)
        assert rep.omega == pytest.approx(np.maximum(r, 0).sum() / np.maximum(-r, 0).sum())

    def test_beta_alpha_recovery(self):
        rng = np.random.default_rng(4)
        bench = 0.005 + 0.03 * rng.standard_normal(240)
        r = 0.002 + 0.7 * bench
        rep = perf_report(r, benchmark=bench)
        assert rep.beta == pytest.approx(0.7, abs=1e-10)
        assert rep.alpha_annualized == pytest.approx(12 * 0.002, abs=1e-10)

    def test_rf_changes_sharpe_not_vol(self):
        rng = np.random.default_rng(5)
        r = 0.01 + 0.02 * rng.standard_normal(60)
        rf = np.full(60, 0.003)
        rep0 = perf_report(r)
        rep = perf_report(r, rf=rf)
        assert rep.annual_vol == rep0.annual_vol
        assert rep.sharpe == pytest.approx(12 * (r - rf).mean() / (math.sqrt(12) * r.std()))

    def test_too_short_raises(self):
        with pytest.raises(InsufficientData):
            perf_report(np.zeros(11))

    @given(st.floats(0.1, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_scale_consistency(self, c):
        rng = np.random.default_rng(7)
        r = 0.01 * rng.standard_normal(48) + 0.002
        a, b = perf_report(r), perf_report(c * r)
        assert b.annual_return == pytest.approx(c * a.annual_return, rel=1e-9)
        assert b.annual_vol == pytest.approx(c * a.annual_vol, rel=1e-9)
        assert b.sharpe == pytest.approx(a.sharpe, rel=1e-9)

    def test_omega_above_one_iff_positive_mean(self):
        rng = np.random.default_rng(8)
        for seed in range(5):
            r = rng.standard_normal(60) * 0.02 + (0.005 if seed % 2 else -0.005)
            rep = perf_report(r)
            if r.mean() > 0 and (r < 0).any():
                assert rep.omega > 1.0
            elif r.mean() < 0:
                assert rep.omega < 1.0

    def test_total_return_consistent_with_compounding(self):
        rng = np.random.default_rng(9)
        r = 0.02 * rng.standard_normal(36)
        rep = perf_report(r)
        assert abs((1.0 + rep.total_return) - np.prod(1.0 + r)) < 1e-10


class TestMaxDrawdown:
    def test_within_unit_interval(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            r = 0.05 * rng.standard_normal(100)
            dd = max_drawdown(r)
            assert 0.0 <= dd <= 1.0


class TestExpandingAlphaRegression:
    def test_exact_linear_model(self):
        rng = np.random.default_rng(11)
        f1 = 0.02 * rng.standard_normal(120)
        r = 0.01 + 0.5 * f1
        steps, r2 = expanding_alpha_regression(r, [("f1", f1)])
        assert steps[-1].alpha_monthly == pytest.approx(0.01, abs=1e-12)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_series_on_itself(self):
        rng = np.random.default_rng(12)
        r = 0.01 + 0.02 * rng.standard_normal(60)
        steps, r2 = expanding_alpha_regression(r, [("self", r)])
        assert steps[-1].alpha_monthly == pytest.approx(0.0, abs=1e-12)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_coefficients_match_brute_force(self):
        rng = np.random.default_rng(13)
        n = 90
        factors = [(f"f{j}", 0.02 * rng.standard_normal(n)) for j in range(3)]
        r = 0.005 + 0.02 * rng.standard_normal(n)
        steps, _ = expanding_alpha_regression(r, factors)
        for j in range(4):
            X = np.column_stack([np.ones(n)] + [f for _, f in factors[:j]])
            expected = brute_force_ols_coef(X, r)[0]
            assert steps[j].alpha_monthly == pytest.approx(expected, abs=1e-10)

    def test_r2_never_decreases_with_more_factors(self):
        rng = np.random.default_rng(14)
        n = 80
        r = 0.01 * rng.standard_normal(n)
        r2_values = []
        factors = [(f"f{j}", 0.01 * rng.standard_normal(n)) for j in range(4)]
        for j in range(1, 5):
            _, r2 = expanding_alpha_regression(r, factors[:j])
            r2_values.append(r2)
        assert all(b >= a - 1e-12 for a, b in zip(r2_values, r2_values[1:]))

    def test_collinear_factor_dropped_with_warning(self):
        rng = np.random.default_rng(15)
        f1 = 0.02 * rng.standard_normal(50)
        r = 0.01 + f1
        with pytest.warns(CollinearFactors):
            steps, _ = expanding_alpha_regression(r, [("f1", f1), ("dup", 2.0 * f1)])
        assert [s.factor_added for s in steps] == ["", "f1"]

    def test_white_tstat_against_explicit_sandwich(self):
        rng = np.random.default_rng(16)
        n = 70
        f = 0.02 * rng.standard_normal(n)
        r = 0.003 + 0.4 * f + 0.01 * rng.standard_normal(n)
        steps, _ = expanding_alpha_regression(r, [("f", f)])
        X = np.column_stack([np.ones(n), f])
        coef = brute_force_ols_coef(X, r)
        e = r - X @ coef
        xtx_inv = np.linalg.inv(X.T @ X)
        cov = xtx_inv @ (X * e[:, None] ** 2).T @ X @ xtx_inv
        expected_t = coef[0] / math.sqrt(cov[0, 0])
        assert steps[-1].t_stat == pytest.approx(expected_t, rel=1e-10)


class TestReportFiles:
    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(17)
        reports = {"s1": perf_report(0.01 * rng.standard_normal(24)),
                   "s2": perf_report(0.01 + 0.02 * rng.standard_normal(24))}
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        write_report_txt(reports, a)
        write_report_txt(reports, b)
        assert a.read_bytes() == b.read_bytes()
        ca, cb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_report_csv(reports, ca)
        write_report_csv(reports, cb)
        assert ca.read_bytes() == cb.read_bytes()
