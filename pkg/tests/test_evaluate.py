"""Economic-value metrics, GoF tests, baselines, and the backtest loop."""

import json
import warnings

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from dynfolio import allocate, evaluate as ev, moments


@pytest.fixture(scope="module")
def paired_returns():
    rng = np.random.default_rng(3)
    a = rng.normal(0.001, 0.02, 400)
    b = 0.6 * a + rng.normal(0.002, 0.016, 400)
    return a, b


class TestManagementFee:

    def test_identical_series_exact_zero(self, paired_returns):
        a, _ = paired_returns
        assert ev.management_fee(a, a, 5.0) == 0.0

    def test_translation(self, paired_returns):
        a, _ = paired_returns
        for upsilon in (1.0, 5.0, 20.0):
            fee = ev.management_fee(a, a + 0.003, upsilon)
            assert fee == pytest.approx(0.003, abs=1e-10)

    def test_monotone_in_shift(self, paired_returns):
        a, b = paired_returns
        fees = [ev.management_fee(a, b + c, 7.0)
                for c in (-0.002, 0.0, 0.002, 0.004)]
        assert np.all(np.diff(fees) > 0.0)

    def test_sign_means_b_preferred(self, paired_returns):
        a, _ = paired_returns
        assert ev.management_fee(a, a + 0.01, 5.0) > 0.0
        assert ev.management_fee(a, a - 0.01, 5.0) < 0.0

    def test_ruined_a_rejected(self):
        a = np.array([0.01, -1.5, 0.02])
        with pytest.raises(ValueError, match="ruined"):
            ev.management_fee(a, np.zeros(3), 5.0)

    def test_length_mismatch(self, paired_returns):
        a, b = paired_returns
        with pytest.raises(ValueError, match="length"):
            ev.management_fee(a, b[:-1], 5.0)


class TestModifiedSharpe:

    def test_self_comparison_exact_zero(self, paired_returns):
        a, _ = paired_returns
        assert ev.modified_sharpe(a, a) == 0.0

    def test_equal_dispersion_reduces_to_mean_gap(self):
        rng = np.random.default_rng(11)
        a = rng.normal(0.0, 0.02, 300)
        b = a[::-1].copy() + 0.001  # same std, shifted mean
        got = ev.modified_sharpe(a, b)
        assert got == pytest.approx(b.mean() - a.mean(), abs=1e-15)

    def test_sign_matches_sharpe_ordering(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            a = rng.normal(rng.normal(), rng.uniform(0.5, 2.0), 200)
            b = rng.normal(rng.normal(), rng.uniform(0.5, 2.0), 200)
            expect = b.mean() / b.std() > a.mean() / a.std()
            assert (ev.modified_sharpe(a, b) > 0.0) == expect

    def test_antisymmetric_signs(self, paired_returns):
        a, b = paired_returns
        ab, ba = ev.modified_sharpe(a, b), ev.modified_sharpe(b, a)
        assert ab != 0.0 and np.sign(ab) == -np.sign(ba)

    def test_degenerate_series_rejected(self):
        with pytest.raises(ValueError, match="dispersion"):
            ev.modified_sharpe(np.zeros(10), np.ones(10))


class TestBlockBootstrap:

    def test_zero_statistic_gives_p_one(self, paired_returns):
        a, b = paired_returns
        p = ev.block_bootstrap_pvalue(lambda x, y: 0.0, a, b, n_boot=50,
                                      random_state=0)
        assert p == 1.0

    def test_fixed_seed_reproducible(self, paired_returns):
        a, b = paired_returns
        args = dict(n_boot=199, random_state=5)
        p1 = ev.block_bootstrap_pvalue(ev.modified_sharpe, a, b, **args)
        p2 = ev.block_bootstrap_pvalue(ev.modified_sharpe, a, b, **args)
        assert p1 == p2

    def test_size_under_the_null(self):
        # equal-distribution pairs: the 5% rejection rate should be near
        # nominal; a condensed version of the full calibration run
        rng = np.random.default_rng(8)
        rejections = 0
        n_exp = 200
        for _ in range(n_exp):
            a = rng.normal(0.0, 0.02, 120)
            b = rng.normal(0.0, 0.02, 120)
            p = ev.block_bootstrap_pvalue(
                ev.modified_sharpe, a, b, n_boot=199,
                random_state=int(rng.integers(2 ** 32)))
            rejections += p < 0.05
        assert 0.005 <= rejections / n_exp <= 0.115

    def test_power_against_large_shift(self, paired_returns):
        a, _ = paired_returns
        p = ev.block_bootstrap_pvalue(
            lambda x, y: ev.management_fee(x, y, 5.0), a, a + 0.02,
            n_boot=199, random_state=3)
        assert p < 0.02

    def test_bad_block_length(self, paired_returns):
        a, b = paired_returns
        with pytest.raises(ValueError, match="block_len"):
            ev.block_bootstrap_pvalue(ev.modified_sharpe, a, b,
                                      block_len=0, n_boot=10)


class TestDgtAr:

    def test_iid_size(self):
        rng = np.random.default_rng(21)
        stats_ = [ev.dgt_ar_test(rng.random(500), k=1) for _ in range(200)]
        frac = np.mean(np.asarray(stats_) < 31.4)
        assert 0.90 <= frac <= 0.99

    def test_autocorrelated_pits_detected(self):
        rng = np.random.default_rng(22)
        lat = np.zeros(1000)
        for t in range(1, 1000):
            lat[t] = 0.9 * lat[t - 1] + rng.normal()
        u = stats.norm.cdf(lat * np.sqrt(1.0 - 0.81))
        assert ev.dgt_ar_test(u, k=1) > 200.0

    def test_all_four_powers(self):
        rng = np.random.default_rng(23)
        u = rng.random(800)
        for k in (1, 2, 3, 4):
            val = ev.dgt_ar_test(u, k=k)
            assert np.isfinite(val) and val >= 0.0

    def test_constant_series_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            ev.dgt_ar_test(np.full(100, 0.4), k=1)

    def test_bad_power_rejected(self):
        with pytest.raises(ValueError, match="k must"):
            ev.dgt_ar_test(np.random.default_rng(0).random(100), k=5)


class TestDgtH:

    def test_exactly_uniform_counts_give_zero(self):
        u = (np.arange(200) + 0.5) / 200.0
        assert ev.dgt_h_test(u, n_bins=20) == 0.0

    def test_single_bin_arithmetic(self):
        T, G = 300, 20
        assert ev.dgt_h_test(np.full(T, 0.31), n_bins=G) == T * (G - 1)

    def test_iid_size_at_one_percent(self):
        rng = np.random.default_rng(24)
        crit = stats.chi2.ppf(0.99, df=19)
        vals = [ev.dgt_h_test(rng.random(1000)) for _ in range(200)]
        assert np.mean(np.asarray(vals) < crit) >= 0.95

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            ev.dgt_h_test(np.array([0.2, 1.4]))


class TestSummaryStats:

    def test_normal_sample_jb_small(self):
        rng = np.random.default_rng(25)
        tbl = ev.summary_stats(rng.normal(size=(100000, 1)))
        assert tbl.loc["asset_0", "jb_stat"] < 9.21

    def test_columns_and_quantile(self):
        rng = np.random.default_rng(26)
        y = rng.normal(size=(5000, 2))
        tbl = ev.summary_stats(y, names=["a", "b"])
        assert list(tbl.index) == ["a", "b"]
        assert tbl.loc["a", "q01"] == pytest.approx(
            np.quantile(y[:, 0], 0.01))
        assert tbl.loc["b", "kurtosis"] == pytest.approx(3.0, abs=0.3)

    def test_kendall_identities(self):
        x = np.arange(50.0)
        assert ev.kendall_tau(x, x ** 3) == 1.0
        assert ev.kendall_tau(x, -x) == -1.0


class TestGaussianBaseline:

    def test_garch_recovery(self):
        rng = np.random.default_rng(30)
        T = 4000
        omega, alpha, beta = 0.05, 0.08, 0.88
        h, e = 1.0, np.empty(T)
        for t in range(T):
            e[t] = np.sqrt(h) * rng.normal()
            h = omega + alpha * e[t] ** 2 + beta * h
        fit = ev.garch11_fit(e)
        assert fit["alpha"] == pytest.approx(alpha, abs=0.04)
        assert fit["beta"] == pytest.approx(beta, abs=0.06)

    def test_filter_matches_recursion(self):
        rng = np.random.default_rng(31)
        y = rng.normal(size=100)
        params = {"mu": 0.0, "omega": 0.1, "alpha": 0.1, "beta": 0.8}
        h, z = ev.garch11_filter(y, params)
        ref = y.var()
        assert h[0] == ref
        assert h[1] == pytest.approx(0.1 + 0.1 * y[0] ** 2 + 0.8 * ref)
        assert z[0] == pytest.approx(y[0] / np.sqrt(ref))
        assert h.shape == (101,)

    def test_dcc_recovery(self):
        rng = np.random.default_rng(32)
        T, N = 3000, 3
        a, b = 0.05, 0.90
        qbar = np.full((N, N), 0.5)
        np.fill_diagonal(qbar, 1.0)
        Q = qbar.copy()
        Z = np.empty((T, N))
        for t in range(T):
            d = np.sqrt(np.diag(Q))
            R = Q / np.outer(d, d)
            Z[t] = np.linalg.cholesky(R) @ rng.normal(size=N)
            Q = (1 - a - b) * qbar + a * np.outer(Z[t], Z[t]) + b * Q
        fit = ev.dcc11_fit(Z)
        assert fit["a"] == pytest.approx(a, abs=0.03)
        assert fit["b"] == pytest.approx(b, abs=0.10)

    def test_forecast_is_psd_and_sized(self):
        rng = np.random.default_rng(33)
        window = rng.normal(size=(300, 4)) * 2.0
        params = ev.gaussian_dcc_fit(window)
        mu, H = ev.gaussian_dcc_forecast(window, params)
        assert mu.shape == (4,) and H.shape == (4, 4)
        np.testing.assert_allclose(H, H.T, atol=1e-12)
        assert np.linalg.eigvalsh(H).min() > 0.0

    def test_min_variance_diagonal_oracle(self):
        v = np.array([1.0, 2.0, 4.0])
        w = ev.min_variance_weights(np.diag(v))
        ref = (1.0 / v) / (1.0 / v).sum()
        np.testing.assert_allclose(w, ref, atol=1e-12)


class TestScheduleType:

    def test_validation(self):
        ev.BacktestSchedule(insample_len=100, oos_len=50)
        with pytest.raises(ValueError, match="refit_every"):
            ev.BacktestSchedule(insample_len=100, oos_len=50, refit_every=0)
        with pytest.raises(ValueError, match="window"):
            ev.BacktestSchedule(insample_len=100, oos_len=50,
                                window="expanding")
        with pytest.raises(ValueError, match="rows"):
            ev.BacktestSchedule(insample_len=100, oos_len=50).check_span(120)


def synthetic_panel(T, n, seed, scale=2.0):
    rng = np.random.default_rng(seed)
    return rng.standard_t(8, size=(T, n)) * scale + 0.1


class TestBacktestCheap:
    """Paths that avoid the model strategy, so they run in seconds."""

    def test_ew_returns_are_row_means(self):
        y = synthetic_panel(320, 4, 40)
        sched = ev.BacktestSchedule(insample_len=280, oos_len=40,
                                    refit_every=40)
        rep = ev.run_backtest(y, schedule=sched, strategies=("EW", "MV"),
                              n_boot=0, random_state=0)
        np.testing.assert_allclose(rep.strategies["EW"].returns,
                                   y[280:].mean(axis=1), atol=1e-12)
        assert rep.n_refits == 1

    def test_mv_weights_fixed_and_correct(self):
        y = synthetic_panel(320, 3, 41)
        sched = ev.BacktestSchedule(insample_len=260, oos_len=60,
                                    refit_every=20)
        rep = ev.run_backtest(y, schedule=sched, strategies=("MV",),
                              n_boot=0, random_state=0)
        w = rep.strategies["MV"].weights
        ref = ev.min_variance_weights(np.cov(y[:260], rowvar=False))
        np.testing.assert_allclose(w, np.tile(ref, (60, 1)), atol=1e-12)

    def test_nmv_matches_direct_optimization(self):
        y = synthetic_panel(330, 3, 42)
        sched = ev.BacktestSchedule(insample_len=300, oos_len=30,
                                    refit_every=30)
        rep = ev.run_backtest(y, schedule=sched, strategies=("NMV",),
                              rolling_window=300, upsilon=6.0, n_boot=0,
                              random_state=9)
        # replay the seed stream the harness derives for step 0
        master = np.random.default_rng(9)
        master.integers(2 ** 63, size=30)
        opt_seeds = master.integers(2 ** 63, size=(30, len(ev.STRATEGIES)))
        k = ev.STRATEGIES.index("NMV")
        t = moments.moment_tensors(y[:300] / 100.0)
        ref = allocate.optimize_weights(t, 6.0, order=2,
                                        random_state=int(opt_seeds[0, k]))
        np.testing.assert_allclose(rep.strategies["NMV"].weights[0],
                                   ref.weights, atol=1e-12)

    def test_weight_rows_sum_to_one(self):
        y = synthetic_panel(330, 3, 43)
        sched = ev.BacktestSchedule(insample_len=290, oos_len=40,
                                    refit_every=10)
        rep = ev.run_backtest(y, schedule=sched,
                              strategies=("EW", "MV", "DCC", "NMV", "NHM"),
                              n_boot=0, random_state=1)
        for res in rep.strategies.values():
            np.testing.assert_allclose(res.weights.sum(axis=1), 1.0,
                                       atol=1e-10)

    def test_missing_value_names_the_date(self):
        y = synthetic_panel(320, 3, 44)
        y[305, 1] = np.nan
        dates = [f"2020-W{i:03d}" for i in range(320)]
        sched = ev.BacktestSchedule(insample_len=280, oos_len=40)
        with pytest.raises(ValueError, match="2020-W305"):
            ev.run_backtest(y, schedule=sched, strategies=("EW",),
                            dates=dates, n_boot=0)

    def test_unknown_strategy_rejected(self):
        y = synthetic_panel(320, 3, 45)
        sched = ev.BacktestSchedule(insample_len=280, oos_len=40)
        with pytest.raises(ValueError, match="unknown strategies"):
            ev.run_backtest(y, schedule=sched, strategies=("EW", "XXX"))

    def test_schedule_too_long_rejected(self):
        y = synthetic_panel(100, 3, 46)
        sched = ev.BacktestSchedule(insample_len=90, oos_len=40)
        with pytest.raises(ValueError, match="rows"):
            ev.run_backtest(y, schedule=sched, strategies=("EW",))

    def test_fee_and_msr_tables(self):
        y = synthetic_panel(330, 3, 47)
        sched = ev.BacktestSchedule(insample_len=290, oos_len=40,
                                    refit_every=40)
        rep = ev.run_backtest(y, schedule=sched,
                              strategies=("EW", "MV", "NMV"), upsilon=5.0,
                              n_boot=49, random_state=2)
        assert np.all(np.diag(rep.fee.values) == 0.0)
        assert np.all(np.diag(rep.msr.values) == 0.0)
        assert np.all(np.diag(rep.fee_pvalue.values) == 1.0)
        frac = {k: v.returns / 100.0 for k, v in rep.strategies.items()}
        ref = ev.management_fee(frac["EW"], frac["MV"], 5.0)
        assert rep.fee.loc["EW", "MV"] == pytest.approx(ref, abs=1e-14)


@pytest.fixture(scope="module")
def model_backtest():
    # second asset is the first lagged one step: every estimation window
    # sees near-identical values per asset (independent pairings), so
    # average weights should stay near 1/2
    rng = np.random.default_rng(50)
    col = rng.standard_t(8, size=293) * 2.0 + 0.1
    y = np.column_stack([col[1:], col[:-1]])
    X = np.random.default_rng(51).normal(size=(292, 1)) * 0.1
    sched = ev.BacktestSchedule(insample_len=256, oos_len=36,
                                refit_every=18)
    # high risk aversion keeps the optimizer near 1/N so the symmetry
    # check below is informative despite mean-estimate noise
    kw = dict(covariates=X, schedule=sched,
              strategies=("EW", "NHM", "FDDM"), upsilon=40.0, n_draws=4000,
              n_regimes=2, marginal_starts=2, copula_restarts=1, n_boot=39,
              random_state=6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        rep = ev.run_backtest(y, **kw)
    return y, kw, rep


class TestBacktestModel:

    def test_refit_count(self, model_backtest):
        _, _, rep = model_backtest
        assert rep.n_refits == 2

    def test_weights_and_utilities(self, model_backtest):
        y, kw, rep = model_backtest
        res = rep.strategies["FDDM"]
        np.testing.assert_allclose(res.weights.sum(axis=1), 1.0, atol=1e-10)
        wealth = 1.0 + res.returns / 100.0
        ok = wealth > 0
        np.testing.assert_allclose(
            res.utilities[ok],
            allocate.crra_utility(wealth[ok], kw["upsilon"]))
        assert res.n_excluded == int((~ok).sum())

    def test_exchangeable_average_weight(self, model_backtest):
        # i.i.d. symmetric panel: the model strategy should hover near 1/N
        _, _, rep = model_backtest
        avg = rep.strategies["FDDM"].weights.mean(axis=0)
        assert np.abs(avg - 0.5).max() < 0.30

    def test_gof_table_shape(self, model_backtest):
        _, _, rep = model_backtest
        assert rep.gof.shape == (2, 5)
        assert np.isfinite(rep.gof.values).all()

    def test_rerun_byte_identical(self, model_backtest, tmp_path):
        y, kw, rep = model_backtest
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            rep2 = ev.run_backtest(y, **kw)
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        rep.save(d1)
        rep2.save(d2)
        for p1 in sorted(d1.iterdir()):
            p2 = d2 / p1.name
            assert p1.read_bytes() == p2.read_bytes()

    def test_report_files(self, model_backtest, tmp_path):
        _, _, rep = model_backtest
        written = rep.save(tmp_path / "out")
        names = {p.name for p in written}
        assert "report.json" in names
        assert "strategy_FDDM.csv" in names
        summary = json.loads((tmp_path / "out" / "report.json").read_text())
        assert summary["n_refits"] == 2
        assert set(summary["strategy_order"]) == {"EW", "NHM", "FDDM"}
        tbl = np.loadtxt(tmp_path / "out" / "strategy_EW.csv",
                         delimiter=",", skiprows=1)
        assert tbl.shape == (36, 5)
