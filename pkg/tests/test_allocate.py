"""CRRA Taylor objective and weight optimization."""

import numpy as np
import pytest

from dynfolio import allocate, moments


def gaussian_tensors(n=4, seed=0, scale=0.02):
    """Exact Gaussian tensors: zero third moments, Isserlis fourth."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) * scale
    m2 = A @ A.T
    m1 = rng.normal(size=n) * 0.01
    m4 = np.zeros((n, n, n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    m4[i, j, k, l] = (m2[i, j] * m2[k, l]
                                      + m2[i, k] * m2[j, l]
                                      + m2[i, l] * m2[j, k])
    return moments.MomentTensors(m1, m2, np.zeros((n, n * n)),
                                 m4.reshape(n, n ** 3), n_draws=0)


def sample_tensors(n=3, B=20000, seed=1):
    rng = np.random.default_rng(seed)
    base = rng.standard_t(7, size=(B, n)) * 0.02
    base[:, 0] += 0.3 * base[:, 1]
    base += rng.normal(size=n) * 0.005
    return moments.moment_tensors(base), base


class TestCrraUtility:

    def test_log_of_e_is_one(self):
        assert allocate.crra_utility(np.e, 1.0) == pytest.approx(1.0)

    def test_power_case(self):
        assert allocate.crra_utility(1.0, 2.0) == -1.0

    def test_limit_to_log(self):
        upsilon = 1.0 + 1e-8
        w = 1.7
        shifted = (w ** (1.0 - upsilon)) / (1.0 - upsilon) - 1.0 / (1.0 - upsilon)
        assert abs(shifted - np.log(w)) < 1e-6
        assert allocate.crra_utility(w, 1.0) == pytest.approx(np.log(w))

    def test_ruin_is_domain_error(self):
        with pytest.raises(ValueError, match="positive"):
            allocate.crra_utility(0.0, 2.0)
        with pytest.raises(ValueError, match="positive"):
            allocate.crra_utility(np.array([1.0, -0.2]), 2.0)

    def test_rejects_upsilon_below_one(self):
        with pytest.raises(ValueError, match="upsilon"):
            allocate.crra_utility(1.0, 0.5)

    def test_vectorized(self):
        w = np.array([0.5, 1.0, 2.0])
        out = allocate.crra_utility(w, 3.0)
        np.testing.assert_allclose(out, w ** -2.0 / -2.0)


class TestUtilityConfig:

    def test_validation(self):
        allocate.UtilityConfig(upsilon=1.0, order=2)
        with pytest.raises(ValueError, match="upsilon"):
            allocate.UtilityConfig(upsilon=0.9)
        with pytest.raises(ValueError, match="order"):
            allocate.UtilityConfig(upsilon=3.0, order=5)


class TestPortfolioMoments:

    def test_single_asset_verbatim(self):
        t = moments.MomentTensors([0.1], [[0.3]], [[0.05]], [[0.2]], n_draws=0)
        mu, var, third, fourth = allocate.portfolio_moments(np.ones(1), t)
        assert (mu, var, third, fourth) == (0.1, 0.3, 0.05, 0.2)

    def test_basis_vector_selects_asset(self):
        t, _ = sample_tensors()
        n = t.n_assets
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            mu, var, third, fourth = allocate.portfolio_moments(e, t)
            assert mu == pytest.approx(t.m1[i], abs=1e-14)
            assert var == pytest.approx(t.m2[i, i], abs=1e-14)
            assert third == pytest.approx(t.m3[i, i * n + i], abs=1e-14)
            assert fourth == pytest.approx(t.m4[i, i * n * n + i * n + i],
                                           abs=1e-14)

    def test_matches_direct_projection(self):
        t, draws = sample_tensors()
        lam = np.array([0.2, 0.5, 0.3])
        port = draws @ lam
        centered = port - port.mean()
        mu, var, third, fourth = allocate.portfolio_moments(lam, t)
        assert mu == pytest.approx(port.mean(), abs=1e-10)
        assert var == pytest.approx(np.mean(centered ** 2), abs=1e-10)
        assert third == pytest.approx(np.mean(centered ** 3), abs=1e-10)
        assert fourth == pytest.approx(np.mean(centered ** 4), abs=1e-10)

    def test_wrong_length(self):
        t, _ = sample_tensors()
        with pytest.raises(ValueError, match="weights"):
            allocate.portfolio_moments(np.ones(5), t)


class TestNoncentralMoments:

    def test_zero_mean_identity(self):
        out = allocate.noncentral_moments(0.0, 0.7, 0.1, 2.0)
        assert out == (0.0, 0.7, 0.1, 2.0)

    def test_plugin_arithmetic(self):
        # unit-mean, unit-variance Gaussian shape: E[X^3] = mu^3 + 3 mu
        m1, m2, m3, m4 = allocate.noncentral_moments(1.0, 1.0, 0.0, 3.0)
        assert (m1, m2, m3, m4) == (1.0, 2.0, 4.0, 10.0)

    def test_matches_mc_raw_moments(self):
        t, draws = sample_tensors()
        lam = np.array([0.4, 0.4, 0.2])
        port = draws @ lam
        m = allocate.noncentral_moments(*allocate.portfolio_moments(lam, t))
        for k, mk in enumerate(m, start=1):
            assert mk == pytest.approx(np.mean(port ** k), abs=1e-10)


class TestExpectedUtility:

    def test_zero_tensors_constant(self):
        n = 2
        t = moments.MomentTensors(np.zeros(n), np.zeros((n, n)),
                                  np.zeros((n, n * n)),
                                  np.zeros((n, n ** 3)), n_draws=0)
        lam = np.array([0.5, 0.5])
        for upsilon in (2.0, 7.0, 10.0):
            val = allocate.expected_utility_taylor(lam, t, upsilon)
            assert val == pytest.approx(1.0 / (1.0 - upsilon), abs=1e-14)
        assert allocate.expected_utility_taylor(lam, t, 1.0) == 0.0

    def test_small_gaussian_matches_mc_utility(self):
        rng = np.random.default_rng(7)
        n = 3
        A = rng.normal(size=(n, n)) * 0.01
        draws = rng.normal(size=(400000, n)) @ A.T + 0.002
        t = moments.moment_tensors(draws)
        lam = np.array([0.5, 0.3, 0.2])
        mc = np.mean(allocate.crra_utility(1.0 + draws @ lam, 6.0))
        val = allocate.expected_utility_taylor(lam, t, 6.0)
        assert abs(val - mc) < 1e-5

    def test_coefficients_match_crra_derivatives(self):
        # 5-point central stencils for U', U'', U''', U'''' at wealth 1;
        # stencil truncation error is O(h^2) so tolerances follow h
        upsilon = 3.0
        h = 1e-3
        w = 1.0 + h * np.arange(-2, 3)
        u = allocate.crra_utility(w, upsilon)
        d1 = (u[0] - 8 * u[1] + 8 * u[3] - u[4]) / (12 * h)
        d2 = (-u[0] + 16 * u[1] - 30 * u[2] + 16 * u[3] - u[4]) / (12 * h * h)
        d3 = (-u[0] + 2 * u[1] - 2 * u[3] + u[4]) / (2 * h ** 3)
        d4 = (u[0] - 4 * u[1] + 6 * u[2] - 4 * u[3] + u[4]) / h ** 4
        assert d1 == pytest.approx(1.0, rel=1e-8)
        assert d2 == pytest.approx(-upsilon, rel=1e-6)
        assert d3 == pytest.approx(upsilon * (upsilon + 1.0), rel=1e-4)
        assert d4 == pytest.approx(
            -upsilon * (upsilon + 1.0) * (upsilon + 2.0), rel=1e-3)

    def test_log_utility_series(self):
        # at upsilon = 1 the expansion must reduce to that of log(1 + x)
        t, _ = sample_tensors()
        lam = np.array([0.3, 0.3, 0.4])
        m = allocate.noncentral_moments(*allocate.portfolio_moments(lam, t))
        ref = m[0] - m[1] / 2.0 + m[2] / 3.0 - m[3] / 4.0
        val = allocate.expected_utility_taylor(lam, t, 1.0)
        assert val == pytest.approx(ref, abs=1e-14)

    def test_order_truncation_ignores_higher_tensors(self):
        t, _ = sample_tensors()
        lam = np.array([0.3, 0.3, 0.4])
        val2 = allocate.expected_utility_taylor(lam, t, 5.0, order=2)
        t.m3 = t.m3 * 0.0
        t.m4 = t.m4 * 0.0
        val2_zeroed = allocate.expected_utility_taylor(lam, t, 5.0, order=2)
        assert val2 == val2_zeroed


class TestGradient:

    def test_matches_finite_differences(self):
        t, _ = sample_tensors()
        rng = np.random.default_rng(19)
        h = 1e-6
        n = t.n_assets
        for _ in range(50):
            lam = rng.dirichlet(np.ones(n)) + rng.normal(size=n) * 0.2
            lam = lam / lam.sum()
            grad = allocate.utility_gradient(lam, t, 5.0)
            fd = np.zeros(n)
            for i in range(n):
                e = np.zeros(n)
                e[i] = h
                fd[i] = (allocate.expected_utility_taylor(lam + e, t, 5.0)
                         - allocate.expected_utility_taylor(lam - e, t, 5.0)
                         ) / (2.0 * h)
            err = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1.0)
            assert err < 1e-6


class TestOptimizeWeights:

    def test_matches_closed_form_mean_variance(self):
        t = gaussian_tensors()
        ref = allocate.mean_variance_weights(t, upsilon=7.0)
        res = allocate.optimize_weights(t, upsilon=7.0, order=2,
                                        random_state=0)
        np.testing.assert_allclose(res.weights, ref, atol=1e-6)
        assert not res.boundary

    def test_budget_and_box_invariants(self):
        for seed in range(4):
            t = gaussian_tensors(seed=seed)
            res = allocate.optimize_weights(t, upsilon=5.0, random_state=seed)
            assert abs(res.weights.sum() - 1.0) <= 1e-10
            assert np.all(np.abs(res.weights) <= allocate.WEIGHT_BOUND + 1e-8)

    def test_projected_gradient_vanishes(self):
        t = gaussian_tensors(seed=3)
        res = allocate.optimize_weights(t, upsilon=10.0, random_state=1)
        assert not res.boundary
        assert res.gradient_norm < 1e-6

    def test_kkt_residual_small_at_box(self):
        # aggressive risk aversion of 4 drives this seed onto the box;
        # the stationarity residual must still vanish there
        t = gaussian_tensors(seed=3)
        res = allocate.optimize_weights(t, upsilon=4.0, random_state=1)
        assert res.boundary
        assert res.gradient_norm < 1e-5

    def test_exchangeable_assets_split_evenly(self):
        t, _ = sample_tensors(n=2, seed=5)
        n = 2
        # symmetrize every tensor under the index swap (0 <-> 1)
        perm = [1, 0]
        m1 = (t.m1 + t.m1[perm]) / 2.0
        m2 = (t.m2 + t.m2[np.ix_(perm, perm)]) / 2.0
        t3 = t.m3.reshape(n, n, n)
        t3 = (t3 + t3[np.ix_(perm, perm, perm)]) / 2.0
        t4 = t.m4.reshape(n, n, n, n)
        t4 = (t4 + t4[np.ix_(perm, perm, perm, perm)]) / 2.0
        sym = moments.MomentTensors(m1, m2, t3.reshape(n, n * n),
                                    t4.reshape(n, n ** 3), n_draws=0)
        res = allocate.optimize_weights(sym, upsilon=8.0, random_state=2)
        np.testing.assert_allclose(res.weights, [0.5, 0.5], atol=1e-6)

    def test_unbounded_ascent_flagged(self):
        # a non-realizable tensor set: strongly negative third co-moment
        # with positive mean makes the quartic term an ascent direction
        n = 2
        m3 = np.zeros((n, n * n))
        m3[0, 0] = -5.0
        t = moments.MomentTensors(np.array([0.1, 0.0]), np.eye(n) * 1e-4,
                                  m3, np.zeros((n, n ** 3)), n_draws=0)
        res = allocate.optimize_weights(t, upsilon=3.0, random_state=0)
        assert res.boundary
        assert res.weights[0] == pytest.approx(allocate.WEIGHT_BOUND)

    def test_variance_only_argmin_scale_invariant(self):
        t = gaussian_tensors(seed=6)
        t.m1 = np.zeros_like(t.m1)
        res1 = allocate.optimize_weights(t, upsilon=9.0, order=2,
                                         random_state=3)
        scaled = moments.MomentTensors(t.m1, 7.3 * t.m2, 7.3 * t.m3,
                                       7.3 * t.m4, n_draws=0)
        res2 = allocate.optimize_weights(scaled, upsilon=9.0, order=2,
                                         random_state=3)
        np.testing.assert_allclose(res1.weights, res2.weights, atol=1e-7)

    def test_single_asset(self):
        t = moments.MomentTensors([0.1], [[0.3]], [[0.05]], [[0.2]], n_draws=0)
        res = allocate.optimize_weights(t, upsilon=3.0)
        assert res.weights[0] == 1.0 and res.gradient_norm == 0.0

    def test_weight_bundle_invariants(self):
        with pytest.raises(ValueError, match="sum to 1"):
            allocate.PortfolioWeights(np.array([0.5, 0.4]), 0.0, 0.0, False)
        with pytest.raises(ValueError, match="within"):
            allocate.PortfolioWeights(np.array([6.0, -5.0]), 0.0, 0.0, False)
