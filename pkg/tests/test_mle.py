"""Profile-likelihood MLE: oracles, block-ascent invariants, sandwich checks."""

import numpy as np
import pytest
from scipy.optimize import minimize

from mvmr_me import (
    EstimationError,
    InputError,
    Method,
    MleOptions,
    SummaryDataset,
    apply_trait_correlation,
    fit_ivw,
    fit_mle,
    profile_loglik,
    sandwich_variance,
)
from mvmr_me.mle import _coordinate_ascent, _g_gradients, _g_hessians, _g_values


def noisy_dataset(j=40, k=2, seed=0, se_x_scale=0.02, theta=(0.2, 0.0)):
    """Summary data drawn from the measurement-error model itself."""
    rng = np.random.default_rng(seed)
    beta_true = rng.uniform(0.08, 0.2, (j, k))
    se_x = rng.uniform(0.5, 1.5, (j, k)) * se_x_scale
    se_y = rng.uniform(0.02, 0.08, j)
    theta = np.asarray(theta, dtype=float)[:k]
    beta_obs = beta_true + se_x * rng.standard_normal((j, k))
    beta_y = beta_true @ theta + se_y * rng.standard_normal(j)
    return SummaryDataset.from_arrays([f"v{i}" for i in range(j)], beta_obs, se_x,
                                      beta_y, se_y)


def loglik_by_summation(theta, dataset):
    """Independent oracle: accumulate the profile log-likelihood term by term."""
    total = 0.0
    for j in range(dataset.n_variants):
        e = dataset.beta_y[j] - dataset.beta_x[j] @ theta
        v = dataset.se_y[j] ** 2 + theta @ dataset.sigma_x[j] @ theta
        total += -0.5 * e * e / v
    return total


def grid_then_refine(dataset, lo=-1.0, hi=1.0, step=1e-3):
    """Grid-search maximizer of the profile objective with local refinement."""
    grid = np.arange(lo, hi + step / 2, step)
    best_val, best_point = -np.inf, None
    chunk = 200
    sy2 = dataset.se_y**2
    s11 = dataset.sigma_x[:, 0, 0]
    s12 = dataset.sigma_x[:, 0, 1]
    s22 = dataset.sigma_x[:, 1, 1]
    for i in range(0, grid.size, chunk):
        t1 = grid[i:i + chunk][:, None, None]
        t2 = grid[None, :, None]
        e = dataset.beta_y - (t1 * dataset.beta_x[:, 0] + t2 * dataset.beta_x[:, 1])
        v = sy2 + t1 * t1 * s11 + 2.0 * t1 * t2 * s12 + t2 * t2 * s22
        ll = -0.5 * np.sum(e * e / v, axis=2)
        flat = np.argmax(ll)
        if ll.flat[flat] > best_val:
            best_val = ll.flat[flat]
            ia, ib = np.unravel_index(flat, ll.shape)
            best_point = np.array([grid[i + ia], grid[ib]])
    res = minimize(lambda t: -loglik_by_summation(t, dataset), best_point,
                   method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    return res.x


class TestProfileLoglik:
    def test_theta_zero_collapses_to_outcome_chi_square(self):
        ds = noisy_dataset(seed=1)
        expected = -0.5 * np.sum(ds.beta_y**2 / ds.se_y**2)
        assert profile_loglik(np.zeros(2), ds) == pytest.approx(expected, rel=1e-14)

    def test_zero_sigma_reduces_to_weighted_rss(self):
        ds = noisy_dataset(seed=2, se_x_scale=0.0)
        theta = np.array([0.12, -0.05])
        resid = ds.beta_y - ds.beta_x @ theta
        expected = -0.5 * np.sum(resid**2 / ds.se_y**2)
        assert profile_loglik(theta, ds) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_termwise_summation_oracle(self, seed):
        ds = noisy_dataset(j=10, seed=seed)
        rng = np.random.default_rng(seed + 100)
        theta = rng.normal(0.0, 0.5, 2)
        assert profile_loglik(theta, ds) == pytest.approx(
            loglik_by_summation(theta, ds), abs=1e-12 * abs(loglik_by_summation(theta, ds)) + 1e-12)


class TestFitMle:
    def test_zero_sigma_reduces_to_ivw(self):
        ds = noisy_dataset(seed=3, se_x_scale=0.0)
        ivw = fit_ivw(ds)
        mle = fit_mle(ds, MleOptions(seed=5))
        np.testing.assert_allclose(mle.theta, ivw.theta, atol=1e-8)
        assert mle.converged

    def test_matches_grid_search_oracle(self):
        ds = noisy_dataset(j=20, seed=4, se_x_scale=0.03)
        mle = fit_mle(ds, MleOptions(seed=6))
        oracle = grid_then_refine(ds)
        np.testing.assert_allclose(mle.theta, oracle, atol=2e-3)

    def test_profile_loglik_trace_is_monotone(self):
        for seed in range(5):
            ds = noisy_dataset(seed=seed, se_x_scale=0.05)
            rng = np.random.default_rng(seed)
            start = ds.beta_x + 0.01 * rng.standard_normal(ds.beta_x.shape)
            _, trace, converged = _coordinate_ascent(ds, start, 1e-10, 2000)
            assert converged
            assert np.all(np.diff(trace) >= -1e-10)

    def test_converged_fit_is_stationary(self):
        ds = noisy_dataset(seed=7, se_x_scale=0.03)
        est = fit_mle(ds, MleOptions(seed=8, tolerance=1e-13, max_iterations=20000))
        h = 1e-6
        for k in range(2):
            ek = np.zeros(2)
            ek[k] = h
            deriv = (profile_loglik(est.theta + ek, ds)
                     - profile_loglik(est.theta - ek, ds)) / (2 * h)
            assert abs(deriv) < 1e-4

    def test_reproducible_given_seed(self):
        ds = noisy_dataset(seed=9, se_x_scale=0.04)
        a = fit_mle(ds, MleOptions(seed=42))
        b = fit_mle(ds, MleOptions(seed=42))
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.covariance, b.covariance)
        assert a.iterations == b.iterations

    def test_iteration_cap_flags_nonconvergence(self):
        ds = noisy_dataset(seed=10, se_x_scale=0.05)
        est = fit_mle(ds, MleOptions(seed=1, max_iterations=1))
        assert not est.converged

    def test_method_tag_follows_trait_correlation(self):
        ds = noisy_dataset(seed=11, se_x_scale=0.03)
        assert fit_mle(ds, MleOptions(seed=2)).method is Method.MLE
        withcor = apply_trait_correlation(ds, np.array([[1.0, 0.3], [0.3, 1.0]]))
        assert fit_mle(withcor, MleOptions(seed=2)).method is Method.MLE_COR

    def test_options_validation(self):
        with pytest.raises(InputError):
            MleOptions(tolerance=0.0)
        with pytest.raises(InputError):
            MleOptions(max_iterations=0)
        with pytest.raises(InputError):
            MleOptions(n_starts=0)


class TestSandwich:
    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, seed):
        ds = noisy_dataset(j=8, seed=seed, se_x_scale=0.05)
        rng = np.random.default_rng(seed + 50)
        h = 1e-6
        for _ in range(20):
            theta = rng.normal(0.0, 0.4, 2)
            grads = _g_gradients(theta, ds)
            for k in range(2):
                ek = np.zeros(2)
                ek[k] = h
                fd = (_g_values(theta + ek, ds) - _g_values(theta - ek, ds)) / (2 * h)
                np.testing.assert_allclose(grads[:, k], fd, rtol=1e-6, atol=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_hessian_matches_gradient_finite_differences(self, seed):
        ds = noisy_dataset(j=8, seed=seed, se_x_scale=0.05)
        rng = np.random.default_rng(seed + 80)
        h = 1e-6
        for _ in range(20):
            theta = rng.normal(0.0, 0.4, 2)
            hess = _g_hessians(theta, ds)
            for k in range(2):
                ek = np.zeros(2)
                ek[k] = h
                fd = (_g_gradients(theta + ek, ds) - _g_gradients(theta - ek, ds)) / (2 * h)
                np.testing.assert_allclose(hess[:, :, k], fd, rtol=1e-5, atol=1e-8)

    def test_sandwich_tracks_sampling_variability(self):
        # mean sandwich SE over replications close to the empirical SD
        rng = np.random.default_rng(123)
        j, k = 60, 2
        beta_true = rng.uniform(0.08, 0.2, (j, k))
        se_x = np.full((j, k), 0.03)
        se_y = np.full(j, 0.04)
        theta = np.array([0.2, 0.1])
        reps = 300
        fits = np.empty((reps, k))
        ses = np.empty((reps, k))
        opts = MleOptions(seed=7, n_starts=2)
        for r in range(reps):
            beta_obs = beta_true + se_x * rng.standard_normal((j, k))
            beta_y = beta_true @ theta + se_y * rng.standard_normal(j)
            ds = SummaryDataset.from_arrays([f"v{i}" for i in range(j)], beta_obs,
                                            se_x, beta_y, se_y)
            est = fit_mle(ds, opts)
            fits[r] = est.theta
            ses[r] = est.se
        ratio = ses.mean(axis=0) / fits.std(axis=0, ddof=1)
        assert np.all(ratio > 0.85) and np.all(ratio < 1.15)

    def test_singular_information_reports_condition_number(self):
        rng = np.random.default_rng(5)
        beta = rng.uniform(0.08, 0.2, (10, 1))
        ds = SummaryDataset.from_arrays(
            [f"v{i}" for i in range(10)], np.column_stack([beta, 2.0 * beta]),
            np.zeros((10, 2)), 0.3 * beta[:, 0], np.full(10, 0.05))
        with pytest.raises(EstimationError, match="cond"):
            sandwich_variance(np.array([0.1, 0.1]), ds)

    def test_sandwich_equals_ivw_covariance_without_measurement_error(self):
        # with sigma_x = 0 and exact glm weights the two covariances coincide
        rng = np.random.default_rng(31)
        j = 50
        beta_x = rng.uniform(0.08, 0.2, (j, 2))
        se_y = rng.uniform(0.02, 0.08, j)
        theta = np.array([0.2, 0.0])
        beta_y = beta_x @ theta + se_y * rng.standard_normal(j)
        ds = SummaryDataset.from_arrays([f"v{i}" for i in range(j)], beta_x,
                                        np.zeros((j, 2)), beta_y, se_y)
        ivw = fit_ivw(ds)
        mle = fit_mle(ds, MleOptions(seed=3))
        cov = sandwich_variance(mle.theta, ds)
        np.testing.assert_allclose(cov, ivw.covariance, rtol=1e-8)
