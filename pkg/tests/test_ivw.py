"""IVW estimator against closed-form identities and a summation oracle."""

import numpy as np
import pytest

from mvmr_me import EstimationError, Method, SummaryDataset, fit_ivw, fit_ivw_univariable


def random_dataset(j=40, k=2, seed=0, sigma_scale=0.0, noise=0.0):
    rng = np.random.default_rng(seed)
    beta_x = rng.uniform(0.08, 0.2, (j, k))
    se_x = np.full((j, k), sigma_scale)
    se_y = rng.uniform(0.02, 0.08, j)
    theta = rng.normal(0.0, 0.3, k)
    beta_y = beta_x @ theta + noise * rng.normal(size=j) * se_y
    return SummaryDataset.from_arrays([f"v{i}" for i in range(j)], beta_x, se_x,
                                      beta_y, se_y), theta


def ivw_by_explicit_summation(dataset):
    """Independent oracle: assemble the K x K normal equations term by term."""
    k = dataset.n_exposures
    gram = np.zeros((k, k))
    rhs = np.zeros(k)
    for j in range(dataset.n_variants):
        w = dataset.se_y[j] ** -2
        x = dataset.beta_x[j]
        gram += w * np.outer(x, x)
        rhs += w * dataset.beta_y[j] * x
    return np.linalg.solve(gram, rhs), np.linalg.inv(gram)


class TestFitIvw:
    def test_noiseless_data_recovers_theta_exactly(self):
        rng = np.random.default_rng(3)
        beta_x = rng.uniform(0.08, 0.2, (30, 2))
        theta = np.array([0.2, 0.0])
        ds = SummaryDataset.from_arrays([f"v{i}" for i in range(30)], beta_x,
                                        np.zeros((30, 2)), beta_x @ theta,
                                        np.full(30, 0.03))
        est = fit_ivw(ds)
        np.testing.assert_allclose(est.theta, theta, atol=1e-14)
        assert est.method is Method.IVW
        assert est.converged and est.iterations == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_normal_equations_oracle(self, seed):
        ds, _ = random_dataset(seed=seed, noise=1.0)
        est = fit_ivw(ds)
        oracle_theta, oracle_cov = ivw_by_explicit_summation(ds)
        np.testing.assert_allclose(est.theta, oracle_theta, atol=1e-10)
        np.testing.assert_allclose(est.covariance, oracle_cov, rtol=1e-8)

    def test_permutation_equivariance(self):
        ds, _ = random_dataset(seed=11, noise=1.0)
        swapped = SummaryDataset(ds.variant_ids, ds.beta_y, ds.se_y,
                                 ds.beta_x[:, ::-1], ds.sigma_x)
        np.testing.assert_allclose(fit_ivw(swapped).theta, fit_ivw(ds).theta[::-1],
                                   atol=1e-12)

    def test_scale_equivariance(self):
        ds, _ = random_dataset(seed=12, noise=1.0)
        c = 3.7
        scaled_bx = ds.beta_x.copy()
        scaled_bx[:, 0] *= c
        scaled = SummaryDataset(ds.variant_ids, ds.beta_y, ds.se_y, scaled_bx, ds.sigma_x)
        base = fit_ivw(ds).theta
        est = fit_ivw(scaled).theta
        np.testing.assert_allclose(est[0], base[0] / c, rtol=1e-12)
        np.testing.assert_allclose(est[1], base[1], rtol=1e-12)

    def test_sigma_x_is_never_read(self):
        ds, _ = random_dataset(seed=13, noise=1.0)
        inflated = SummaryDataset(ds.variant_ids, ds.beta_y, ds.se_y, ds.beta_x,
                                  np.tile(np.eye(2) * 100.0, (ds.n_variants, 1, 1)))
        a, b = fit_ivw(ds), fit_ivw(inflated)
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.covariance, b.covariance)

    def test_collinear_exposures_fail_loudly(self):
        ds, _ = random_dataset(seed=14)
        beta_x = ds.beta_x.copy()
        beta_x[:, 1] = -0.5 * beta_x[:, 0]
        bad = SummaryDataset(ds.variant_ids, ds.beta_y, ds.se_y, beta_x, ds.sigma_x)
        with pytest.raises(EstimationError, match="singular"):
            fit_ivw(bad)

    def test_random_effects_inflates_by_rss_factor(self):
        ds, _ = random_dataset(seed=15, noise=3.0)
        fixed = fit_ivw(ds)
        inflated = fit_ivw(ds, random_effects=True)
        dof = ds.n_variants - ds.n_exposures
        factor = max(1.0, fixed.final_objective / dof)
        np.testing.assert_allclose(inflated.covariance, fixed.covariance * factor,
                                   rtol=1e-12)

    def test_unbiased_without_measurement_error(self):
        # model: beta_y number = beta_x' theta + eps with known se_y, fixed beta_x
        rng = np.random.default_rng(99)
        j, k = 40, 2
        beta_x = rng.uniform(0.08, 0.2, (j, k))
        se_y = rng.uniform(0.02, 0.08, j)
        theta = np.array([0.15, -0.1])
        mean_signal = beta_x @ theta
        reps = 5000
        estimates = np.empty((reps, k))
        ds0 = SummaryDataset.from_arrays([f"v{i}" for i in range(j)], beta_x,
                                         np.zeros((j, k)), mean_signal, se_y)
        for r in range(reps):
            beta_y = mean_signal + se_y * rng.standard_normal(j)
            ds = SummaryDataset(ds0.variant_ids, beta_y, ds0.se_y, ds0.beta_x, ds0.sigma_x)
            estimates[r] = fit_ivw(ds).theta
        mc_se = estimates.std(axis=0, ddof=1) / np.sqrt(reps)
        assert np.all(np.abs(estimates.mean(axis=0) - theta) < 3.0 * mc_se)


class TestFitIvwUnivariable:
    def test_exact_ratio_on_proportional_data(self):
        rng = np.random.default_rng(21)
        beta_x = rng.uniform(0.08, 0.2, (20, 1))
        ds = SummaryDataset.from_arrays([f"v{i}" for i in range(20)], beta_x,
                                        np.zeros((20, 1)), 0.5 * beta_x[:, 0],
                                        np.full(20, 0.05))
        est = fit_ivw_univariable(ds, 0)
        np.testing.assert_allclose(est.theta, [0.5], atol=1e-14)
        assert est.method is Method.IVW_UNIVARIABLE

    def test_equals_multivariable_fit_on_single_column(self):
        ds, _ = random_dataset(k=2, seed=22, noise=1.0)
        single = ds.select_exposures([1])
        uni = fit_ivw_univariable(ds, 1)
        multi = fit_ivw(single)
        np.testing.assert_allclose(uni.theta, multi.theta, atol=1e-14)
        np.testing.assert_allclose(uni.covariance, multi.covariance, atol=1e-16)

    def test_out_of_range_index_fails(self):
        ds, _ = random_dataset(seed=23)
        with pytest.raises(EstimationError, match="out of range"):
            fit_ivw_univariable(ds, 5)
