"""Measurement-error-aware maximum-likelihood estimation.

The causal effects maximize a profile log-likelihood in which the unknown
true variant-exposure associations have been maximized out; the residual
variance of each variant becomes ``se_y[j]**2 + theta' sigma_x[j] theta``,
which is how the exposure-estimate uncertainty enters. The maximizer is
found by alternating two closed-form block updates, and the covariance is
the robust sandwich built from per-variant standardized residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CausalEstimate, Method, SummaryDataset
from .errors import EstimationError, InputError
from .ivw import _weighted_solve

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class MleOptions:
    """Controls for the iterative maximum-likelihood fit.

    tolerance : stop when the profile log-likelihood changes by less than
        this between successive iterations.
    max_iterations : cap per start.
    n_starts : number of random initializations of the nuisance associations.
    seed : seeds the initialization draws; start s uses the stream derived
        from (seed, s).
    """

    tolerance: float = 1e-8
    max_iterations: int = 1000
    n_starts: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InputError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if self.n_starts < 1:
            raise InputError("n_starts must be >= 1")


def _residuals(theta: np.ndarray, dataset: SummaryDataset):
    """Per-variant residual e_j and residual variance v_j at theta."""
    e = dataset.beta_y - dataset.beta_x @ theta
    v = dataset.se_y**2 + np.einsum("jkl,k,l->j", dataset.sigma_x, theta, theta)
    return e, v


def profile_loglik(theta, dataset: SummaryDataset) -> float:
    """Profile log-likelihood (up to an additive constant) at theta."""
    theta = np.asarray(theta, dtype=float)
    e, v = _residuals(theta, dataset)
    return float(-0.5 * np.sum(e * e / v))


def _noise_factors(sigma_x: np.ndarray) -> np.ndarray:
    """Per-variant factor L with L L' = sigma_x, zero in degenerate directions."""
    lam, vec = np.linalg.eigh(sigma_x)
    lam = np.clip(lam, 0.0, None)
    return vec * np.sqrt(lam)[:, None, :]


def _update_nuisance(theta, e, v, dataset):
    # Rank-one (Woodbury) form of the ridge update for the nuisance
    # associations; exact for singular sigma_x, whose null-space components
    # stay at the observed associations.
    st = np.einsum("jkl,l->jk", dataset.sigma_x, theta)
    return dataset.beta_x + st * (e / v)[:, None]


def _coordinate_ascent(dataset: SummaryDataset, beta_tilde: np.ndarray,
                       tolerance: float, max_iterations: int):
    """Alternate the effect and nuisance block updates from one start.

    Returns (theta, loglik_trace, converged). Each trace entry is the
    profile log-likelihood after the corresponding effect update; the
    sequence is non-decreasing because both half-steps are exact block
    maximizers of the joint likelihood.
    """
    trace = []
    ll_prev = -np.inf
    theta = None
    for _ in range(max_iterations):
        theta, _, _ = _weighted_solve(beta_tilde, dataset.beta_y, dataset.se_y)
        e, v = _residuals(theta, dataset)
        ll = float(-0.5 * np.sum(e * e / v))
        trace.append(ll)
        if abs(ll - ll_prev) < tolerance:
            return theta, trace, True
        ll_prev = ll
        beta_tilde = _update_nuisance(theta, e, v, dataset)
    return theta, trace, False


def fit_mle(dataset: SummaryDataset, options: MleOptions | None = None) -> CausalEstimate:
    """Maximum-likelihood estimate of the causal effects.

    Runs ``options.n_starts`` coordinate-ascent passes, each initialized by
    sampling the nuisance associations from Normal(beta_x[j], sigma_x[j]),
    and keeps the start with the highest final profile log-likelihood (ties
    broken by lowest start index). The covariance is the sandwich estimate
    at the winning theta. ``converged=False`` flags that the best start hit
    the iteration cap; the estimate is still returned.

    The method tag is MLE_COR when the dataset carries a trait correlation
    matrix (off-diagonal sigma_x entries filled from it), else MLE.
    """
    if options is None:
        options = MleOptions()
    factors = _noise_factors(dataset.sigma_x)
    j, k = dataset.beta_x.shape

    best = None
    for start in range(options.n_starts):
        rng = np.random.default_rng(np.random.SeedSequence(options.seed, spawn_key=(start,)))
        noise = np.einsum("jkl,jl->jk", factors, rng.standard_normal((j, k)))
        theta, trace, converged = _coordinate_ascent(
            dataset, dataset.beta_x + noise, options.tolerance, options.max_iterations
        )
        if best is None or trace[-1] > best[1]:
            best = (theta, trace[-1], len(trace), converged)

    theta, loglik, iterations, converged = best
    cov = sandwich_variance(theta, dataset)
    method = Method.MLE_COR if dataset.trait_correlation is not None else Method.MLE
    return CausalEstimate(theta, cov, method, converged=converged,
                          iterations=iterations, final_objective=loglik)


def _g_values(theta, dataset: SummaryDataset) -> np.ndarray:
    """Standardized residuals g_j = e_j / sqrt(v_j); note -0.5 * sum(g**2)
    equals the profile log-likelihood."""
    e, v = _residuals(np.asarray(theta, float), dataset)
    return e / np.sqrt(v)


def _g_gradients(theta, dataset: SummaryDataset) -> np.ndarray:
    """Gradient of each g_j with respect to theta, shape (J, K)."""
    theta = np.asarray(theta, dtype=float)
    e, v = _residuals(theta, dataset)
    st = np.einsum("jkl,l->jk", dataset.sigma_x, theta)
    return -(dataset.beta_x / np.sqrt(v)[:, None] + st * (e / v**1.5)[:, None])


def _g_hessians(theta, dataset: SummaryDataset) -> np.ndarray:
    """Hessian of each g_j with respect to theta, shape (J, K, K)."""
    theta = np.asarray(theta, dtype=float)
    e, v = _residuals(theta, dataset)
    st = np.einsum("jkl,l->jk", dataset.sigma_x, theta)
    sym = dataset.beta_x[:, :, None] * st[:, None, :] + dataset.beta_x[:, None, :] * st[:, :, None]
    out = (sym - e[:, None, None] * dataset.sigma_x) / v[:, None, None] ** 1.5
    out += 3.0 * (e / v**2.5)[:, None, None] * st[:, :, None] * st[:, None, :]
    return out


def sandwich_variance(theta, dataset: SummaryDataset) -> np.ndarray:
    """Robust covariance of the MLE at the fitted theta.

    Builds the score outer-product matrix and the observed-information
    matrix from the per-variant standardized residuals and returns
    information^-1 @ score_outer @ information^-1.
    """
    theta = np.asarray(theta, dtype=float)
    g = _g_values(theta, dataset)
    grads = _g_gradients(theta, dataset)
    hess = _g_hessians(theta, dataset)
    omega = grads.T @ grads
    info = omega + np.einsum("j,jkl->kl", g, hess)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise EstimationError(
            f"information matrix is singular or ill-conditioned (cond={cond:.3e})"
        )
    half = np.linalg.solve(info, omega)
    cov = np.linalg.solve(info, half.T).T
    return 0.5 * (cov + cov.T)
