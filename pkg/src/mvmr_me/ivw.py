"""Inverse-variance weighted estimation of causal effects.

Weighted regression (no intercept) of the variant-outcome associations on
the variant-exposure associations, with weights ``se_y**-2``. The exposure
association covariances are deliberately ignored: this estimator treats
``beta_x`` as known, which is what makes it sensitive to measurement error.
"""

from __future__ import annotations

import numpy as np

from .data import CausalEstimate, Method, SummaryDataset
from .errors import EstimationError

_DIAG_TOL = 1e-12


def _weighted_solve(beta_x: np.ndarray, beta_y: np.ndarray, se_y: np.ndarray):
    """Solve the weighted normal equations by QR of the row-scaled design.

    Returns (theta, xtwx_inverse, weighted_rss). Raises EstimationError on a
    numerically singular weighted Gram matrix instead of falling back to a
    pseudo-inverse.
    """
    sqrt_w = 1.0 / se_y
    xw = beta_x * sqrt_w[:, None]
    yw = beta_y * sqrt_w
    q, r = np.linalg.qr(xw)
    rdiag = np.abs(np.diag(r))
    if rdiag.min() <= _DIAG_TOL * max(rdiag.max(), 1e-300):
        raise EstimationError(
            "weighted Gram matrix is numerically singular (collinear exposure columns)"
        )
    theta = np.linalg.solve(r, q.T @ yw)
    r_inv = np.linalg.solve(r, np.eye(r.shape[0]))
    cov = r_inv @ r_inv.T
    rss = float(np.sum((yw - xw @ theta) ** 2))
    return theta, cov, rss


def fit_ivw(dataset: SummaryDataset, *, random_effects: bool = False) -> CausalEstimate:
    """Multivariable IVW estimate of the causal effect vector.

    Parameters
    ----------
    dataset : SummaryDataset
        Must pass validation; ``sigma_x`` is not read.
    random_effects : bool
        When True, inflate the fixed-effect covariance by the multiplicative
        factor ``max(1, weighted_rss / (J - K))``.

    Returns
    -------
    CausalEstimate with ``final_objective`` set to the weighted residual sum
    of squares.
    """
    theta, cov, rss = _weighted_solve(dataset.beta_x, dataset.beta_y, dataset.se_y)
    if random_effects:
        dof = dataset.n_variants - dataset.n_exposures
        cov = cov * max(1.0, rss / dof)
    return CausalEstimate(theta, cov, Method.IVW, converged=True, iterations=0,
                          final_objective=rss)


def fit_ivw_univariable(dataset: SummaryDataset, exposure_index: int, *,
                        random_effects: bool = False) -> CausalEstimate:
    """IVW fit using a single exposure column (the K=1 special case)."""
    if not 0 <= exposure_index < dataset.n_exposures:
        raise EstimationError(
            f"exposure index {exposure_index} out of range for K={dataset.n_exposures}"
        )
    beta_x = dataset.beta_x[:, [exposure_index]]
    theta, cov, rss = _weighted_solve(beta_x, dataset.beta_y, dataset.se_y)
    if random_effects:
        dof = dataset.n_variants - 1
        cov = cov * max(1.0, rss / dof)
    return CausalEstimate(theta, cov, Method.IVW_UNIVARIABLE, converged=True,
                          iterations=0, final_objective=rss)
