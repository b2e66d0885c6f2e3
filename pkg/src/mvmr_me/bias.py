"""Attenuation diagnostics and asymptotic bias prediction for two exposures.

All quantities are plug-in sample analogs of the weighted moment limits
that govern the large-J behaviour of the IVW estimator when the exposure
associations carry estimation or measurement error. Exposure columns are
first centered to weighted mean zero so that ``rho_star`` reads as a
correlation between the association estimates for the two traits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import SummaryDataset
from .errors import EstimationError, InputError


@dataclass(frozen=True)
class BiasDiagnostics:
    """Weighted moments, attenuation ratios and (optionally) predicted bias.

    v_x_star : weighted second moments of the centered exposure-association
        columns, length 2.
    c_x_star : weighted cross moment of the two centered columns.
    v_zeta : weighted mean estimation-error variances, length 2.
    attenuation : v_zeta / v_x_star per exposure (the lambda ratios).
    rho_star : c_x_star / sqrt(v_x_star[0] * v_x_star[1]).
    predicted_bias : asymptotic IVW bias at a supplied theta, or None.
    """

    v_x_star: np.ndarray
    c_x_star: float
    v_zeta: np.ndarray
    attenuation: np.ndarray
    rho_star: float
    predicted_bias: np.ndarray | None = None


def estimate_moments(dataset: SummaryDataset) -> BiasDiagnostics:
    """Plug-in weighted moments of a two-exposure dataset.

    Columns of ``beta_x`` are centered to weighted mean zero with weights
    ``se_y**-2``; second moments are J**-1-scaled weighted sums. The
    estimation-error moments use the ``sigma_x`` diagonals, which are not
    affected by centering. Warns when an attenuation ratio reaches 1.
    """
    if dataset.n_exposures != 2:
        raise InputError(
            f"bias diagnostics are defined for exactly 2 exposures, got K={dataset.n_exposures}"
        )
    w = dataset.se_y**-2.0
    j = dataset.n_variants
    mean = (w @ dataset.beta_x) / w.sum()
    centered = dataset.beta_x - mean
    v_x_star = (w @ centered**2) / j
    c_x_star = float(np.sum(w * centered[:, 0] * centered[:, 1]) / j)
    v_zeta = (w @ np.einsum("jkk->jk", dataset.sigma_x)) / j
    attenuation = v_zeta / v_x_star
    if np.any(attenuation >= 1.0):
        warnings.warn(
            "attenuation ratio >= 1: estimation-error moment exceeds the "
            "association second moment", stacklevel=2)
    rho_star = c_x_star / float(np.sqrt(v_x_star[0] * v_x_star[1]))
    return BiasDiagnostics(v_x_star, c_x_star, v_zeta, attenuation, rho_star)


def predict_ivw_bias(diag: BiasDiagnostics, theta) -> np.ndarray:
    """Asymptotic bias of the two-exposure IVW estimate at the given theta."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (2,):
        raise InputError("theta must have length 2")
    if abs(diag.rho_star) >= 1.0:
        raise EstimationError(
            f"degenerate association correlation rho_star={diag.rho_star:.6f}; "
            "bias formula requires |rho_star| < 1"
        )
    lam = diag.attenuation
    r = diag.rho_star
    ratio21 = np.sqrt(diag.v_x_star[1] / diag.v_x_star[0])
    denom = 1.0 - r * r
    bias1 = -(lam[0] * theta[0] - lam[1] * r * ratio21 * theta[1]) / denom
    bias2 = -(lam[1] * theta[1] - lam[0] * r / ratio21 * theta[0]) / denom
    return np.array([bias1, bias2])


def diagnose(dataset: SummaryDataset, theta=None) -> BiasDiagnostics:
    """Moments plus, when theta is given, the predicted IVW bias."""
    diag = estimate_moments(dataset)
    if theta is None:
        return diag
    return replace(diag, predicted_bias=predict_ivw_bias(diag, theta))
