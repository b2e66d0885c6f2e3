"""Proportion of a total effect mediated by other exposures.

The total effect comes from a univariable fit, the direct effect from a
multivariable fit that conditions on the candidate mediators; the mediated
proportion is one minus their ratio. Standard errors use the delta method
with the estimator correlation term dropped, which overstates the standard
error whenever that term would be positive, so intervals are conservative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .data import CausalEstimate
from .errors import EstimationError, InputError

_Z95 = 1.96
_UV_TOL = 1e-12


@dataclass(frozen=True)
class MediationResult:
    total_effect: float
    total_se: float
    direct_effect: float
    direct_se: float
    proportion_mediated: float
    se_proportion: float
    ci: tuple[float, float]


def delta_method_se(theta_mv: float, se_mv: float, theta_uv: float, se_uv: float) -> float:
    """Delta-method standard error of 1 - theta_mv / theta_uv.

    Keeps the two variance terms that do not involve the (unestimable)
    correlation between the univariable and multivariable estimators.
    """
    if se_mv < 0 or se_uv < 0:
        raise InputError("standard errors must be nonnegative")
    if theta_uv == 0:
        raise EstimationError("total effect is zero; the mediated proportion is undefined")
    var = se_mv**2 / theta_uv**2 + theta_mv**2 * se_uv**2 / theta_uv**4
    return math.sqrt(var)


def _delta_method_se_full(theta_mv, se_mv, theta_uv, se_uv, rho) -> float:
    # Three-term reference including the estimator-correlation term; kept
    # internal because rho is not estimable from the available inputs.
    var = (se_mv**2 / theta_uv**2
           + theta_mv**2 * se_uv**2 / theta_uv**4
           - 2.0 * theta_mv * se_mv * se_uv * rho / theta_uv**3)
    return math.sqrt(var)


def proportion_from_effects(theta_mv: float, se_mv: float,
                            theta_uv: float, se_uv: float) -> MediationResult:
    """Mediated proportion and conservative 95% interval from raw effects."""
    if abs(theta_uv) <= _UV_TOL:
        raise EstimationError(
            f"total effect {theta_uv!r} is within {_UV_TOL} of zero; "
            "the mediated proportion is undefined"
        )
    proportion = 1.0 - theta_mv / theta_uv
    se = delta_method_se(theta_mv, se_mv, theta_uv, se_uv)
    ci = (proportion - _Z95 * se, proportion + _Z95 * se)
    return MediationResult(theta_uv, se_uv, theta_mv, se_mv, proportion, se, ci)


def proportion_mediated(univariable: CausalEstimate, multivariable: CausalEstimate,
                        exposure_index: int) -> MediationResult:
    """Mediated proportion from a univariable and a multivariable fit.

    Parameters
    ----------
    univariable : CausalEstimate
        Single-exposure fit estimating the total effect (K = 1).
    multivariable : CausalEstimate
        Joint fit including the mediators; the direct effect is read from
        ``exposure_index``.
    exposure_index : int
        Position of the exposure of interest in the multivariable fit.
    """
    if univariable.theta.shape != (1,):
        raise InputError("univariable estimate must have exactly one exposure")
    if not 0 <= exposure_index < multivariable.theta.shape[0]:
        raise InputError(
            f"exposure index {exposure_index} out of range for the multivariable fit"
        )
    theta_uv = float(univariable.theta[0])
    se_uv = float(univariable.se[0])
    theta_mv = float(multivariable.theta[exposure_index])
    se_mv = float(multivariable.se[exposure_index])
    return proportion_from_effects(theta_mv, se_mv, theta_uv, se_uv)
