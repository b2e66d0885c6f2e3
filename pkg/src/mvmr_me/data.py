"""Summary-statistics data model shared by all estimators.

A :class:`SummaryDataset` holds, for J independent genetic variants and K
exposures, the variant-outcome association estimates and standard errors,
the variant-exposure association estimates, and the per-variant covariance
matrices of the exposure association estimates. Datasets are immutable
after construction; all operations return new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InputError

RANK_TOL = 1e-12
PSD_TOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


class Method(str, Enum):
    """Tag identifying which estimator produced a CausalEstimate."""

    IVW = "ivw"
    IVW_UNIVARIABLE = "ivw_univariable"
    MLE = "mle"
    MLE_COR = "mle_cor"


@dataclass(frozen=True)
class SummaryDataset:
    """Per-variant association summary statistics for K exposures and one outcome.

    Parameters
    ----------
    variant_ids : sequence of str, length J
    beta_y : array, shape (J,)
        Variant-outcome association estimates.
    se_y : array, shape (J,)
        Standard errors of ``beta_y``, treated as known.
    beta_x : array, shape (J, K)
        Variant-exposure association estimates.
    sigma_x : array, shape (J, K, K)
        Covariance matrix of each row of ``beta_x``. A diagonal matrix per
        variant when only per-exposure standard errors are available.
    trait_correlation : array, shape (K, K), optional
        Correlation matrix used to populate the off-diagonals of
        ``sigma_x``; stored for provenance.
    """

    variant_ids: tuple[str, ...]
    beta_y: np.ndarray
    se_y: np.ndarray
    beta_x: np.ndarray
    sigma_x: np.ndarray
    trait_correlation: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant_ids", tuple(str(v) for v in self.variant_ids))
        object.__setattr__(self, "beta_y", _readonly(self.beta_y))
        object.__setattr__(self, "se_y", _readonly(self.se_y))
        object.__setattr__(self, "beta_x", _readonly(np.atleast_2d(self.beta_x)))
        object.__setattr__(self, "sigma_x", _readonly(self.sigma_x))
        if self.trait_correlation is not None:
            object.__setattr__(self, "trait_correlation", _readonly(self.trait_correlation))
        j, k = self.beta_x.shape
        if len(self.variant_ids) != j or self.beta_y.shape != (j,) or self.se_y.shape != (j,):
            raise InputError("variant_ids, beta_y, se_y and beta_x row counts disagree")
        if self.sigma_x.shape != (j, k, k):
            raise InputError(
                f"sigma_x must have shape ({j}, {k}, {k}), got {self.sigma_x.shape}"
            )

    @property
    def n_variants(self) -> int:
        return self.beta_x.shape[0]

    @property
    def n_exposures(self) -> int:
        return self.beta_x.shape[1]

    @property
    def se_x(self) -> np.ndarray:
        """Per-exposure standard errors, shape (J, K): sqrt of sigma_x diagonals."""
        return np.sqrt(np.einsum("jkk->jk", self.sigma_x))

    @classmethod
    def from_arrays(cls, variant_ids, beta_x, se_x, beta_y, se_y, trait_correlation=None):
        """Build a dataset from per-exposure standard errors.

        ``sigma_x`` is assembled with ``se_x**2`` on the diagonals; when
        ``trait_correlation`` is given its off-diagonal entries fill the
        covariances as ``corr[k, l] * se_x[j, k] * se_x[j, l]``.
        """
        beta_x = np.atleast_2d(np.asarray(beta_x, dtype=float))
        se_x = np.atleast_2d(np.asarray(se_x, dtype=float))
        if se_x.shape != beta_x.shape:
            raise InputError("se_x must have the same shape as beta_x")
        j, k = beta_x.shape
        sigma_x = np.zeros((j, k, k))
        ii = np.arange(k)
        sigma_x[:, ii, ii] = se_x**2
        ds = cls(tuple(variant_ids), np.asarray(beta_y, float), np.asarray(se_y, float),
                 beta_x, sigma_x)
        if trait_correlation is not None:
            ds = apply_trait_correlation(ds, trait_correlation)
        return ds

    def select_variants(self, indices) -> "SummaryDataset":
        """Return a copy restricted to the given variant indices (in order)."""
        idx = np.asarray(indices)
        return SummaryDataset(
            tuple(self.variant_ids[i] for i in idx),
            self.beta_y[idx],
            self.se_y[idx],
            self.beta_x[idx],
            self.sigma_x[idx],
            self.trait_correlation,
        )

    def select_exposures(self, columns) -> "SummaryDataset":
        """Return a copy restricted to the given exposure columns (in order)."""
        cols = np.asarray(columns)
        corr = self.trait_correlation
        if corr is not None:
            corr = corr[np.ix_(cols, cols)]
        return SummaryDataset(
            self.variant_ids,
            self.beta_y,
            self.se_y,
            self.beta_x[:, cols],
            self.sigma_x[np.ix_(range(self.n_variants), cols, cols)],
            corr,
        )


@dataclass(frozen=True)
class CausalEstimate:
    """Point estimates of the causal effects with an estimated covariance."""

    theta: np.ndarray
    covariance: np.ndarray
    method: Method
    converged: bool = True
    iterations: int = 0
    final_objective: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", _readonly(np.atleast_1d(self.theta)))
        object.__setattr__(self, "covariance", _readonly(np.atleast_2d(self.covariance)))

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    indices: tuple[int, ...] = ()
    message: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> tuple[CheckResult, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def raise_on_failure(self):
        if not self.ok:
            msgs = "; ".join(f"{c.name}: {c.message}" for c in self.failures)
            raise InputError(f"dataset failed validation ({msgs})")


def _check_correlation_matrix(corr: np.ndarray, k: int):
    """Return a failure message for an invalid K x K correlation matrix, else None."""
    if corr.shape != (k, k):
        return f"expected shape ({k}, {k}), got {corr.shape}"
    if not np.allclose(corr, corr.T, rtol=0.0, atol=1e-12):
        return "matrix is not symmetric"
    if np.any(np.abs(corr) > 1.0):
        return "entries outside [-1, 1]"
    if np.any(np.diag(corr) != 1.0):
        return "diagonal entries must be exactly 1"
    return None


def validate(dataset: SummaryDataset) -> ValidationReport:
    """Check every dataset invariant and report pass/fail per check.

    Report-only: never raises, never mutates. Failing checks carry the
    offending variant indices where applicable.
    """
    checks = []
    j, k = dataset.n_variants, dataset.n_exposures

    ok = j > k >= 1
    checks.append(CheckResult(
        "dimensions", ok,
        message="" if ok else f"requires J > K >= 1, got J={j}, K={k}",
    ))

    bad = tuple(np.flatnonzero(~(dataset.se_y > 0)).tolist())
    checks.append(CheckResult(
        "se_y strictly positive", not bad, bad,
        "" if not bad else f"non-positive se_y at variants {list(bad)}",
    ))

    diags = np.einsum("jkk->jk", dataset.sigma_x)
    bad = tuple(np.flatnonzero(np.any(diags < 0, axis=1)).tolist())
    checks.append(CheckResult(
        "sigma_x diagonal nonnegative", not bad, bad,
        "" if not bad else f"negative sigma_x diagonal at variants {list(bad)}",
    ))

    asym = np.abs(dataset.sigma_x - np.transpose(dataset.sigma_x, (0, 2, 1))).max(axis=(1, 2))
    traces = np.einsum("jkk->j", dataset.sigma_x)
    scale = np.maximum(traces, 1e-300)
    sym_bad = np.flatnonzero(asym > 1e-12 * np.maximum(scale, 1.0))
    eigmin = np.linalg.eigvalsh(0.5 * (dataset.sigma_x + np.transpose(dataset.sigma_x, (0, 2, 1))))[:, 0]
    psd_bad = np.flatnonzero(eigmin < -PSD_TOL * scale)
    bad = tuple(sorted(set(sym_bad.tolist()) | set(psd_bad.tolist())))
    checks.append(CheckResult(
        "sigma_x symmetric positive semi-definite", not bad, bad,
        "" if not bad else f"non-symmetric or indefinite sigma_x at variants {list(bad)}",
    ))

    sv = np.linalg.svd(dataset.beta_x, compute_uv=False)
    ok = bool(sv[-1] > RANK_TOL * sv[0])
    checks.append(CheckResult(
        "beta_x full column rank", ok,
        message="" if ok else f"smallest/largest singular value = {sv[-1]:.3e}/{sv[0]:.3e}",
    ))

    if dataset.trait_correlation is not None:
        msg = _check_correlation_matrix(dataset.trait_correlation, k)
        checks.append(CheckResult("trait_correlation valid", msg is None, message=msg or ""))

    return ValidationReport(tuple(checks))


def apply_trait_correlation(dataset: SummaryDataset, corr) -> SummaryDataset:
    """Fill sigma_x off-diagonals from a trait correlation matrix.

    Off-diagonal (k, l) of every variant's covariance becomes
    ``corr[k, l] * sqrt(sigma_x[j, k, k] * sigma_x[j, l, l])``; diagonals
    are unchanged. Returns a new dataset carrying ``corr``.
    """
    corr = np.asarray(corr, dtype=float)
    msg = _check_correlation_matrix(corr, dataset.n_exposures)
    if msg is not None:
        raise InputError(f"invalid trait correlation matrix: {msg}")
    se = np.sqrt(np.einsum("jkk->jk", dataset.sigma_x))
    sigma = corr[None, :, :] * se[:, :, None] * se[:, None, :]
    ii = np.arange(dataset.n_exposures)
    sigma[:, ii, ii] = np.einsum("jkk->jk", dataset.sigma_x)
    return replace(dataset, sigma_x=sigma, trait_correlation=corr)
