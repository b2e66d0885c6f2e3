"""Individual-level data generation and Monte Carlo evaluation of estimators.

Each replication draws a population (allele frequencies and true
variant-exposure effects), generates two independent samples from it,
computes per-variant association summary statistics in each (exposures in
one, outcome in the other), and fits the requested estimators. Replication
streams are derived from (seed, replication, role) so that serial and
parallel runs agree bit for bit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from itertools import product

import numpy as np
import scipy.linalg
from scipy.special import expit
from scipy.stats import norm

from .data import SummaryDataset, apply_trait_correlation
from .errors import EstimationError, InputError
from .ivw import fit_ivw, fit_ivw_univariable
from .mle import MleOptions, fit_mle

METHODS = ("ivw", "mle", "mle_cor")

_ROLE_POPULATION = 0
_ROLE_EXPOSURE = 1
_ROLE_OUTCOME = 2
_ROLE_MLE = 3

_Z95 = float(norm.ppf(0.975))


def _rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _seed_for(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1, np.uint64)[0])


def resolve_workers(workers: int | None) -> int:
    """Explicit worker count, else MVMR_ME_WORKERS, else 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("MVMR_ME_WORKERS", "").strip()
    return max(1, int(env)) if env else 1


@dataclass(frozen=True)
class ScenarioSpec:
    """Data-generating configuration for a two-exposure simulation.

    theta : true causal effects (theta1, theta2).
    rho : effect of the first exposure on the second.
    sigma_zeta_sq : measurement-error variances on the two exposures.
    outcome : "continuous" or "binary"; binary outcomes are Bernoulli with
        success probability expit(theta0 + theta1*X1 + theta2*X2 + U).
    mediation_mode : zero the first 10 variants' effects on the second
        exposure so they are valid instruments for a univariable analysis.
    """

    theta: tuple[float, float]
    rho: float
    sigma_zeta_sq: tuple[float, float]
    n: int = 20_000
    n_variants: int = 40
    gamma: float = 0.2
    beta_range: tuple[float, float] = (0.08, 0.2)
    maf_range: tuple[float, float] = (0.01, 0.5)
    outcome: str = "continuous"
    theta0: float = -4.0
    mediation_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "sigma_zeta_sq", tuple(float(s) for s in self.sigma_zeta_sq))
        if len(self.theta) != 2 or len(self.sigma_zeta_sq) != 2:
            raise InputError("theta and sigma_zeta_sq must both have length 2")
        if self.n <= 0:
            raise InputError("n must be positive")
        if self.n_variants <= 2:
            raise InputError("need more variants than exposures (J > 2)")
        if any(s < 0 for s in self.sigma_zeta_sq):
            raise InputError("measurement-error variances must be nonnegative")
        lo, hi = self.maf_range
        if not (0.0 < lo <= hi <= 0.5):
            raise InputError("maf_range must lie within (0, 0.5]")
        if self.outcome not in ("continuous", "binary"):
            raise InputError("outcome must be 'continuous' or 'binary'")
        if self.mediation_mode and self.n_variants <= 10:
            raise InputError("mediation_mode requires more than 10 variants")

    @classmethod
    def scenario(cls, name, rho: float, sigma_zeta1_sq: float, *,
                 binary: bool = False, **kwargs) -> "ScenarioSpec":
        """Named scenario: S1 (X1 causal), S2 (X2 causal), S3 (both causal)."""
        key = str(name).upper().lstrip("S")
        table = {
            "1": ((0.2, 0.0), 0.0, -4.0),
            "2": ((0.0, 0.2), 0.0, -4.0),
            "3": ((0.2, 0.2), 1.0, -4.9),
        }
        if key not in table:
            raise InputError(f"unknown scenario {name!r}; expected S1, S2 or S3")
        theta, sigma_zeta2_sq, theta0 = table[key]
        return cls(theta=theta, rho=rho, sigma_zeta_sq=(sigma_zeta1_sq, sigma_zeta2_sq),
                   outcome="binary" if binary else "continuous", theta0=theta0, **kwargs)


@dataclass(frozen=True)
class Population:
    """Per-replication truth shared by the exposure and outcome samples."""

    maf: np.ndarray
    beta: np.ndarray  # (J, 2) true variant effects on the exposure precursors


@dataclass
class Sample:
    g: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x1_star: np.ndarray
    x2_star: np.ndarray
    y: np.ndarray
    population: Population


@dataclass(frozen=True)
class FStatistics:
    f: np.ndarray
    conditional_f: np.ndarray


def draw_population(spec: ScenarioSpec, rng: np.random.Generator) -> Population:
    maf = rng.uniform(*spec.maf_range, spec.n_variants)
    beta = rng.uniform(*spec.beta_range, (spec.n_variants, 2))
    if spec.mediation_mode:
        beta[:10, 1] = 0.0
    return Population(maf, beta)


def generate_sample(spec: ScenarioSpec, rng: np.random.Generator,
                    population: Population | None = None) -> Sample:
    """One individual-level sample from the data-generating model.

    When ``population`` is omitted it is drawn first from the same stream;
    pass the same Population to generate the second sample of a two-sample
    replication.
    """
    if population is None:
        population = draw_population(spec, rng)
    n = spec.n
    g = rng.binomial(2, population.maf, size=(n, spec.n_variants)).astype(float)
    u = rng.standard_normal(n)
    eps = rng.standard_normal((n, 2))
    zeta = rng.standard_normal((n, 2))

    gamma = spec.gamma
    resid_scale = math.sqrt(1.0 - gamma * gamma)
    x1 = g @ population.beta[:, 0] + gamma * u + resid_scale * eps[:, 0]
    x2 = spec.rho * x1 + math.sqrt(1.0 - spec.rho**2) * (
        g @ population.beta[:, 1] + gamma * u + resid_scale * eps[:, 1])
    x1_star = x1 + math.sqrt(spec.sigma_zeta_sq[0]) * zeta[:, 0]
    x2_star = x2 + math.sqrt(spec.sigma_zeta_sq[1]) * zeta[:, 1]

    t1, t2 = spec.theta
    if spec.outcome == "continuous":
        y = t1 * x1 + t2 * x2 + u + rng.standard_normal(n)
    else:
        y = (rng.random(n) < expit(spec.theta0 + t1 * x1 + t2 * x2 + u)).astype(float)
    return Sample(g, x1, x2, x1_star, x2_star, y, population)


def _centered_genotypes(g: np.ndarray):
    gc = g - g.mean(axis=0)
    sxx = np.einsum("ij,ij->j", gc, gc)
    bad = np.flatnonzero(sxx <= 0.0)
    if bad.size:
        raise EstimationError(f"variant {bad[0]} is monomorphic (zero genotype variance)")
    return gc, sxx


def _ols_per_variant(gc: np.ndarray, sxx: np.ndarray, t: np.ndarray):
    """Slope and standard error of t ~ 1 + G_j for every variant at once."""
    n = gc.shape[0]
    tc = t - t.mean()
    sxy = gc.T @ tc
    beta = sxy / sxx
    rss = np.maximum(tc @ tc - beta * sxy, 0.0)
    se = np.sqrt(rss / (n - 2) / sxx)
    return beta, se


def _logistic_per_variant(g: np.ndarray, y: np.ndarray, max_iter: int = 25,
                          tol: float = 1e-10):
    """Per-variant logistic regression of y on genotype count plus intercept.

    Genotypes take values {0, 1, 2}, so each fit reduces to its three-cell
    sufficient statistics; Newton iterations run vectorized across variants
    (at most ``max_iter`` steps, stopping on score norm below ``tol``).
    """
    n = g.shape[0]
    ybar = y.mean()
    if ybar <= 0.0 or ybar >= 1.0:
        raise EstimationError("binary outcome has no variation")
    gsum = g.sum(axis=0)
    gsq = np.einsum("ij,ij->j", g, g)
    n2 = (gsq - gsum) / 2.0
    n1 = gsum - 2.0 * n2
    n0 = n - n1 - n2
    sg = g.T @ y
    sg2 = (g * g).T @ y
    s2 = (sg2 - sg) / 2.0
    s1 = sg - 2.0 * s2
    s0 = y.sum() - s1 - s2
    counts = np.stack([n0, n1, n2])
    cases = np.stack([s0, s1, s2])
    levels = np.array([0.0, 1.0, 2.0])

    a = np.full(g.shape[1], math.log(ybar / (1.0 - ybar)))
    b = np.zeros(g.shape[1])
    h11 = h12 = h22 = None
    for _ in range(max_iter):
        p = expit(a[None, :] + np.outer(levels, b))
        resid = cases - counts * p
        w = counts * p * (1.0 - p)
        u1 = resid.sum(axis=0)
        u2 = levels @ resid
        h11 = w.sum(axis=0)
        h12 = levels @ w
        h22 = (levels**2) @ w
        det = h11 * h22 - h12 * h12
        if np.any(det <= 0):
            raise EstimationError(
                f"variant {int(np.flatnonzero(det <= 0)[0])}: singular logistic Hessian")
        a += (h22 * u1 - h12 * u2) / det
        b += (h11 * u2 - h12 * u1) / det
        if max(np.abs(u1).max(), np.abs(u2).max()) < tol:
            break
    se = np.sqrt(h11 / (h11 * h22 - h12 * h12))
    return b, se


def sample_trait_correlation(sample: Sample) -> np.ndarray:
    """Empirical correlation matrix of the measured exposures."""
    r = float(np.corrcoef(sample.x1_star, sample.x2_star)[0, 1])
    return np.array([[1.0, r], [r, 1.0]])


def summarize_associations(exposure_sample: Sample, outcome_sample: Sample,
                           spec: ScenarioSpec, *,
                           with_trait_correlation: bool = False) -> SummaryDataset:
    """Per-variant association summary statistics from two samples.

    Exposure associations come from simple linear regressions in the first
    sample; outcome associations from linear (continuous) or logistic
    (binary) regressions in the second. ``sigma_x`` holds the squared
    regression standard errors on its diagonals; with
    ``with_trait_correlation`` the off-diagonals are filled from the
    exposure sample's trait correlation.
    """
    gc, sxx = _centered_genotypes(exposure_sample.g)
    bx1, se1 = _ols_per_variant(gc, sxx, exposure_sample.x1_star)
    bx2, se2 = _ols_per_variant(gc, sxx, exposure_sample.x2_star)
    if spec.outcome == "continuous":
        gco, sxxo = _centered_genotypes(outcome_sample.g)
        by, sey = _ols_per_variant(gco, sxxo, outcome_sample.y)
    else:
        _centered_genotypes(outcome_sample.g)  # monomorphic guard
        by, sey = _logistic_per_variant(outcome_sample.g, outcome_sample.y)
    ids = tuple(f"v{i + 1}" for i in range(spec.n_variants))
    corr = sample_trait_correlation(exposure_sample) if with_trait_correlation else None
    return SummaryDataset.from_arrays(ids, np.column_stack([bx1, bx2]),
                                      np.column_stack([se1, se2]), by, sey,
                                      trait_correlation=corr)


def f_statistics(sample: Sample) -> FStatistics:
    """Unconditional and conditional instrument-strength F statistics.

    The unconditional statistic is the overall F from regressing each
    measured exposure on all variants. The conditional statistic for one
    exposure regresses it on the genetically predicted values of the other,
    then computes the overall F of those residuals on the variants.
    """
    n, j = sample.g.shape
    gc, _ = _centered_genotypes(sample.g)
    gram = gc.T @ gc
    try:
        cho = scipy.linalg.cho_factor(gram)
    except scipy.linalg.LinAlgError as err:
        raise EstimationError("genotype matrix is rank deficient") from err

    def overall_f(t):
        tc = t - t.mean()
        rhs = gc.T @ tc
        coef = scipy.linalg.cho_solve(cho, rhs)
        r2 = (rhs @ coef) / (tc @ tc)
        return (r2 / j) / ((1.0 - r2) / (n - j - 1))

    def residual_on_fitted(t, other):
        oc = other - other.mean()
        fitted = gc @ scipy.linalg.cho_solve(cho, gc.T @ oc)
        tc = t - t.mean()
        denom = fitted @ fitted
        slope = (fitted @ tc) / denom if denom > 0 else 0.0
        return tc - slope * fitted

    f = np.array([overall_f(sample.x1_star), overall_f(sample.x2_star)])
    conditional = np.array([
        overall_f(residual_on_fitted(sample.x1_star, sample.x2_star)),
        overall_f(residual_on_fitted(sample.x2_star, sample.x1_star)),
    ])
    return FStatistics(f, conditional)


def replicate_dataset(spec: ScenarioSpec, rep: int, *,
                      with_trait_correlation: bool = False) -> SummaryDataset:
    """The summary dataset the Monte Carlo engine builds for one replication."""
    pop = draw_population(spec, _rng_for(spec.seed, rep, _ROLE_POPULATION))
    sa = generate_sample(spec, _rng_for(spec.seed, rep, _ROLE_EXPOSURE), pop)
    sb = generate_sample(spec, _rng_for(spec.seed, rep, _ROLE_OUTCOME), pop)
    return summarize_associations(sa, sb, spec, with_trait_correlation=with_trait_correlation)


def _mle_options_for(spec: ScenarioSpec, rep: int, base: MleOptions | None) -> MleOptions:
    opts = base if base is not None else MleOptions()
    return replace(opts, seed=_seed_for(spec.seed, rep, _ROLE_MLE))


def _fit_method(method: str, ds: SummaryDataset, trait_corr: np.ndarray,
                opts: MleOptions, random_effects: bool):
    if method == "ivw":
        return fit_ivw(ds, random_effects=random_effects)
    if method == "mle":
        return fit_mle(ds, opts)
    if method == "mle_cor":
        return fit_mle(apply_trait_correlation(ds, trait_corr), opts)
    raise InputError(f"unknown method {method!r}; expected one of {METHODS}")


def _estimation_task(spec: ScenarioSpec, methods, mle_options, random_effects, rep: int):
    """One replication: returns {method: (theta, se, converged)} plus prevalence."""
    pop = draw_population(spec, _rng_for(spec.seed, rep, _ROLE_POPULATION))
    sa = generate_sample(spec, _rng_for(spec.seed, rep, _ROLE_EXPOSURE), pop)
    sb = generate_sample(spec, _rng_for(spec.seed, rep, _ROLE_OUTCOME), pop)
    prevalence = float(sb.y.mean()) if spec.outcome == "binary" else None
    out = {}
    try:
        ds = summarize_associations(sa, sb, spec)
    except EstimationError:
        return {m: None for m in methods}, prevalence
    trait_corr = sample_trait_correlation(sa) if "mle_cor" in methods else None
    opts = _mle_options_for(spec, rep, mle_options)
    for method in methods:
        try:
            est = _fit_method(method, ds, trait_corr, opts, random_effects)
            out[method] = (est.theta, est.se, est.converged)
        except EstimationError:
            out[method] = None
    return out, prevalence


@dataclass(frozen=True)
class MethodPerformance:
    """Monte Carlo operating characteristics of one method, per coefficient."""

    method: str
    median: np.ndarray
    sd: np.ndarray
    coverage: np.ndarray
    rejection: np.ndarray
    n_nonconverged: int
    n_failed: int


@dataclass(frozen=True)
class MonteCarloSummary:
    spec: ScenarioSpec
    replications: int
    performances: tuple[MethodPerformance, ...]
    prevalence: float | None = None
    raw: dict | None = None

    def performance(self, method: str) -> MethodPerformance:
        for p in self.performances:
            if p.method == method:
                return p
        raise KeyError(method)


def _run_tasks(task, replications: int, workers: int):
    reps = range(replications)
    if workers <= 1:
        return [task(r) for r in reps]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, replications // (workers * 8))
        return list(pool.map(task, reps, chunksize=chunk))


def run_monte_carlo(spec: ScenarioSpec, methods=METHODS, replications: int = 1000, *,
                    workers: int | None = None, mle_options: MleOptions | None = None,
                    random_effects: bool = False, keep_raw: bool = False) -> MonteCarloSummary:
    """Monte Carlo operating characteristics of the requested estimators.

    Per replication two samples are generated, summarized, and fitted with
    every requested method; coverage of nominal-95% Wald intervals and
    rejection at the 5% level are evaluated against ``spec.theta``.
    Replication failures are counted per method without aborting the run.
    The result is deterministic given ``spec`` (including its seed) and
    ``replications``, independent of the worker count.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}; expected one of {METHODS}")
    if replications < 1:
        raise InputError("replications must be >= 1")
    workers = resolve_workers(workers)
    task = partial(_estimation_task, spec, methods, mle_options, random_effects)
    records = _run_tasks(task, replications, workers)

    theta_true = np.asarray(spec.theta)
    performances = []
    raw = {} if keep_raw else None
    k = 2
    for method in methods:
        thetas = np.full((replications, k), np.nan)
        ses = np.full((replications, k), np.nan)
        converged = np.zeros(replications, dtype=bool)
        for r, (rec, _) in enumerate(records):
            if rec[method] is not None:
                thetas[r], ses[r], converged[r] = rec[method]
        okrow = ~np.isnan(thetas[:, 0])
        n_failed = int((~okrow).sum())
        t_ok, s_ok = thetas[okrow], ses[okrow]
        covered = np.abs(t_ok - theta_true) <= _Z95 * s_ok
        rejected = np.abs(t_ok) > _Z95 * s_ok
        performances.append(MethodPerformance(
            method=method,
            median=np.median(t_ok, axis=0),
            sd=np.std(t_ok, axis=0, ddof=1),
            coverage=covered.mean(axis=0),
            rejection=rejected.mean(axis=0),
            n_nonconverged=int((okrow & ~converged).sum()),
            n_failed=n_failed,
        ))
        if keep_raw:
            raw[method] = {"theta": thetas, "se": ses, "converged": converged}

    prevalences = [p for _, p in records if p is not None]
    prevalence = float(np.mean(prevalences)) if prevalences else None
    return MonteCarloSummary(spec, replications, tuple(performances), prevalence, raw)


def _mediation_task(spec: ScenarioSpec, methods, mle_options, random_effects,
                    n_univariable: int, rep: int):
    """One mediation replication: {method: estimated proportion mediated}."""
    pop = draw_population(spec, _rng_for(spec.seed, rep, _ROLE_POPULATION))
    sa = generate_sample(spec, _rng_for(spec.seed, rep, _ROLE_EXPOSURE), pop)
    sb = generate_sample(spec, _rng_for(spec.seed, rep, _ROLE_OUTCOME), pop)
    try:
        ds = summarize_associations(sa, sb, spec)
    except EstimationError:
        return {m: None for m in methods}
    uni = ds.select_variants(np.arange(n_univariable))
    opts = _mle_options_for(spec, rep, mle_options)
    out = {}
    for method in methods:
        try:
            if method == "ivw":
                direct = fit_ivw(ds, random_effects=random_effects).theta[0]
                total = fit_ivw_univariable(uni, 0, random_effects=random_effects).theta[0]
            else:
                ds_m = ds
                if method == "mle_cor":
                    ds_m = apply_trait_correlation(ds, sample_trait_correlation(sa))
                direct = fit_mle(ds_m, opts).theta[0]
                total = fit_mle(ds_m.select_variants(np.arange(n_univariable))
                                .select_exposures([0]), opts).theta[0]
            out[method] = 1.0 - direct / total
        except EstimationError:
            out[method] = None
    return out


@dataclass(frozen=True)
class MediationCell:
    theta1: float
    sigma_zeta1_sq: float
    sigma_zeta2_sq: float
    method: str
    median_proportion: float
    true_proportion: float
    n_failed: int


@dataclass(frozen=True)
class MediationStudyResult:
    replications: int
    cells: tuple[MediationCell, ...]
    raw: dict | None = None

    def cell(self, theta1, sigma_zeta1_sq, sigma_zeta2_sq, method) -> MediationCell:
        for c in self.cells:
            if (c.theta1, c.sigma_zeta1_sq, c.sigma_zeta2_sq, c.method) == \
                    (theta1, sigma_zeta1_sq, sigma_zeta2_sq, method):
                return c
        raise KeyError((theta1, sigma_zeta1_sq, sigma_zeta2_sq, method))


def run_mediation_study(replications: int, *, methods=METHODS,
                        theta1_values=(0.0, 0.1), sigma_zeta1_sq_values=(0.0, 1.0),
                        sigma_zeta2_sq_values=(0.0, 1.0, 2.0, 4.0),
                        theta2: float = 0.2, rho: float = 0.6,
                        n: int = 20_000, n_variants: int = 40, n_univariable: int = 10,
                        seed: int = 0, workers: int | None = None,
                        mle_options: MleOptions | None = None,
                        random_effects: bool = False,
                        keep_raw: bool = False) -> MediationStudyResult:
    """Median estimated proportion mediated over a measurement-error grid.

    For every grid cell the first ``n_univariable`` variants affect only
    the first exposure and serve as the univariable instrument set; the
    proportion mediated per replication is one minus the ratio of the
    multivariable to the univariable effect estimate, with both stages
    fitted by the same method. The closed-form true proportion is
    ``rho * theta2 / (theta1 + rho * theta2)``.
    """
    methods = tuple(methods)
    workers = resolve_workers(workers)
    cells = []
    raw = {} if keep_raw else None
    grid = list(product(theta1_values, sigma_zeta1_sq_values, sigma_zeta2_sq_values))
    for cell_index, (theta1, sz1, sz2) in enumerate(grid):
        spec = ScenarioSpec(theta=(theta1, theta2), rho=rho,
                            sigma_zeta_sq=(sz1, sz2), n=n, n_variants=n_variants,
                            mediation_mode=True, seed=_seed_for(seed, cell_index))
        task = partial(_mediation_task, spec, methods, mle_options, random_effects,
                       n_univariable)
        records = _run_tasks(task, replications, workers)
        truth = rho * theta2 / (theta1 + rho * theta2)
        for method in methods:
            values = np.array([r[method] for r in records if r[method] is not None])
            cells.append(MediationCell(
                theta1=theta1, sigma_zeta1_sq=sz1, sigma_zeta2_sq=sz2, method=method,
                median_proportion=float(np.median(values)) if values.size else math.nan,
                true_proportion=truth,
                n_failed=replications - values.size,
            ))
            if keep_raw:
                raw[(theta1, sz1, sz2, method)] = values
    return MediationStudyResult(replications, tuple(cells), raw)
