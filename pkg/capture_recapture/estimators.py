"""
Classical population size estimators for a triple record system: log-linear
models fitted by Poisson IRLS (independence, no-second-order interaction,
quasi-symmetry, partial quasi-symmetry), the M_tb behavioural-response
likelihood and the sample coverage estimator. Confidence intervals come from
a conditional multinomial bootstrap.
"""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd
from django.conf import settings
from scipy import linalg
from scipy.optimize import minimize, minimize_scalar
from scipy.special import expit, gammaln, xlog1py, xlogy

from .counts import CELL_NAMES, TrsCounts, margins
from .exceptions import CountsValidationError, NumericalFailure, TrsError

logger = logging.getLogger(__name__)

IRLS_TOL = 1e-10
IRLS_MAX_ITER = 100
RIDGE = 1e-8
MIN_BOOTSTRAP = 100
MAX_FAILURE_SHARE = 0.5

# (i, j, k) presence flags per observed cell, CELL_NAMES order
_FLAGS = np.array([[int(ch) for ch in name[1:]] for name in CELL_NAMES], dtype=float)


@dataclass
class EstimateResult:
    method: str
    n_hat: float
    feasible: bool
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    mae: Optional[float] = None
    extras: Dict[str, float] = field(default_factory=dict)
    note: str = ''

    def as_dict(self):
        data = asdict(self)
        data['n_hat'] = _json_number(self.n_hat)
        return data

    def with_interval(self, interval):
        """Attach a bootstrap interval; the interval is widened to hold a feasible point estimate"""
        self.ci_low, self.ci_high, self.mae = interval.ci_low, interval.ci_high, interval.mae
        self.extras['bootstrap_replicates'] = interval.succeeded
        self.extras['bootstrap_failures'] = interval.failed
        if self.feasible and math.isfinite(self.n_hat) and not self.ci_low <= self.n_hat <= self.ci_high:
            logger.warning(f"{self.method}: point estimate {self.n_hat:.1f} outside bootstrap interval "
                           f"({self.ci_low:.1f}, {self.ci_high:.1f}); extending the interval")
            self.ci_low = min(self.ci_low, self.n_hat)
            self.ci_high = max(self.ci_high, self.n_hat)
        return self

    def __str__(self):
        return f"{self.method}: N={self.n_hat:.1f} ({'feasible' if self.feasible else 'infeasible'})"


def _json_number(value):
    return value if value is None or math.isfinite(value) else None


@dataclass
class GlmFit:
    coefficients: Dict[str, float]
    fitted_means: np.ndarray
    converged: bool
    iterations: int
    ridge: bool = False


def design_matrix(columns):
    """
    Stack named design columns evaluated on the seven observed cells.
    columns maps a coefficient name to a function of the (i, j, k) flag arrays.
    """
    i, j, k = _FLAGS.T
    return pd.DataFrame({name: np.asarray(fn(i, j, k), dtype=float) * np.ones(len(CELL_NAMES))
                         for name, fn in columns.items()}, index=list(CELL_NAMES))


INDEPENDENT_DESIGN = {
    'intercept': lambda i, j, k: 1.0,
    'list1': lambda i, j, k: i,
    'list2': lambda i, j, k: j,
    'list3': lambda i, j, k: k,
}
# On the observed cells I[i+j+k=2] = i + j + k - 1 - 2 I[i+j+k=3], so gamma(2) is
# absorbed by the main effects and only gamma(3) is a free column
QSM_DESIGN = {
    **INDEPENDENT_DESIGN,
    'gamma3': lambda i, j, k: (i + j + k == 3),
}
PQSM_DESIGN = {
    **INDEPENDENT_DESIGN,
    'gamma_pair': lambda i, j, k: (i + j == 2),
    'gamma_cross': lambda i, j, k: (i + j) * k,
}


def _observed(counts):
    if isinstance(counts, TrsCounts):
        return np.array(counts.as_tuple(), dtype=float)
    values = np.asarray(counts, dtype=float)
    if values.shape != (len(CELL_NAMES),) or np.any(values < 0):
        raise CountsValidationError("Expected seven non-negative cell counts")
    return values


def poisson_irls(design, counts, tol=IRLS_TOL, max_iter=IRLS_MAX_ITER):
    """
    Poisson log-linear fit of the seven observed cells by iteratively
    reweighted least squares. design is a 7 x p DataFrame (or array) of full
    column rank. Fitted means that underflow switch on a small ridge.
    """
    names = list(design.columns) if isinstance(design, pd.DataFrame) else [f'c{n}' for n in range(np.shape(design)[1])]
    X = np.asarray(design, dtype=float)
    y = _observed(counts)
    n, p = X.shape
    if n != len(CELL_NAMES) or p > n:
        raise CountsValidationError(f"Design must be 7 x p with p <= 7, got {X.shape}")
    if np.linalg.matrix_rank(X) < p:
        raise NumericalFailure("Design matrix is rank deficient")

    mu = y + 0.5
    eta = np.log(mu)
    params = None
    ridge = False
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        z = eta + (y - mu) / mu
        XW = X * mu[:, np.newaxis]
        XWX = X.T @ XW
        if ridge:
            XWX = XWX + RIDGE * np.eye(p)
        try:
            new_params = linalg.solve(XWX, XW.T @ z, assume_a='sym')
        except linalg.LinAlgError:
            if ridge:
                raise NumericalFailure("IRLS normal equations are singular even with ridge") from None
            logger.warning("IRLS normal equations singular; retrying with ridge")
            ridge = True
            continue

        eta = np.clip(X @ new_params, -700.0, 700.0)
        mu = np.exp(eta)
        if not ridge and np.any(mu < 1e-300):
            logger.warning("IRLS fitted mean underflow (sparse table); adding ridge")
            ridge = True

        change = np.inf if params is None else float(np.max(np.abs(new_params - params)))
        params = new_params
        if change < tol:
            converged = True
            break

    if not converged:
        logger.warning(f"IRLS did not converge in {max_iter} iterations")
    return GlmFit(
        coefficients=dict(zip(names, (float(v) for v in params))),
        fitted_means=mu,
        converged=converged,
        iterations=iteration,
        ridge=ridge,
    )


def _no_second_order_m000(m):
    """m000 = m111 m100 m010 m001 / (m110 m101 m011), cells in CELL_NAMES order"""
    m111, m110, m101, m011, m100, m010, m001 = m
    denominator = m110 * m101 * m011
    if denominator <= 0:
        return None
    return m111 * m100 * m010 * m001 / denominator


def llm_estimate(counts):
    """
    All two-way interaction log-linear model. Saturated on the seven cells,
    so fitted means equal the data and m000 follows in closed form.
    """
    m000 = _no_second_order_m000(counts.as_tuple())
    if m000 is None:
        logger.warning(f"LLM undefined for {counts}: a denominator cell is 0")
        return EstimateResult('llm', float('nan'), False, note='zero cell among x110, x101, x011')
    return EstimateResult('llm', counts.x0 + m000, True, extras={'m000': m000})


def independent_estimate(counts):
    """Main-effects Poisson model; m000 = exp(intercept)"""
    mg = margins(counts)
    if min(mg.n1, mg.n2, mg.n3) == 0:
        return EstimateResult('independent', float('nan'), False, note='a list is empty')
    fit = poisson_irls(design_matrix(INDEPENDENT_DESIGN), counts)
    if not fit.converged:
        raise NumericalFailure(f"Independence model did not converge for {counts}")
    m000 = math.exp(fit.coefficients['intercept'])
    return EstimateResult('independent', counts.x0 + m000, True,
                          extras={'m000': m000, 'iterations': fit.iterations})


def _heterogeneity_estimate(method, design, counts):
    fit = poisson_irls(design_matrix(design), counts)
    extras = {'iterations': fit.iterations, 'ridge': int(fit.ridge)}
    if not fit.converged:
        return EstimateResult(method, float('nan'), False, extras=extras, note='IRLS did not converge')
    m000 = _no_second_order_m000(fit.fitted_means)
    if m000 is None or not math.isfinite(m000):
        return EstimateResult(method, float('nan'), False, extras=extras, note='extrapolation undefined')
    extras['m000'] = m000
    return EstimateResult(method, counts.x0 + m000, True, extras=extras)


def qsm_estimate(counts):
    """Quasi-symmetry model with gamma(0) = gamma(1) = 0"""
    return _heterogeneity_estimate('qsm', QSM_DESIGN, counts)


def pqsm_estimate(counts):
    """Partial quasi-symmetry: lists 1 and 2 share a heterogeneity pattern, list 3 differs"""
    return _heterogeneity_estimate('pqsm', PQSM_DESIGN, counts)


def mtb_log_likelihood(N, f, phi, stats, x0):
    """
    Log-likelihood of M_tb up to a constant: first-capture probabilities f,
    recapture probabilities phi * f_l on lists 2 and 3
    """
    f1, f2, f3 = f
    u1, u2, u3 = stats.u1, stats.u2, stats.u3
    M = {2: stats.M2, 3: stats.M3, 4: x0}
    total = gammaln(N + 1.0) - gammaln(N - x0 + 1.0)
    total += xlogy(u1, f1) + xlog1py(N - u1, -f1)
    total += xlogy(stats.m2 + stats.m3, phi)
    for l, fl, ul, ml in ((2, f2, u2, stats.m2), (3, f3, u3, stats.m3)):
        total += xlogy(ul + ml, fl) + xlog1py(N - M[l + 1], -fl) + xlog1py(M[l] - ml, -phi * fl)
    return float(total)


def _unpack(theta):
    """Unconstrained (logit f2, logit f3, t) to (f2, f3, phi) with phi * f_l < 1"""
    f2, f3 = expit(theta[0]), expit(theta[1])
    phi = expit(theta[2]) / max(f2, f3)
    return f2, f3, phi


class _MtbProfile:
    """Profile log-likelihood of N, maximizing over (f2, f3, phi) for each N"""

    def __init__(self, counts, restarts=5, seed=0):
        self.stats = margins(counts).mtb
        self.x0 = counts.x0
        self.restarts = restarts
        self.starts = np.random.default_rng(seed).normal(0.0, 1.5, size=(restarts - 1, 3))
        self.best_theta = np.zeros(3)

    def inner(self, N, restarts=None):
        f1 = self.stats.u1 / N

        def objective(theta):
            f2, f3, phi = _unpack(theta)
            return -mtb_log_likelihood(N, (f1, f2, f3), phi, self.stats, self.x0)

        restarts = self.restarts if restarts is None else restarts
        best = None
        for start in (self.best_theta, *self.starts[:restarts - 1]):
            result = minimize(objective, start, method='Nelder-Mead',
                              options={'xatol': 1e-6, 'fatol': 1e-9, 'maxiter': 2000})
            if best is None or result.fun < best.fun:
                best = result
        self.best_theta = best.x
        return -best.fun, best

    def __call__(self, N, restarts=None):
        return self.inner(N, restarts)[0]


def mtb_profile_log_likelihood(counts, N, restarts=5):
    """M_tb log-likelihood at N, maximized over f1, f2, f3 and phi"""
    if N < counts.x0:
        raise CountsValidationError(f"N = {N} is below the {counts.x0} observed individuals")
    return _MtbProfile(counts, restarts=restarts)(float(N))


def mtb_estimate(counts, grid_points=80, grid_span=100.0, restarts=5):
    """
    Maximum likelihood under M_tb with constant recapture/first-capture
    ratio phi. N is profiled on a log grid over [x0, grid_span * x0] and
    refined by bounded golden-section search, then rounded.

    The profile can keep rising in N (the national LD table does); the
    estimate is then the grid end and is marked infeasible.
    """
    stats = margins(counts).mtb
    if stats.m2 + stats.m3 == 0:
        return EstimateResult('mtb', float('nan'), False, note='no recaptures on lists 2 and 3')

    profile = _MtbProfile(counts, restarts=restarts)
    grid = np.geomspace(counts.x0, counts.x0 * grid_span, grid_points)
    # grid pass warm-starts from the previous N; the refinement uses every restart
    values = np.array([profile(N, restarts=2) for N in grid])
    best = int(np.argmax(values))

    low, high = grid[max(best - 1, 0)], grid[min(best + 1, len(grid) - 1)]
    refined = minimize_scalar(lambda N: -profile(N), bounds=(low, high), method='bounded',
                              options={'xatol': 1e-3})
    n_real = float(refined.x) if refined.success and -refined.fun >= values[best] else float(grid[best])
    loglik, inner = profile.inner(n_real)
    f2, f3, phi = _unpack(inner.x)

    extras = {'phi': phi, 'f1': stats.u1 / n_real, 'f2': f2, 'f3': f3,
              'n_real': n_real, 'log_likelihood': loglik}
    if best == len(grid) - 1:
        logger.warning(f"M_tb profile maximum at the grid boundary N = {grid[-1]:.0f}")
        return EstimateResult('mtb', float(round(n_real)), False, extras=extras,
                              note='boundary solution; likelihood increasing in N')
    if not inner.success:
        logger.warning(f"M_tb inner optimization did not converge at N = {n_real:.1f}")
        extras['inner_converged'] = 0
    return EstimateResult('mtb', float(round(n_real)), True, extras=extras)


def sc_estimate(counts):
    """Sample coverage estimator; infeasible when the estimate falls below x0"""
    mg = margins(counts)
    s = mg.dot_sums
    n1, n2, n3 = mg.n1, mg.n2, mg.n3
    if min(n1, n2, n3) == 0:
        return EstimateResult('sc', float('nan'), False, note='a list is empty')

    coverage = 1.0 - (counts.x100 / n1 + counts.x010 / n2 + counts.x001 / n3) / 3.0
    if coverage <= 0.0:
        return EstimateResult('sc', float('nan'), False, extras={'coverage': coverage},
                              note='estimated coverage is 0')

    pairs = s['x.11'] + s['x1.1'] + s['x11.']
    correction = (
        (s['x1.0'] + s['x.10']) * s['x11.'] / (n1 * n2)
        + (s['x10.'] + s['x.01']) * s['x1.1'] / (n1 * n3)
        + (s['x0.1'] + s['x01.']) * s['x.11'] / (n2 * n3)
    ) / (3.0 * coverage)
    bracket = 1.0 - correction
    if bracket <= 0.0:
        return EstimateResult('sc', float('nan'), False, extras={'coverage': coverage},
                              note='heterogeneity correction exceeds 1')

    n_hat = pairs / (3.0 * coverage) / bracket
    feasible = n_hat >= counts.x0
    if not feasible:
        logger.warning(f"SC estimate {n_hat:.1f} is below x0 = {counts.x0}")
    return EstimateResult('sc', n_hat, feasible, extras={'coverage': coverage},
                          note='' if feasible else 'estimate below x0')


ESTIMATORS: Dict[str, Callable[[TrsCounts], EstimateResult]] = {
    'sc': sc_estimate,
    'llm': llm_estimate,
    'independent': independent_estimate,
    'qsm': qsm_estimate,
    'pqsm': pqsm_estimate,
    'mtb': mtb_estimate,
}


def get_estimator(method):
    if callable(method):
        return method
    try:
        return ESTIMATORS[method]
    except KeyError:
        raise CountsValidationError(
            f"Unknown method '{method}'. Choose from {', '.join(ESTIMATORS)}"
        ) from None


def parse_methods(text):
    """Comma-separated method list, validated against the registry"""
    methods = [m.strip() for m in text.split(',') if m.strip()]
    if not methods:
        raise CountsValidationError("No estimation method given")
    for method in methods:
        get_estimator(method)
    return methods


@dataclass
class BootstrapInterval:
    ci_low: float
    ci_high: float
    mae: float
    succeeded: int
    failed: int


def _replicate_estimate(estimator, probs, x0, seed_seq):
    rng = np.random.default_rng(seed_seq)
    replicate = TrsCounts.from_sequence(rng.multinomial(x0, probs))
    try:
        with np.errstate(all='ignore'):
            result = estimator(replicate)
    except (TrsError, ArithmeticError) as e:
        logger.debug(f"Bootstrap replicate failed: {e}")
        return None
    return result.n_hat if math.isfinite(result.n_hat) else None


def _bootstrap_batch(job):
    method, probs, x0, streams = job
    estimator = get_estimator(method)
    return [_replicate_estimate(estimator, probs, x0, s) for s in streams]


def bootstrap_ci(method, counts, B=None, level=None, seed=None, workers=None, point=None):
    """
    Conditional bootstrap: resample x0 individuals over the seven observed
    cells with the observed proportions and re-estimate. Returns the
    equal-tail quantile interval and MAE = mean |N*_b - N_hat|.
    """
    B = B if B is not None else getattr(settings, 'TRS_BOOTSTRAP_REPLICATES', 1000)
    level = level if level is not None else getattr(settings, 'TRS_CI_LEVEL', 0.95)
    seed = seed if seed is not None else getattr(settings, 'TRS_DEFAULT_SEED', 20240501)
    workers = workers or getattr(settings, 'TRS_WORKERS', 1)
    if B < MIN_BOOTSTRAP:
        raise CountsValidationError(f"Need at least {MIN_BOOTSTRAP} bootstrap replicates, got {B}")
    if not 0.0 < level < 1.0:
        raise CountsValidationError(f"level must lie in (0, 1), got {level}")

    estimator = get_estimator(method)
    if point is None:
        point = estimator(counts).n_hat
    cells = np.array(counts.as_tuple(), dtype=float)
    probs = cells / cells.sum()
    streams = np.random.SeedSequence(seed).spawn(B)

    if workers > 1 and isinstance(method, str):
        batches = np.array_split(np.arange(B), workers)
        jobs = [(method, probs, counts.x0, [streams[i] for i in batch]) for batch in batches]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            estimates = [value for chunk in pool.map(_bootstrap_batch, jobs) for value in chunk]
    else:
        estimates = [_replicate_estimate(estimator, probs, counts.x0, s) for s in streams]

    values = np.array([v for v in estimates if v is not None], dtype=float)
    failed = B - len(values)
    if failed > MAX_FAILURE_SHARE * B:
        raise NumericalFailure(f"{failed} of {B} bootstrap replicates failed")
    if failed:
        logger.warning(f"{failed} of {B} bootstrap replicates failed and were dropped")

    tail = (1.0 - level) / 2.0
    low, high = np.quantile(values, [tail, 1.0 - tail])
    mae = float(np.mean(np.abs(values - point))) if math.isfinite(point) else float('nan')
    return BootstrapInterval(float(low), float(high), mae, len(values), failed)


def estimate(method, counts, B=None, level=None, seed=None, workers=None):
    """Point estimate plus bootstrap interval; failures are reported, not raised"""
    estimator = get_estimator(method)
    name = method if isinstance(method, str) else getattr(method, '__name__', 'custom')
    try:
        result = estimator(counts)
    except TrsError as e:
        logger.error(f"{name} failed on {counts}: {e}")
        return EstimateResult(name, float('nan'), False, note=str(e))
    if not math.isfinite(result.n_hat):
        return result

    try:
        interval = bootstrap_ci(method, counts, B=B, level=level, seed=seed, workers=workers,
                                point=result.n_hat)
    except NumericalFailure as e:
        logger.error(f"Bootstrap for {name} failed: {e}")
        result.note = (result.note + '; ' if result.note else '') + str(e)
        return result
    logger.info(f"{name}: N={result.n_hat:.1f}, CI=({interval.ci_low:.1f}, {interval.ci_high:.1f})")
    return result.with_interval(interval)


def results_frame(results):
    """One row per method in the column layout of a summary table"""
    rows = []
    for r in results:
        rows.append({
            'method': r.method,
            'n_hat': r.n_hat,
            'mae': r.mae,
            'ci_low': r.ci_low,
            'ci_high': r.ci_high,
            'feasible': r.feasible,
            'note': r.note,
            'extras': json.dumps(r.extras, sort_keys=True),
        })
    return pd.DataFrame(rows, columns=['method', 'n_hat', 'mae', 'ci_low', 'ci_high',
                                       'feasible', 'note', 'extras'])
