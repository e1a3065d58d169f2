"""
Posterior summaries, interval estimates, convergence diagnostics and the
surveillance rates derived from a population size estimate.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from .exceptions import CountsValidationError, NumericalFailure

logger = logging.getLogger(__name__)

MIN_HPD_DRAWS = 100
MIN_GEWEKE_DRAWS = 1000
GEWEKE_THRESHOLD = 1.96
TRACKED = ('N', 'alpha1', 'alpha2', 'alpha3', 'alpha4', 'delta1', 'delta2', 'delta3')


@dataclass
class PosteriorSummary:
    median: float
    mean: float
    mae: float
    hpd_low: float
    hpd_high: float
    level: float
    draws: int
    geweke_z: Dict[str, Optional[float]] = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def _as_draws(draws):
    values = np.asarray(draws, dtype=float).ravel()
    if not np.all(np.isfinite(values)):
        raise CountsValidationError("Draws contain non-finite values")
    return values


def hpd_interval(draws, level=0.95):
    """
    Narrowest interval holding ceil(level * n) of the sorted draws.
    Assumes a unimodal posterior; a warning is logged when the window widths
    suggest otherwise.
    """
    if not 0.0 < level < 1.0:
        raise CountsValidationError(f"level must lie in (0, 1), got {level}")
    values = np.sort(_as_draws(draws))
    n = len(values)
    if n < MIN_HPD_DRAWS:
        raise CountsValidationError(f"HPD interval needs at least {MIN_HPD_DRAWS} draws, got {n}")

    k = int(math.ceil(level * n))
    widths = values[k - 1:] - values[:n - k + 1]
    best = int(np.argmin(widths))

    if _window_rebound(widths, best) > 0.5 * max(widths[best], np.finfo(float).tiny):
        logger.warning("HPD window widths are not unimodal; the posterior may be multimodal "
                       "and a single interval can misstate it")
    return float(values[best]), float(values[best + k - 1])


def _window_rebound(widths, best):
    """How far the widths climb back up while walking towards the narrowest window"""
    left = widths[:best + 1]
    right = widths[best:][::-1]
    rebound = 0.0
    for side in (left, right):
        if len(side) > 1:
            rebound = max(rebound, float(np.max(side - np.minimum.accumulate(side))))
    return rebound


def central_interval(draws, level=0.95):
    values = _as_draws(draws)
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(values, [tail, 1.0 - tail])
    return float(low), float(high)


def _batch_mean_variance(segment):
    """Variance of the segment mean from floor(sqrt(n)) non-overlapping batch means"""
    n = len(segment)
    batches = max(int(math.isqrt(n)), 2)
    size = n // batches
    means = segment[:batches * size].reshape(batches, size).mean(axis=1)
    return float(np.var(means, ddof=1) / batches)


def geweke_z(draws, frac_a=0.1, frac_b=0.5):
    """
    Difference of the means of the first frac_a and the last frac_b of the
    chain over its batch-means standard error
    """
    values = _as_draws(draws)
    n = len(values)
    if n < MIN_GEWEKE_DRAWS:
        raise CountsValidationError(f"Geweke diagnostic needs at least {MIN_GEWEKE_DRAWS} draws, got {n}")
    if not (0 < frac_a < 1 and 0 < frac_b < 1 and frac_a + frac_b <= 1):
        raise CountsValidationError(f"Invalid segment fractions {frac_a}, {frac_b}")

    first = values[:int(frac_a * n)]
    last = values[n - int(frac_b * n):]
    var_a = _batch_mean_variance(first)
    var_b = _batch_mean_variance(last)
    if var_a <= 0.0 or var_b <= 0.0:
        raise NumericalFailure("Geweke diagnostic undefined: a segment has zero variance")
    return float((first.mean() - last.mean()) / math.sqrt(var_a + var_b))


def rmae(estimates, true_n):
    """Mean of |estimate - N| / N"""
    values = np.asarray(estimates, dtype=float)
    if true_n <= 0:
        raise CountsValidationError("True population size must be positive")
    if values.size == 0:
        raise CountsValidationError("No estimates given")
    return float(np.mean(np.abs(values - true_n) / true_n))


def coverage_rate(intervals, true_n):
    """Percentage of (low, high) intervals containing true_n"""
    intervals = list(intervals)
    if not intervals:
        raise CountsValidationError("No intervals given")
    hits = sum(1 for low, high in intervals if low <= true_n <= high)
    return 100.0 * hits / len(intervals)


def ur_rate(n_hat, x0):
    """Under-reporting rate: share of the population missed by every list, in %"""
    if n_hat < x0 or n_hat <= 0:
        raise CountsValidationError(f"Under-reporting rate undefined for N = {n_hat} < x0 = {x0}")
    return 100.0 * (n_hat - x0) / n_hat


def ir_rate(n_hat, inhabitants):
    """Incidence per 100,000 inhabitants"""
    if inhabitants is None or inhabitants <= 0:
        raise CountsValidationError("Incidence rate needs a positive number of inhabitants")
    return 100_000.0 * n_hat / inhabitants


def summarize_draws(draws, level=0.95):
    values = _as_draws(draws)
    median = float(np.median(values))
    low, high = hpd_interval(values, level)
    summary = PosteriorSummary(
        median=median,
        mean=float(values.mean()),
        mae=float(np.mean(np.abs(values - median))),
        hpd_low=low,
        hpd_high=high,
        level=level,
        draws=len(values),
    )
    if not low <= median <= high:
        message = f"Median {median:.4g} falls outside the HPD interval ({low:.4g}, {high:.4g})"
        logger.warning(message)
        summary.warnings.append(message)
    return summary


def geweke_table(chain, names=TRACKED):
    """Geweke z per tracked scalar; None where the diagnostic is undefined"""
    table = {}
    for name in names:
        try:
            table[name] = geweke_z(chain.draws(name))
        except (NumericalFailure, CountsValidationError) as e:
            logger.info(f"Geweke z for {name} not available: {e}")
            table[name] = None
    return table


def summarize_chain(chain, level=0.95):
    """Summary of N with Geweke diagnostics for N, alpha and delta"""
    summary = summarize_draws(chain.draws('N'), level)
    summary.geweke_z = geweke_table(chain)
    for name, z in summary.geweke_z.items():
        if z is not None and abs(z) > GEWEKE_THRESHOLD:
            message = f"Geweke |z| = {abs(z):.2f} for {name}; the chain may not have converged"
            logger.warning(message)
            summary.warnings.append(message)
    return summary


def capture_probability_summary(chain):
    """Five-number summary of the P_l draws per list"""
    summary = {}
    for l in (1, 2, 3):
        values = chain.draws(f'P{l}')
        q = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
        summary[f'P{l}'] = dict(zip(('min', 'q1', 'median', 'q3', 'max'), (float(v) for v in q)))
    return summary


def dependence_summary(chain, level=0.95, threshold=0.01):
    """
    Posterior median and HPD of each alpha_s, of alpha0 and of 1 - alpha0,
    with the posterior probability that each alpha_s exceeds threshold
    """
    summary = {}
    names = ('alpha1', 'alpha2', 'alpha3', 'alpha4', 'alpha0')
    for name in names + ('independent',):
        values = 1.0 - chain.draws('alpha0') if name == 'independent' else chain.draws(name)
        low, high = hpd_interval(values, level)
        entry = {'median': float(np.median(values)), 'hpd_low': low, 'hpd_high': high}
        if name.startswith('alpha') and name != 'alpha0':
            entry['prob_above_threshold'] = float(np.mean(values > threshold))
        summary[name] = entry
    return summary


def histogram(draws):
    """Kernel-free histogram with Freedman-Diaconis bins"""
    values = _as_draws(draws)
    if np.ptp(values) == 0:
        edges = np.array([values[0] - 0.5, values[0] + 0.5])
        counts = np.array([len(values)])
    else:
        counts, edges = np.histogram(values, bins='fd')
    widths = np.diff(edges)
    return pd.DataFrame({
        'bin_left': edges[:-1],
        'bin_right': edges[1:],
        'count': counts,
        'density': counts / (counts.sum() * widths),
    })
