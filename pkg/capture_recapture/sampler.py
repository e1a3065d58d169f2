"""
Trivariate heterogeneous Bernoulli model (THBM) and its data-augmentation
Gibbs sampler.

An individual falls in one of five dependence regimes: causally independent
(probability 1 - alpha0) or, with probabilities alpha1..alpha4, copies its
latent capture status from list 1 to list 2, from list 2 to list 3, from
list 1 to list 3, or from list 1 to both other lists. Latent statuses are
Bernoulli(P_l) with logit(P_l) = b_l, and b_l follows a generalized
logistic type-I law with shape delta_l.

Regime index u used throughout: 0 = independent, 1..4 = alpha1..alpha4.
The Dirichlet block is ordered (alpha1, alpha2, alpha3, alpha4, 1 - alpha0).
"""
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from django.conf import settings
from scipy.special import expit, gammaln, logit, logsumexp, xlogy

from .exceptions import CountsValidationError, ModelSpecificationError

logger = logging.getLogger(__name__)

CELLS = ((1, 1, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0))
BINARY_CELLS = ('110', '011', '100', '101', '010', '001')
CHAIN_COLUMNS = ('N', 'alpha1', 'alpha2', 'alpha3', 'alpha4',
                 'delta1', 'delta2', 'delta3', 'P1', 'P2', 'P3')

PROB_FLOOR = 1e-300
PROB_CEIL = 1.0 - 1e-15
OMEGA_FLOOR = 1e-300
SIMPLEX_TOL = 1e-12

JEFFREYS = 'jeffreys'
INFORMATIVE = 'informative'

_DRAW_NAME = re.compile(r'^(alpha|delta|b|P)(\d)$')

SUBMODELS = {
    'thbm': frozenset(),
    'tbm1': frozenset({3}),
    'tbm2': frozenset({4}),
    'mt': frozenset({1, 2, 3, 4}),
}


@dataclass(frozen=True)
class AlphaVector:
    a1: float
    a2: float
    a3: float
    a4: float

    def __post_init__(self):
        for value in self.as_tuple():
            if not (0.0 <= value <= 1.0):
                raise ModelSpecificationError(f"Dependence weights must lie in [0, 1], got {self.as_tuple()}")
        if self.alpha0 > 1.0 + SIMPLEX_TOL:
            raise ModelSpecificationError(f"alpha0 = {self.alpha0:.6g} exceeds 1")

    @classmethod
    def from_simplex(cls, weights):
        """Build from a 5-vector in Dirichlet order (alpha1..alpha4, 1 - alpha0)"""
        return cls(*(float(w) for w in weights[:4]))

    @property
    def alpha0(self):
        return self.a1 + self.a2 + self.a3 + self.a4

    @property
    def independent(self):
        return max(0.0, 1.0 - self.alpha0)

    def as_tuple(self):
        return (self.a1, self.a2, self.a3, self.a4)

    def simplex(self):
        return np.array([self.a1, self.a2, self.a3, self.a4, self.independent])


@dataclass(frozen=True)
class DeltaVector:
    d1: float
    d2: float
    d3: float

    def __post_init__(self):
        if min(self.as_tuple()) <= 0:
            raise ModelSpecificationError(f"Shape parameters must be positive, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.d1, self.d2, self.d3)

    def as_array(self):
        return np.array(self.as_tuple())


@dataclass(frozen=True)
class RandomEffects:
    """List effects b_l and the capture probabilities P_l = logistic(b_l)"""
    b: Tuple[float, float, float]
    P: Tuple[float, float, float]

    @classmethod
    def from_effects(cls, b):
        b = tuple(float(v) for v in b)
        return cls(b=b, P=tuple(float(p) for p in expit(np.array(b))))

    @classmethod
    def from_probabilities(cls, P):
        P = np.clip(np.asarray(P, dtype=float), PROB_FLOOR, PROB_CEIL)
        return cls(b=tuple(float(v) for v in logit(P)), P=tuple(float(p) for p in P))


@dataclass(frozen=True)
class LatentCounts:
    """
    Regime splits of the observed cells and of the unobserved (0,0,0) cell.
    y111 and y000 are 5-way splits by regime; the six mixed cells only admit
    the independent regime and one copy regime, so one count (the independent
    share) determines each of them.
    """
    y111: Tuple[int, int, int, int, int]
    binary: Tuple[int, int, int, int, int, int]  # independent shares, BINARY_CELLS order
    y000: Tuple[int, int, int, int, int]

    @property
    def unobserved(self):
        return sum(self.y000)

    def check(self, counts, N):
        cells = _mixed_cells(counts)
        if min(self.y111) < 0 or min(self.binary) < 0 or min(self.y000) < 0:
            raise ModelSpecificationError(f"Negative latent count in {self}")
        if sum(self.y111) != counts.x111:
            raise ModelSpecificationError(f"y111 sums to {sum(self.y111)}, expected {counts.x111}")
        for name, share, total in zip(BINARY_CELLS, self.binary, cells):
            if share > total:
                raise ModelSpecificationError(f"Independent share of x{name} ({share}) exceeds the cell ({total})")
        if sum(self.y000) != N - counts.x0:
            raise ModelSpecificationError(f"y000 sums to {sum(self.y000)}, expected N - x0 = {N - counts.x0}")

    def dirichlet_exponents(self, counts):
        """Exponents k1..k5 of alpha1..alpha4 and 1 - alpha0 in the complete-data likelihood"""
        x110, x011, x100, x101, x010, x001 = _mixed_cells(counts)
        s110, s011, s100, s101, s010, s001 = self.binary
        y111, y000 = self.y111, self.y000
        return np.array([
            y111[1] + (x110 - s110) + (x001 - s001) + y000[1],
            y111[2] + (x011 - s011) + (x100 - s100) + y000[2],
            y111[3] + (x101 - s101) + (x010 - s010) + y000[3],
            y111[4] + y000[4],
            y111[0] + sum(self.binary) + y000[0],
        ], dtype=float)

    def capture_exponents(self, counts, N):
        """
        (m, n): exponents of P_l and 1 - P_l in the complete-data likelihood,
        i.e. how many augmented individuals are caught / missed on list l
        """
        c = counts
        s110, s011, s100, s101, s010, s001 = self.binary
        y111, y000 = self.y111, self.y000
        x1 = c.x111 + c.x110 + c.x101 + c.x100
        m = np.array([
            x1,
            y111[0] + y111[2] + y111[3] + s110 + c.x011 + c.x010,
            y111[0] + y111[1] + s011 + s101 + c.x001,
        ], dtype=float)
        n = np.array([
            N - x1,
            c.x100 + c.x101 + s001 + y000[0] + y000[2] + y000[3],
            c.x110 + s100 + s010 + y000[0] + y000[1],
        ], dtype=float)
        return m, n


@dataclass(frozen=True)
class PriorSpec:
    """
    Prior regime for (alpha, delta). N always gets the 1/N prior.
    pinned lists alpha indices (1..4) held at 0, which yields the TBM-1
    (alpha3 = 0), TBM-2 (alpha4 = 0) and M_t (all zero) submodels.
    """
    regime: str = JEFFREYS
    beta: Tuple[float, ...] = (0.5, 0.5, 0.5, 0.5, 0.5)
    gamma: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    lam: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    pinned: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.regime not in (JEFFREYS, INFORMATIVE):
            raise CountsValidationError(f"Unknown prior regime '{self.regime}'")
        if len(self.beta) != 5 or len(self.gamma) != 3 or len(self.lam) != 3:
            raise CountsValidationError("Prior needs 5 Dirichlet and 3 gamma shape/scale hyperparameters")
        if min(self.beta) <= 0 or min(self.gamma) <= 0 or min(self.lam) <= 0:
            raise CountsValidationError("All prior hyperparameters must be positive")
        if not set(self.pinned) <= {1, 2, 3, 4}:
            raise CountsValidationError(f"Pinned alpha indices must be in 1..4, got {sorted(self.pinned)}")

    @classmethod
    def jeffreys(cls, submodel='thbm'):
        return cls(regime=JEFFREYS, pinned=_submodel(submodel))

    @classmethod
    def informative(cls, beta, gamma, lam, submodel='thbm'):
        return cls(regime=INFORMATIVE, beta=tuple(float(v) for v in beta),
                   gamma=tuple(float(v) for v in gamma), lam=tuple(float(v) for v in lam),
                   pinned=_submodel(submodel))

    @classmethod
    def centred_on(cls, alpha, delta, weight=8.0, delta_variance=100.0):
        """
        Informative prior centred on known (alpha, delta): Dirichlet weights
        weight * (alpha1..alpha4, 1 - alpha0) and gamma priors on delta_l
        with mean delta_l and the given variance
        """
        beta = tuple(weight * w for w in alpha.simplex())
        d = delta.as_array()
        return cls.informative(beta, tuple(d ** 2 / delta_variance), tuple(delta_variance / d))

    def dirichlet_prior(self):
        if self.regime == JEFFREYS:
            return np.full(5, 0.5)
        return np.array(self.beta, dtype=float)

    def active(self):
        """Dirichlet coordinates that are free (the independent share never is pinned)"""
        return [u for u in range(5) if (u + 1) not in self.pinned]

    def as_dict(self):
        return {
            'regime': self.regime,
            'beta': list(self.beta),
            'gamma': list(self.gamma),
            'lam': list(self.lam),
            'pinned': sorted(self.pinned),
        }


def _submodel(name):
    try:
        return SUBMODELS[name]
    except KeyError:
        raise CountsValidationError(f"Unknown submodel '{name}'. Choose from {', '.join(SUBMODELS)}") from None


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = field(default_factory=lambda: getattr(settings, 'TRS_GIBBS_ITERATIONS', 200_000))
    burn_in: Optional[int] = None
    thin: int = field(default_factory=lambda: getattr(settings, 'TRS_GIBBS_THIN', 10))
    seed: int = field(default_factory=lambda: getattr(settings, 'TRS_DEFAULT_SEED', 20240501))
    init: str = 'default'
    debug: bool = False

    def __post_init__(self):
        if self.burn_in is None:
            fraction = getattr(settings, 'TRS_GIBBS_BURN_IN_FRACTION', 0.1)
            object.__setattr__(self, 'burn_in', int(self.iterations * fraction))
        if self.iterations < 1 or self.thin < 1 or self.burn_in < 0:
            raise CountsValidationError("iterations and thin must be positive, burn-in non-negative")
        if self.burn_in >= self.iterations:
            raise CountsValidationError(f"burn-in ({self.burn_in}) must be below iterations ({self.iterations})")
        if self.init not in ('default', 'random'):
            raise CountsValidationError(f"Unknown initialisation '{self.init}'")

    @property
    def retained(self):
        return (self.iterations - self.burn_in) // self.thin

    def as_dict(self):
        return {'iterations': self.iterations, 'burn_in': self.burn_in, 'thin': self.thin,
                'seed': self.seed, 'init': self.init}


@dataclass
class Chain:
    """Retained Gibbs draws; one row per kept iteration"""
    N: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    b: np.ndarray
    P: np.ndarray
    x0: int
    config: GibbsConfig
    prior: PriorSpec
    elapsed: float = 0.0

    def __len__(self):
        return len(self.N)

    def draws(self, name):
        """Scalar draw sequence by name: N, alpha0..alpha4, delta1..3, b1..3, P1..3"""
        if name == 'N':
            return self.N.astype(float)
        if name == 'alpha0':
            return self.alpha.sum(axis=1)
        match = _DRAW_NAME.match(name)
        columns = {'alpha': self.alpha, 'delta': self.delta, 'b': self.b, 'P': self.P}
        if not match or match.group(1) not in columns:
            raise KeyError(f"Unknown draw sequence '{name}'")
        values = columns[match.group(1)]
        index = int(match.group(2)) - 1
        if not 0 <= index < values.shape[1]:
            raise KeyError(f"Unknown draw sequence '{name}'")
        return values[:, index]

    def to_frame(self):
        data = {'N': self.N}
        for i in range(4):
            data[f'alpha{i + 1}'] = self.alpha[:, i]
        for i in range(3):
            data[f'delta{i + 1}'] = self.delta[:, i]
        for i in range(3):
            data[f'P{i + 1}'] = self.P[:, i]
        return pd.DataFrame(data, columns=list(CHAIN_COLUMNS))


def _mixed_cells(counts):
    return (counts.x110, counts.x011, counts.x100, counts.x101, counts.x010, counts.x001)


def _regime_terms(alpha, P1, P2, P3):
    """
    Per cell, the probability of landing there through each regime u.
    Works on floats and on broadcastable numpy arrays alike.
    """
    a1, a2, a3, a4 = alpha
    ind = 1.0 - (a1 + a2 + a3 + a4)
    Q1, Q2, Q3 = 1.0 - P1, 1.0 - P2, 1.0 - P3
    zero = 0.0 * P1
    return {
        (1, 1, 1): (ind * P1 * P2 * P3, a1 * P1 * P3, a2 * P1 * P2, a3 * P1 * P2, a4 * P1),
        (1, 1, 0): (ind * P1 * P2 * Q3, a1 * P1 * Q3, zero, zero, zero),
        (1, 0, 1): (ind * P1 * Q2 * P3, zero, zero, a3 * P1 * Q2, zero),
        (0, 1, 1): (ind * Q1 * P2 * P3, zero, a2 * Q1 * P2, zero, zero),
        (1, 0, 0): (ind * P1 * Q2 * Q3, zero, a2 * P1 * Q2, zero, zero),
        (0, 1, 0): (ind * Q1 * P2 * Q3, zero, zero, a3 * Q1 * P2, zero),
        (0, 0, 1): (ind * Q1 * Q2 * P3, a1 * Q1 * P3, zero, zero, zero),
        (0, 0, 0): (ind * Q1 * Q2 * Q3, a1 * Q1 * Q3, a2 * Q1 * Q2, a3 * Q1 * Q2, a4 * Q1),
    }


def _check_alpha(alpha):
    if isinstance(alpha, AlphaVector):
        return alpha.as_tuple()
    values = tuple(float(a) for a in alpha)
    AlphaVector(*values)
    return values


def cell_probabilities(alpha, P):
    """
    Probabilities p_ijk of all eight cells under THBM given capture
    probabilities P = (P1, P2, P3). Each P_l may be an array (e.g. Monte-Carlo
    draws), in which case every cell probability is an array of that shape.
    """
    a = _check_alpha(alpha)
    P1, P2, P3 = (np.asarray(p, dtype=float) for p in P)
    for p in (P1, P2, P3):
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ModelSpecificationError("Capture probabilities must lie strictly inside (0, 1)")
    terms = _regime_terms(a, P1, P2, P3)
    probs = {cell: sum(parts) for cell, parts in terms.items()}
    if P1.ndim == 0:
        probs = {cell: float(p) for cell, p in probs.items()}
    return probs


@dataclass(frozen=True)
class SplitProbabilities:
    q111: np.ndarray
    q000: np.ndarray
    binary: Tuple[float, ...]   # probability a mixed-cell individual is causally independent


def _normalize(parts):
    parts = np.array(parts, dtype=float)
    total = parts.sum()
    if total <= 0.0:
        return np.zeros_like(parts), 0.0
    return parts / total, total


def latent_split_probabilities(alpha, P, counts=None, N=None):
    """
    Regime probabilities within each cell, conditional on landing there.
    With counts (and N), a cell of probability zero that holds individuals
    raises ModelSpecificationError.
    """
    a = _check_alpha(alpha)
    P1, P2, P3 = (min(max(float(p), PROB_FLOOR), PROB_CEIL) for p in P)
    terms = _regime_terms(a, P1, P2, P3)

    q111, t111 = _normalize(terms[(1, 1, 1)])
    q000, t000 = _normalize(terms[(0, 0, 0)])
    binary = []
    totals = {'111': t111, '000': t000}
    for name in BINARY_CELLS:
        cell = tuple(int(ch) for ch in name)
        parts = terms[cell]
        total = sum(parts)
        totals[name] = total
        binary.append(parts[0] / total if total > 0 else 0.0)

    if counts is not None:
        occupied = {'111': counts.x111, '000': (N - counts.x0) if N is not None else 0}
        occupied.update(zip(BINARY_CELLS, _mixed_cells(counts)))
        for name, total in totals.items():
            if total <= 0.0 and occupied[name] > 0:
                raise ModelSpecificationError(
                    f"Cell {name} has probability 0 under alpha={a}, P={(P1, P2, P3)} "
                    f"but holds {occupied[name]} individuals"
                )
    return SplitProbabilities(q111=q111, q000=q000, binary=tuple(binary))


def sample_latent(counts, N, alpha, effects, rng):
    """Draw the regime splits of every cell given (N, alpha, P)"""
    if N < counts.x0:
        raise ModelSpecificationError(f"N = {N} is below the observed x0 = {counts.x0}")
    split = latent_split_probabilities(alpha, effects.P, counts=counts, N=N)

    if counts.x111 > 0:
        y111 = tuple(int(v) for v in rng.multinomial(counts.x111, split.q111))
    else:
        y111 = (0, 0, 0, 0, 0)

    binary = tuple(int(v) for v in rng.binomial(_mixed_cells(counts), split.binary))

    missing = N - counts.x0
    if missing > 0:
        y000 = tuple(int(v) for v in rng.multinomial(missing, split.q000))
    else:
        y000 = (0, 0, 0, 0, 0)
    return LatentCounts(y111=y111, binary=binary, y000=y000)


def effect_posterior_parameters(latent, counts, N, delta):
    """Beta(m + delta, n + 1) parameters whose logit is the EGB2 full conditional of b"""
    m, n = latent.capture_exponents(counts, N)
    return m + delta.as_array(), n + 1.0


def sample_effects(latent, counts, N, delta, rng):
    """
    Draw b_l ~ EGB2(n_l + 1, m_l + delta_l) as the logit of a
    Beta(m_l + delta_l, n_l + 1) variate
    """
    a, c = effect_posterior_parameters(latent, counts, N, delta)
    if np.any(a <= 0) or np.any(c <= 0):
        raise ModelSpecificationError(f"Non-positive EGB2 parameters {a}, {c}")
    return RandomEffects.from_probabilities(rng.beta(a, c))


def alpha_posterior_parameters(latent, counts, prior):
    """Dirichlet parameters of the alpha full conditional (all five coordinates)"""
    return latent.dirichlet_exponents(counts) + prior.dirichlet_prior()


def sample_alpha(latent, counts, N, prior, rng):
    """
    Draw (alpha1..alpha4, 1 - alpha0) from its Dirichlet full conditional;
    pinned coordinates stay at 0 and the draw is on the reduced simplex.
    N enters through y000, which the latent state keeps consistent with it.
    """
    d = alpha_posterior_parameters(latent, counts, prior)
    active = prior.active()
    weights = np.zeros(5)
    weights[active] = rng.dirichlet(d[active])
    return AlphaVector.from_simplex(weights)


def delta_rates(effects):
    """omega_l = log(1 + exp(-b_l)), floored away from 0"""
    return np.maximum(np.logaddexp(0.0, -np.asarray(effects.b, dtype=float)), OMEGA_FLOOR)


def sample_delta(effects, prior, rng):
    omega = delta_rates(effects)
    if prior.regime == JEFFREYS:
        draws = rng.exponential(1.0 / omega)
    else:
        gamma = np.array(prior.gamma)
        lam = np.array(prior.lam)
        draws = rng.gamma(gamma + 1.0, 1.0 / (omega + 1.0 / lam))
    return DeltaVector(*(max(float(v), 1e-300) for v in draws))


def sample_population_size(latent, counts, alpha4, P1, rng):
    """
    Draw y000,5 from its negative binomial full conditional through the
    gamma-Poisson mixture and return N = x0 + sum(y000)
    """
    q = alpha4 * (1.0 - P1)
    if q >= 1.0:
        raise ModelSpecificationError(f"alpha4 * (1 - P1) = {q} must be below 1")
    size = counts.x0 + sum(latent.y000[:4])
    if q <= 0.0:
        return int(size)
    rate = rng.gamma(size, q / (1.0 - q))
    return int(size + rng.poisson(rate))


def sample_population_size_collapsed(counts, alpha, P, rng):
    """
    Draw N with the (0,0,0) split integrated out: N - x0 ~ NB(x0, 1 - p000)
    under the 1/N prior. Used when alpha4 is pinned at 0, where the
    conditional above would hold N fixed.
    """
    p000 = cell_probabilities(alpha, P)[(0, 0, 0)]
    if p000 >= 1.0:
        raise ModelSpecificationError("The unobserved cell has probability 1")
    rate = rng.gamma(counts.x0, p000 / (1.0 - p000))
    return int(counts.x0 + rng.poisson(rate))


def multinomial_loglik(counts, N, alpha, P):
    """Log of the multinomial likelihood of the observed cells at fixed P"""
    if N < counts.x0:
        return -np.inf
    probs = cell_probabilities(alpha, P)
    observed = [counts.cell(*cell) for cell in CELLS[:-1]] + [N - counts.x0]
    coef = gammaln(N + 1) - sum(gammaln(x + 1) for x in observed)
    return coef + sum(xlogy(x, probs[cell]) for x, cell in zip(observed, CELLS))


@dataclass(frozen=True)
class MonteCarloLikelihood:
    log_likelihood: float
    std_error: float  # standard error of log_likelihood (delta method)
    draws: int


def sample_generalized_logistic(delta, rng, size=None):
    """b ~ generalized logistic type-I(delta): logistic(b) ~ Beta(delta, 1)"""
    u = np.clip(rng.power(delta, size=size), PROB_FLOOR, PROB_CEIL)
    return logit(u)


def marginal_loglik_mc(counts, N, alpha, delta, draws, rng, fixed_effects=None):
    """
    Monte-Carlo estimate of the marginal log-likelihood of (N, alpha, delta):
    the multinomial likelihood averaged over random effects b_l drawn from
    their generalized logistic laws. A reference value only; the sampler
    never calls it. fixed_effects short-circuits the integral.
    """
    if draws < 1:
        raise CountsValidationError("Need at least one Monte-Carlo draw")
    if fixed_effects is not None:
        return MonteCarloLikelihood(float(multinomial_loglik(counts, N, alpha, fixed_effects.P)), 0.0, 0)

    P = [np.clip(expit(sample_generalized_logistic(d, rng, size=draws)), PROB_FLOOR, PROB_CEIL)
         for d in delta.as_tuple()]
    logs = multinomial_loglik(counts, N, alpha, P)
    log_mean = float(logsumexp(logs) - np.log(draws))
    weights = np.exp(logs - logs.max())
    rel_se = weights.std(ddof=1) / (weights.mean() * np.sqrt(draws)) if draws > 1 else np.inf
    return MonteCarloLikelihood(log_mean, float(rel_se), draws)


DEFAULT_INITIAL_ALPHA = AlphaVector(0.1, 0.1, 0.1, 0.1)
DEFAULT_INITIAL_DELTA = DeltaVector(1.0, 1.0, 1.0)


def initialize_state(counts, prior, rng, method='default'):
    """
    Starting latent state and random effects.
    default: every individual causally independent, no unobserved
    individuals, b = 0. random: dispersed start with b ~ Normal(0, 1.5),
    roughly x0 unobserved individuals and splits drawn under alpha = 0.1.
    """
    if method == 'default':
        latent = LatentCounts(
            y111=(counts.x111, 0, 0, 0, 0),
            binary=_mixed_cells(counts),
            y000=(0, 0, 0, 0, 0),
        )
        return latent, RandomEffects.from_effects((0.0, 0.0, 0.0))

    effects = RandomEffects.from_effects(rng.normal(0.0, 1.5, size=3))
    alpha = np.array(DEFAULT_INITIAL_ALPHA.simplex())
    alpha[[u for u in range(5) if u not in prior.active()]] = 0.0
    alpha[4] = 1.0 - alpha[:4].sum()
    N = counts.x0 + int(rng.poisson(counts.x0))
    latent = sample_latent(counts, N, AlphaVector.from_simplex(alpha), effects, rng)
    return latent, effects


def run_gibbs(counts, prior, config, rng=None):
    """
    Data-augmentation Gibbs sampler. Each sweep draws alpha, delta and N
    from their full conditionals, then the latent splits, then the random
    effects. Draws after burn-in are kept every `thin` sweeps. Submodels with
    alpha4 pinned draw N with the unobserved split integrated out.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    latent, effects = initialize_state(counts, prior, rng, method=config.init)
    N = counts.x0 + latent.unobserved
    collapsed = 4 in prior.pinned

    kept = config.retained
    N_draws = np.empty(kept, dtype=np.int64)
    alpha_draws = np.empty((kept, 4))
    delta_draws = np.empty((kept, 3))
    b_draws = np.empty((kept, 3))
    P_draws = np.empty((kept, 3))

    logger.info(f"Starting Gibbs run: {config.iterations} sweeps, burn-in {config.burn_in}, "
                f"thin {config.thin}, x0={counts.x0}, prior={prior.regime}")
    started = time.perf_counter()
    row = 0
    for t in range(config.iterations):
        alpha = sample_alpha(latent, counts, N, prior, rng)
        delta = sample_delta(effects, prior, rng)
        if collapsed:
            N = sample_population_size_collapsed(counts, alpha, effects.P, rng)
        else:
            N = sample_population_size(latent, counts, alpha.a4, effects.P[0], rng)
        latent = sample_latent(counts, N, alpha, effects, rng)
        effects = sample_effects(latent, counts, N, delta, rng)
        if config.debug:
            latent.check(counts, N)

        if t >= config.burn_in and (t - config.burn_in + 1) % config.thin == 0 and row < kept:
            N_draws[row] = N
            alpha_draws[row] = alpha.as_tuple()
            delta_draws[row] = delta.as_tuple()
            b_draws[row] = effects.b
            P_draws[row] = effects.P
            row += 1

    elapsed = time.perf_counter() - started
    logger.info(f"Gibbs run finished in {elapsed:.1f}s; {row} draws kept, "
                f"median N = {np.median(N_draws) if row else float('nan'):.0f}")
    return Chain(N=N_draws, alpha=alpha_draws, delta=delta_draws, b=b_draws, P=P_draws,
                 x0=counts.x0, config=config, prior=prior, elapsed=elapsed)


def _chain_job(job):
    counts, prior, config, seed_seq = job
    return run_gibbs(counts, prior, config, rng=np.random.default_rng(seed_seq))


def multi_chain(counts, prior, config, chains, workers=None):
    """
    Independent chains with streams spawned from config.seed. Chain 0 uses
    the configured start, the others start dispersed.
    """
    workers = workers or getattr(settings, 'TRS_WORKERS', 1)
    streams = np.random.SeedSequence(config.seed).spawn(chains)
    jobs = []
    for index, stream in enumerate(streams):
        chain_config = config if index == 0 else GibbsConfig(
            iterations=config.iterations, burn_in=config.burn_in, thin=config.thin,
            seed=config.seed, init='random', debug=config.debug,
        )
        jobs.append((counts, prior, chain_config, stream))

    if workers > 1 and chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_chain_job, jobs))
    return [_chain_job(job) for job in jobs]
