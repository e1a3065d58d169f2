"""
Simulation studies: TRS data generators (the THBM mechanism and an
autoregressive misspecification), the scenario catalogue and a seeded,
optionally parallel replication engine.
"""
import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from django.conf import settings
from scipy.special import expit

from .counts import CELL_NAMES, TrsCounts
from .estimators import ESTIMATORS, bootstrap_ci, get_estimator
from .exceptions import CountsValidationError, TrsError
from .posterior import coverage_rate, hpd_interval, rmae
from .sampler import AlphaVector, DeltaVector, GibbsConfig, PriorSpec, run_gibbs

logger = logging.getLogger(__name__)

FAMILIES = ('glogistic', 'normal', 'gamma', 'degenerate')
GRANULARITIES = ('individual', 'dataset')
AR_FAMILIES = {
    'uniform': ('uniform', (0.0, 1.0)),
    'beta42': ('beta', (4.0, 2.0)),
    'beta22': ('beta', (2.0, 2.0)),
}
AR_STEP = 1.2
AR_CAP = 0.99
THBM = 'thbm'
DEFAULT_ESTIMATORS = (THBM, 'sc', 'llm', 'independent')


@dataclass(frozen=True)
class EffectFamily:
    kind: str
    params: Tuple[float, ...]

    def __post_init__(self):
        expected = {'glogistic': 1, 'normal': 2, 'gamma': 2, 'degenerate': 1}
        if self.kind not in expected:
            raise CountsValidationError(f"Unknown effect family '{self.kind}'. Choose from {', '.join(FAMILIES)}")
        if len(self.params) != expected[self.kind]:
            raise CountsValidationError(f"{self.kind} needs {expected[self.kind]} parameter(s), got {self.params}")
        if self.kind == 'glogistic' and self.params[0] <= 0:
            raise CountsValidationError("Generalized logistic shape must be positive")
        if self.kind == 'normal' and self.params[1] <= 0:
            raise CountsValidationError("Normal standard deviation must be positive")
        if self.kind == 'gamma' and min(self.params) <= 0:
            raise CountsValidationError("Gamma shape and scale must be positive")

    def draw(self, rng, size):
        if self.kind == 'glogistic':
            u = np.clip(rng.power(self.params[0], size=size), 1e-300, 1.0 - 1e-15)
            return np.log(u) - np.log1p(-u)
        if self.kind == 'normal':
            return rng.normal(self.params[0], self.params[1], size=size)
        if self.kind == 'gamma':
            return rng.gamma(self.params[0], self.params[1], size=size)
        return np.full(size, float(self.params[0]))


@dataclass(frozen=True)
class EffectSpec:
    """Law of the list effects b_l and whether they vary per individual or per dataset"""
    families: Tuple[EffectFamily, EffectFamily, EffectFamily]
    granularity: str = 'individual'

    def __post_init__(self):
        if len(self.families) != 3:
            raise CountsValidationError("One effect family per list is required")
        if self.granularity not in GRANULARITIES:
            raise CountsValidationError(f"Granularity must be one of {GRANULARITIES}, got '{self.granularity}'")

    @classmethod
    def glogistic(cls, delta, granularity='individual'):
        shapes = delta.as_tuple() if isinstance(delta, DeltaVector) else tuple(delta)
        return cls(tuple(EffectFamily('glogistic', (float(d),)) for d in shapes), granularity)

    @classmethod
    def degenerate(cls, b, granularity='dataset'):
        return cls(tuple(EffectFamily('degenerate', (float(v),)) for v in b), granularity)

    def draw(self, rng, n):
        """(n, 3) array of effects"""
        size = n if self.granularity == 'individual' else 1
        columns = [family.draw(rng, size) for family in self.families]
        b = np.column_stack(columns)
        return np.broadcast_to(b, (n, 3)) if size == 1 else b

    def shapes(self):
        """Generalized logistic shapes, when every list uses that family"""
        if all(f.kind == 'glogistic' for f in self.families):
            return DeltaVector(*(f.params[0] for f in self.families))
        return None

    def as_dict(self):
        return {'families': [{'kind': f.kind, 'params': list(f.params)} for f in self.families],
                'granularity': self.granularity}

    @classmethod
    def from_dict(cls, data):
        families = tuple(EffectFamily(f['kind'], tuple(float(p) for p in f['params']))
                         for f in data['families'])
        return cls(families, data.get('granularity', 'individual'))


def _tabulate(Z):
    """Observed TRS counts from an (n, 3) 0/1 capture matrix"""
    codes = 4 * Z[:, 0] + 2 * Z[:, 1] + Z[:, 2]
    tally = np.bincount(codes.astype(np.int64), minlength=8)
    return TrsCounts.from_sequence(int(tally[int(name[1:], 2)]) for name in CELL_NAMES)


def gen_thbm(true_n, alpha, effects, rng):
    """
    Simulate true_n individuals from THBM: latent statuses X_l ~ Bernoulli(P_l)
    with P_l = logistic(b_l); then a regime drawn from (1 - alpha0, alpha1..alpha4)
    copies statuses between lists. Individuals missed by all lists vanish.
    """
    if true_n < 1:
        raise CountsValidationError(f"Population size must be positive, got {true_n}")
    alpha = alpha if isinstance(alpha, AlphaVector) else AlphaVector(*alpha)

    P = expit(effects.draw(rng, true_n))
    X = (rng.random((true_n, 3)) < P).astype(np.int8)
    regime = rng.choice(5, size=true_n, p=np.roll(alpha.simplex(), 1))

    Z = X.copy()
    # 1: list 1 -> list 2; 2: list 2 -> list 3; 3: list 1 -> list 3; 4: list 1 -> both
    Z[regime == 1, 1] = X[regime == 1, 0]
    Z[regime == 2, 2] = X[regime == 2, 1]
    Z[regime == 3, 2] = X[regime == 3, 0]
    Z[regime == 4, 1] = X[regime == 4, 0]
    Z[regime == 4, 2] = X[regime == 4, 0]
    return _tabulate(Z)


def ar_next_probability(p, z):
    """Capture probability on the next list given the current one and its outcome"""
    return np.minimum(np.where(z == 1, AR_STEP, p), AR_CAP)


def gen_ar_misspec(true_n, p1_family, rng):
    """
    Autoregressive capture mechanism: P^(1) from p1_family, and each later
    list keeps the previous probability after a miss or jumps to 0.99 after
    a capture
    """
    if p1_family not in AR_FAMILIES:
        raise CountsValidationError(f"Unknown first-list family '{p1_family}'. Choose from {', '.join(AR_FAMILIES)}")
    kind, params = AR_FAMILIES[p1_family]
    p = rng.uniform(*params, size=true_n) if kind == 'uniform' else rng.beta(*params, size=true_n)

    Z = np.empty((true_n, 3), dtype=np.int8)
    for j in range(3):
        if j:
            p = ar_next_probability(p, Z[:, j - 1])
        Z[:, j] = rng.random(true_n) < p
    return _tabulate(Z)


@dataclass
class Scenario:
    name: str
    true_n: int
    replications: int
    alpha: Optional[AlphaVector] = None
    effects: Optional[EffectSpec] = None
    ar_family: Optional[str] = None
    estimators: Tuple[str, ...] = DEFAULT_ESTIMATORS
    gibbs: Optional[GibbsConfig] = None
    prior: str = 'jeffreys'
    level: float = 0.95
    bootstrap: Optional[int] = None

    def __post_init__(self):
        if self.replications < 1:
            raise CountsValidationError("A scenario needs at least one replication")
        if self.true_n < 1:
            raise CountsValidationError("True population size must be positive")
        if (self.ar_family is None) == (self.effects is None):
            raise CountsValidationError("A scenario uses either THBM effects or an AR first-list family")
        if self.effects is not None and self.alpha is None:
            raise CountsValidationError("THBM scenarios need a dependence vector")
        for method in self.estimators:
            if method != THBM:
                get_estimator(method)
        if self.prior not in ('jeffreys', 'informative'):
            raise CountsValidationError(f"Unknown prior '{self.prior}'")
        if self.prior == 'informative' and (self.effects is None or self.effects.shapes() is None):
            raise CountsValidationError("The informative prior is centred on generalized logistic shapes; "
                                        "this scenario has none")
        if self.bootstrap is None:
            self.bootstrap = getattr(settings, 'TRS_SIMULATION_BOOTSTRAP_REPLICATES', 200)
        if self.gibbs is None and THBM in self.estimators:
            self.gibbs = GibbsConfig()

    def prior_spec(self):
        if self.prior == 'informative':
            return PriorSpec.centred_on(self.alpha, self.effects.shapes())
        return PriorSpec.jeffreys()

    def generate(self, rng):
        if self.ar_family is not None:
            return gen_ar_misspec(self.true_n, self.ar_family, rng)
        return gen_thbm(self.true_n, self.alpha, self.effects, rng)

    def with_overrides(self, **changes):
        data = {**self.__dict__, **{k: v for k, v in changes.items() if v is not None}}
        return Scenario(**data)

    def as_dict(self):
        return {
            'name': self.name,
            'true_n': self.true_n,
            'replications': self.replications,
            'alpha': list(self.alpha.as_tuple()) if self.alpha else None,
            'effects': self.effects.as_dict() if self.effects else None,
            'ar_family': self.ar_family,
            'estimators': list(self.estimators),
            'gibbs': self.gibbs.as_dict() if self.gibbs else None,
            'prior': self.prior,
            'level': self.level,
            'bootstrap': self.bootstrap,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            gibbs = data.get('gibbs')
            return cls(
                name=data.get('name', 'custom'),
                true_n=int(data['true_n']),
                replications=int(data.get('replications', 100)),
                alpha=AlphaVector(*data['alpha']) if data.get('alpha') is not None else None,
                effects=EffectSpec.from_dict(data['effects']) if data.get('effects') else None,
                ar_family=data.get('ar_family'),
                estimators=tuple(data.get('estimators', DEFAULT_ESTIMATORS)),
                gibbs=GibbsConfig(**{k: v for k, v in gibbs.items() if k != 'debug'}) if gibbs else None,
                prior=data.get('prior', 'jeffreys'),
                level=float(data.get('level', 0.95)),
                bootstrap=data.get('bootstrap'),
            )
        except (KeyError, TypeError) as e:
            raise CountsValidationError(f"Invalid scenario definition: {e}") from e


DEPENDENCE_PRESETS = {
    'P1': AlphaVector(0.35, 0.15, 0.25, 0.10),
    'P2': AlphaVector(0.30, 0.30, 0.15, 0.10),
    'P3': AlphaVector(0.20, 0.10, 0.20, 0.10),
    'P4': AlphaVector(0.10, 0.20, 0.30, 0.20),
    'P5': AlphaVector(0.20, 0.20, 0.20, 0.20),
    'P6': AlphaVector(0.25, 0.15, 0.35, 0.10),
}

DELTA_GRID = (
    DeltaVector(1.6, 1.2, 0.8),
    DeltaVector(1.3, 1.7, 0.9),
    DeltaVector(1.0, 1.4, 1.8),
    DeltaVector(0.8, 0.8, 0.8),
    DeltaVector(1.6, 1.6, 1.6),
)

SIZES = (200, 500)


def _same(kind, *params):
    family = EffectFamily(kind, tuple(float(p) for p in params))
    return (family, family, family)


def _each(kind, *params):
    return tuple(EffectFamily(kind, tuple(float(p) for p in ps)) for ps in params)


EFFECT_PRESETS = {
    'R1': _same('glogistic', 1.6),
    'R2': _each('glogistic', (1.6,), (1.2,), (0.8,)),
    'R3': _same('normal', 0.5, 1.0),
    'R4': _each('normal', (0.5, 1.0), (0.0, 1.0), (-0.5, 1.0)),
    'R5': _same('gamma', 2.0, 0.5),
    'R6': _each('gamma', (2.0, 0.5), (1.0, 0.5), (0.5, 0.5)),
}

_PRESET = re.compile(
    r'^(?:(?P<p>P[1-6]):delta(?P<d>[1-5])'
    r'|(?P<r>R[1-6]):(?P<rp>P[1-6])'
    r'|AR:(?P<ar>uniform|beta42|beta22))'
    r'(?::N(?P<n>\d+))?$'
)


def parse_preset(name, replications=100, granularity='individual'):
    """
    Scenario from a preset name: P<k>:delta<d>:N<n>, R<r>:P<k>:N<n> or
    AR:<family>[:N<n>]. N defaults to 500.
    """
    match = _PRESET.match(name.strip())
    if not match:
        raise CountsValidationError(
            f"Unknown preset '{name}'. Use P<1-6>:delta<1-5>:N<n>, R<1-6>:P<1-6>:N<n> or AR:<family>[:N<n>]"
        )
    true_n = int(match.group('n') or 500)
    if match.group('p'):
        delta = DELTA_GRID[int(match.group('d')) - 1]
        return Scenario(name, true_n, replications, alpha=DEPENDENCE_PRESETS[match.group('p')],
                        effects=EffectSpec.glogistic(delta, granularity))
    if match.group('r'):
        return Scenario(name, true_n, replications, alpha=DEPENDENCE_PRESETS[match.group('rp')],
                        effects=EffectSpec(EFFECT_PRESETS[match.group('r')], granularity))
    return Scenario(name, true_n, replications, ar_family=match.group('ar'))


def standard_scenarios(replications=100):
    """Named catalogue of every preset scenario"""
    names = [f'{p}:delta{d}:N{n}' for p in DEPENDENCE_PRESETS for d in range(1, 6) for n in SIZES]
    names += [f'{r}:{p}:N{n}' for r in EFFECT_PRESETS for p in DEPENDENCE_PRESETS for n in SIZES]
    names += [f'AR:{family}:N{n}' for family in AR_FAMILIES for n in SIZES]
    return {name: parse_preset(name, replications) for name in names}


@dataclass
class ReplicateOutcome:
    index: int
    method: str
    n_hat: float
    ci_low: Optional[float]
    ci_high: Optional[float]
    feasible: bool
    failed: bool
    note: str = ''


@dataclass
class MethodSummary:
    method: str
    mean_estimate: Optional[float]
    rmae: Optional[float]
    coverage: Optional[float]
    mean_ci_low: Optional[float]
    mean_ci_high: Optional[float]
    used: int
    failures: int
    infeasible: int


@dataclass
class SimReport:
    scenario: dict
    seed: int
    summaries: List[MethodSummary]
    outcomes: List[ReplicateOutcome] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def summary(self, method):
        for row in self.summaries:
            if row.method == method:
                return row
        raise KeyError(method)

    def as_dict(self):
        return {
            'scenario': self.scenario,
            'seed': self.seed,
            'summaries': [asdict(s) for s in self.summaries],
            'metadata': self.metadata,
        }

    def to_frame(self):
        """One row per estimator: mean estimate, RMAE, CP and mean interval"""
        return pd.DataFrame([asdict(s) for s in self.summaries],
                            columns=['method', 'mean_estimate', 'rmae', 'coverage', 'mean_ci_low',
                                     'mean_ci_high', 'used', 'failures', 'infeasible'])


def _thbm_outcome(index, counts, scenario, seed_seq):
    chain = run_gibbs(counts, scenario.prior_spec(), scenario.gibbs, rng=np.random.default_rng(seed_seq))
    draws = chain.draws('N')
    low, high = hpd_interval(draws, scenario.level)
    return ReplicateOutcome(index, THBM, float(np.median(draws)), low, high, True, False)


def _classical_outcome(index, method, counts, scenario, seed):
    result = get_estimator(method)(counts)
    if not math.isfinite(result.n_hat):
        return ReplicateOutcome(index, method, result.n_hat, None, None, False, True, result.note)
    interval = bootstrap_ci(method, counts, B=scenario.bootstrap, level=scenario.level,
                            seed=seed, workers=1, point=result.n_hat)
    return ReplicateOutcome(index, method, result.n_hat, interval.ci_low, interval.ci_high,
                            result.feasible, False, result.note)


def run_replicate(job):
    """Generate one dataset and apply every estimator of the scenario to it"""
    scenario, index, stream = job
    gen_seq, gibbs_seq, boot_seq = stream.spawn(3)
    outcomes = []
    try:
        counts = scenario.generate(np.random.default_rng(gen_seq))
    except TrsError as e:
        return [ReplicateOutcome(index, m, float('nan'), None, None, False, True, f'generation: {e}')
                for m in scenario.estimators]

    boot_seed = int(boot_seq.generate_state(1)[0])
    for method in scenario.estimators:
        try:
            if method == THBM:
                outcomes.append(_thbm_outcome(index, counts, scenario, gibbs_seq))
            else:
                outcomes.append(_classical_outcome(index, method, counts, scenario, boot_seed))
        except (TrsError, ArithmeticError) as e:
            logger.warning(f"Replicate {index}: {method} failed on {counts}: {e}")
            outcomes.append(ReplicateOutcome(index, method, float('nan'), None, None, False, True, str(e)))
    return outcomes


def summarize_outcomes(method, outcomes, true_n):
    """Infeasible and failed replicates are excluded from RMAE and coverage"""
    failures = sum(1 for o in outcomes if o.failed)
    infeasible = sum(1 for o in outcomes if not o.failed and not o.feasible)
    used = [o for o in outcomes if o.feasible and not o.failed]
    if not used:
        return MethodSummary(method, None, None, None, None, None, 0, failures, infeasible)
    estimates = [o.n_hat for o in used]
    intervals = [(o.ci_low, o.ci_high) for o in used]
    return MethodSummary(
        method=method,
        mean_estimate=float(np.mean(estimates)),
        rmae=rmae(estimates, true_n),
        coverage=coverage_rate(intervals, true_n),
        mean_ci_low=float(np.mean([low for low, _ in intervals])),
        mean_ci_high=float(np.mean([high for _, high in intervals])),
        used=len(used),
        failures=failures,
        infeasible=infeasible,
    )


def run_replications(scenario, seed, workers=None):
    """
    Run every replication of a scenario; deterministic in seed for any
    worker count. Estimator failures are counted, never fatal.
    """
    workers = workers or getattr(settings, 'TRS_WORKERS', 1)
    streams = np.random.SeedSequence(seed).spawn(scenario.replications)
    jobs = [(scenario, index, stream) for index, stream in enumerate(streams)]

    logger.info(f"Simulating {scenario.name}: {scenario.replications} replications of N={scenario.true_n}, "
                f"estimators {', '.join(scenario.estimators)}, workers={workers}")
    started = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(run_replicate, jobs))
    else:
        batches = []
        for job in jobs:
            batches.append(run_replicate(job))
            if (job[1] + 1) % 10 == 0:
                logger.info(f"{scenario.name}: {job[1] + 1}/{scenario.replications} replications done")

    outcomes = sorted((o for batch in batches for o in batch), key=lambda o: (o.index, o.method))
    summaries = [summarize_outcomes(m, [o for o in outcomes if o.method == m], scenario.true_n)
                 for m in scenario.estimators]
    for s in summaries:
        if s.failures or s.infeasible:
            logger.warning(f"{scenario.name}: {s.method} failed {s.failures} and was infeasible "
                           f"{s.infeasible} time(s) out of {scenario.replications}")

    metadata = {
        'granularity': scenario.effects.granularity if scenario.effects else 'autoregressive',
        'bootstrap_replicates': scenario.bootstrap,
        'level': scenario.level,
    }
    logger.info(f"{scenario.name} finished in {time.perf_counter() - started:.1f}s")
    return SimReport(scenario=scenario.as_dict(), seed=seed, summaries=summaries,
                     outcomes=outcomes, metadata=metadata)


def known_methods():
    return (THBM,) + tuple(ESTIMATORS)
