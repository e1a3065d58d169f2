import math
from unittest import skipUnless

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase
from scipy import stats

from capture_recapture.counts import TrsCounts, builtin_dataset
from capture_recapture.exceptions import CountsValidationError, ModelSpecificationError
from capture_recapture.posterior import hpd_interval, ir_rate, ur_rate
from capture_recapture.sampler import (
    CELLS,
    AlphaVector,
    DeltaVector,
    GibbsConfig,
    LatentCounts,
    PriorSpec,
    RandomEffects,
    cell_probabilities,
    initialize_state,
    latent_split_probabilities,
    marginal_loglik_mc,
    multi_chain,
    multinomial_loglik,
    run_gibbs,
    sample_alpha,
    sample_delta,
    sample_effects,
    sample_generalized_logistic,
    sample_latent,
    sample_population_size,
    sample_population_size_collapsed,
)


class ParameterTypesTest(SimpleTestCase):
    """Test cases for the THBM parameter value types"""

    def test_alpha_simplex(self):
        """Test alpha0 and the independent share"""
        alpha = AlphaVector(0.35, 0.15, 0.25, 0.10)
        self.assertAlmostEqual(alpha.alpha0, 0.85)
        self.assertAlmostEqual(alpha.independent, 0.15)
        self.assertAlmostEqual(float(alpha.simplex().sum()), 1.0)

    def test_alpha_outside_simplex(self):
        """Test that weights summing above one are rejected"""
        with self.assertRaises(ModelSpecificationError):
            AlphaVector(0.5, 0.5, 0.5, 0.0)
        with self.assertRaises(ModelSpecificationError):
            AlphaVector(-0.1, 0.0, 0.0, 0.0)

    def test_delta_positive(self):
        """Test that shapes must be positive"""
        with self.assertRaises(ModelSpecificationError):
            DeltaVector(1.0, 0.0, 1.0)

    def test_gibbs_config_defaults(self):
        """Test that burn-in defaults to a tenth of the sweeps"""
        config = GibbsConfig(iterations=1000, thin=10, seed=1)
        self.assertEqual(config.burn_in, 100)
        self.assertEqual(config.retained, 90)

    def test_gibbs_config_invalid(self):
        """Test that burn-in must stay below the number of sweeps"""
        with self.assertRaises(CountsValidationError):
            GibbsConfig(iterations=100, burn_in=100, thin=1, seed=1)
        with self.assertRaises(CountsValidationError):
            GibbsConfig(iterations=100, burn_in=10, thin=0, seed=1)

    def test_submodel_pins(self):
        """Test which dependence weights each reduction holds at zero"""
        self.assertEqual(PriorSpec.jeffreys('thbm').active(), [0, 1, 2, 3, 4])
        self.assertEqual(PriorSpec.jeffreys('tbm1').active(), [0, 1, 3, 4])
        self.assertEqual(PriorSpec.jeffreys('tbm2').active(), [0, 1, 2, 4])
        self.assertEqual(PriorSpec.jeffreys('mt').active(), [4])
        with self.assertRaises(CountsValidationError):
            PriorSpec.jeffreys('mtbh')

    def test_centred_prior(self):
        """Test the informative prior centred on a known configuration"""
        prior = PriorSpec.centred_on(AlphaVector(0.2, 0.2, 0.2, 0.2), DeltaVector(1.0, 2.0, 4.0))
        for weight in prior.beta:
            self.assertAlmostEqual(weight, 1.6)
        means = np.array(prior.gamma) * np.array(prior.lam)
        np.testing.assert_allclose(means, [1.0, 2.0, 4.0])


class CellProbabilitiesTest(SimpleTestCase):
    """Test cases for the THBM cell probabilities"""

    def test_sum_to_one(self):
        """Test that the eight cells form a distribution at random parameter points"""
        rng = np.random.default_rng(11)
        for _ in range(1000):
            weights = rng.dirichlet(np.ones(5))
            P = rng.uniform(0.01, 0.99, size=3)
            probs = cell_probabilities(AlphaVector.from_simplex(weights), P)
            self.assertAlmostEqual(sum(probs.values()), 1.0, places=12)
            self.assertTrue(all(p >= 0 for p in probs.values()))

    def test_independent_case(self):
        """Test that alpha = 0 gives products of marginal probabilities"""
        P = (0.3, 0.6, 0.8)
        probs = cell_probabilities((0, 0, 0, 0), P)
        self.assertAlmostEqual(probs[(1, 0, 1)], 0.3 * 0.4 * 0.8)
        self.assertAlmostEqual(probs[(0, 0, 0)], 0.7 * 0.4 * 0.2)

    def test_full_copy_regime(self):
        """Test that alpha4 = 1 leaves only the all-or-nothing cells"""
        probs = cell_probabilities((0, 0, 0, 1), (0.4, 0.5, 0.6))
        self.assertAlmostEqual(probs[(1, 1, 1)], 0.4)
        self.assertAlmostEqual(probs[(0, 0, 0)], 0.6)
        for cell in CELLS[1:-1]:
            self.assertEqual(probs[cell], 0.0)

    def test_array_probabilities(self):
        """Test that arrays of P draws give arrays of cell probabilities"""
        P = [np.full(5, 0.5)] * 3
        probs = cell_probabilities((0.1, 0.1, 0.1, 0.1), P)
        self.assertEqual(probs[(1, 1, 1)].shape, (5,))

    def test_probability_bounds(self):
        """Test that capture probabilities on the boundary are rejected"""
        with self.assertRaises(ModelSpecificationError):
            cell_probabilities((0, 0, 0, 0), (0.0, 0.5, 0.5))


class LatentStepTest(SimpleTestCase):
    """Test cases for the latent split and the full conditionals"""

    def setUp(self):
        self.counts, _ = builtin_dataset('ld_all')
        self.rng = np.random.default_rng(5)
        self.alpha = AlphaVector(0.1, 0.1, 0.1, 0.1)
        self.effects = RandomEffects.from_probabilities((0.4, 0.3, 0.7))

    def test_latent_preserves_totals(self):
        """Test that splits add back up to the observed cells and N - x0"""
        latent = sample_latent(self.counts, 1000, self.alpha, self.effects, self.rng)
        latent.check(self.counts, 1000)
        self.assertEqual(sum(latent.y111), 155)
        self.assertEqual(latent.unobserved, 220)

    def test_dirichlet_exponents_count_everyone(self):
        """Test that every augmented individual lands in exactly one regime"""
        latent = sample_latent(self.counts, 1000, self.alpha, self.effects, self.rng)
        self.assertEqual(latent.dirichlet_exponents(self.counts).sum(), 1000)

    def test_capture_exponents_cover_population(self):
        """Test that caught plus missed equals N on every list"""
        latent = sample_latent(self.counts, 1000, self.alpha, self.effects, self.rng)
        m, n = latent.capture_exponents(self.counts, 1000)
        np.testing.assert_array_equal(m + n, [1000, 1000, 1000])

    def test_zero_probability_cell_with_data(self):
        """Test that data in a cell impossible under the parameters is an error"""
        with self.assertRaises(ModelSpecificationError):
            sample_latent(self.counts, 1000, AlphaVector(0, 0, 0, 1), self.effects, self.rng)

    def test_split_probabilities_are_distributions(self):
        """Test that the 111 and 000 splits are normalized"""
        split = latent_split_probabilities(self.alpha, self.effects.P)
        self.assertAlmostEqual(float(split.q111.sum()), 1.0)
        self.assertAlmostEqual(float(split.q000.sum()), 1.0)
        self.assertTrue(all(0 <= q <= 1 for q in split.binary))

    def test_n_below_x0(self):
        """Test that N may not fall below the observed count"""
        with self.assertRaises(ModelSpecificationError):
            sample_latent(self.counts, 700, self.alpha, self.effects, self.rng)

    def test_effects_concentrate(self):
        """Test that a heavily captured list gets P near m / (m + n)"""
        latent = LatentCounts(y111=(0, 0, 0, 0, 0), binary=(0, 0, 0, 0, 0, 0), y000=(0, 0, 0, 0, 0))
        counts = TrsCounts(0, 0, 0, 0, 10_000, 0, 0)
        draws = [sample_effects(latent, counts, 10_100, DeltaVector(1, 1, 1), self.rng).P[0]
                 for _ in range(200)]
        self.assertAlmostEqual(float(np.mean(draws)), 10_001 / 10_102, places=3)

    def test_alpha_respects_pinned(self):
        """Test that pinned weights stay at zero"""
        latent = sample_latent(self.counts, 1000, self.alpha, self.effects, self.rng)
        for _ in range(50):
            alpha = sample_alpha(latent, self.counts, 1000, PriorSpec.jeffreys('tbm2'), self.rng)
            self.assertEqual(alpha.a4, 0.0)
            alpha = sample_alpha(latent, self.counts, 1000, PriorSpec.jeffreys('mt'), self.rng)
            self.assertEqual(alpha.alpha0, 0.0)

    def test_alpha_dirichlet_mean(self):
        """Test the alpha draws against the Dirichlet mean"""
        latent = sample_latent(self.counts, 1000, self.alpha, self.effects, self.rng)
        prior = PriorSpec.jeffreys()
        d = latent.dirichlet_exponents(self.counts) + 0.5
        draws = np.array([sample_alpha(latent, self.counts, 1000, prior, self.rng).as_tuple()
                          for _ in range(4000)])
        np.testing.assert_allclose(draws.mean(axis=0), d[:4] / d.sum(), atol=0.005)

    def test_delta_jeffreys_mean(self):
        """Test that the delta draws are exponential with rate log(1 + exp(-b))"""
        effects = RandomEffects.from_effects((0.0, 1.0, -1.0))
        omega = np.log1p(np.exp(-np.array(effects.b)))
        draws = np.array([sample_delta(effects, PriorSpec.jeffreys(), self.rng).as_tuple()
                          for _ in range(20_000)])
        se = (1.0 / omega) / math.sqrt(len(draws))
        self.assertTrue(np.all(np.abs(draws.mean(axis=0) - 1.0 / omega) < 4 * se))

    def test_population_size_mean(self):
        """Test the negative binomial draw of N"""
        latent = LatentCounts(y111=(155, 0, 0, 0, 0), binary=(31, 45, 56, 131, 30, 332), y000=(0, 0, 0, 0, 0))
        q = 0.3 * (1 - 0.4)
        draws = np.array([sample_population_size(latent, self.counts, 0.3, 0.4, self.rng)
                          for _ in range(20_000)])
        mean = 780 / (1 - q)
        se = math.sqrt(780 * q / (1 - q) ** 2 / len(draws))
        self.assertTrue(np.all(draws >= 780))
        self.assertLess(abs(draws.mean() - mean), 4 * se)

    def test_population_size_without_full_copy(self):
        """Test that N is fixed by the latent state when alpha4 = 0"""
        latent = LatentCounts(y111=(155, 0, 0, 0, 0), binary=(31, 45, 56, 131, 30, 332), y000=(4, 3, 2, 1, 9))
        self.assertEqual(sample_population_size(latent, self.counts, 0.0, 0.4, self.rng), 790)

    def test_collapsed_population_size_mean(self):
        """Test N - x0 ~ NB(x0, 1 - p000) when the unobserved split is integrated out"""
        draws = np.array([sample_population_size_collapsed(self.counts, (0, 0, 0, 0), (0.5, 0.5, 0.5), self.rng)
                          for _ in range(20_000)])
        p000 = 0.125
        mean = 780 * p000 / (1 - p000)
        se = math.sqrt(780 * p000 / (1 - p000) ** 2 / len(draws))
        self.assertLess(abs((draws - 780).mean() - mean), 4 * se)


class GeneralizedLogisticTest(SimpleTestCase):
    """Test cases for the random effect law and the marginal likelihood"""

    def test_matches_reference_law(self):
        """Test the generalized logistic sampler against its reference density"""
        rng = np.random.default_rng(21)
        draws = sample_generalized_logistic(1.7, rng, size=20_000)
        result = stats.kstest(draws, stats.genlogistic(c=1.7).cdf)
        self.assertLess(result.statistic, 0.02)

    EFFECT_SETTINGS = (
        (TrsCounts(0, 0, 0, 0, 3, 0, 0), 8, 0.8),
        (TrsCounts(0, 0, 0, 0, 40, 0, 0), 50, 1.6),
        (TrsCounts(0, 0, 0, 0, 0, 0, 7), 7, 2.5),
    )

    def _effect_ks(self, counts, N, shape, size, seed):
        latent = LatentCounts(y111=(0, 0, 0, 0, 0), binary=(0, 0, 0, 0, 0, 0), y000=(0, 0, 0, 0, 0))
        delta = DeltaVector(shape, 1.0, 1.0)
        rng = np.random.default_rng(seed)
        b = np.array([sample_effects(latent, counts, N, delta, rng).b[0] for _ in range(size)])
        caught = counts.x111 + counts.x110 + counts.x101 + counts.x100
        law = stats.beta(caught + shape, N - caught + 1)
        return stats.kstest(b, lambda z: law.cdf(1.0 / (1.0 + np.exp(-z)))).statistic

    def test_effect_draws_follow_logit_beta(self):
        """Test b_1 draws against the logit of Beta(m + delta, n + 1)"""
        for i, (counts, N, shape) in enumerate(self.EFFECT_SETTINGS):
            with self.subTest(N=N, delta=shape):
                self.assertLess(self._effect_ks(counts, N, shape, 20_000, 40 + i), 0.02)

    @skipUnless(settings.TRS_RUN_SLOW_TESTS, 'long Monte-Carlo run')
    def test_effect_draws_follow_logit_beta_tight(self):
        """Test b_1 draws against the logit-Beta law on 100000 draws each"""
        for i, (counts, N, shape) in enumerate(self.EFFECT_SETTINGS):
            with self.subTest(N=N, delta=shape):
                self.assertLess(self._effect_ks(counts, N, shape, 100_000, 50 + i), 0.01)

    def test_marginal_likelihood_all_captured(self):
        """Test the Monte-Carlo likelihood against E[P1^x P2^x P3^x]"""
        counts = TrsCounts(5, 0, 0, 0, 0, 0, 0)
        delta = DeltaVector(1.0, 1.0, 1.0)
        result = marginal_loglik_mc(counts, 5, (0, 0, 0, 0), delta, 200_000, np.random.default_rng(3))
        exact = 3 * math.log(1.0 / 6.0)
        self.assertAlmostEqual(result.log_likelihood, exact, delta=0.07)

    def test_marginal_likelihood_full_copy(self):
        """Test that with alpha4 = 1 only list 1 matters"""
        counts = TrsCounts(5, 0, 0, 0, 0, 0, 0)
        delta = DeltaVector(2.0, 1.0, 1.0)
        result = marginal_loglik_mc(counts, 5, (0, 0, 0, 1), delta, 100_000, np.random.default_rng(4))
        self.assertAlmostEqual(result.log_likelihood, math.log(2.0 / 7.0), delta=0.02)

    def test_fixed_effects_short_circuit(self):
        """Test that fixed effects give the plain multinomial likelihood"""
        counts, _ = builtin_dataset('hav')
        effects = RandomEffects.from_probabilities((0.3, 0.3, 0.3))
        result = marginal_loglik_mc(counts, 600, (0.1, 0, 0, 0), DeltaVector(1, 1, 1), 10,
                                    np.random.default_rng(0), fixed_effects=effects)
        self.assertEqual(result.draws, 0)
        self.assertAlmostEqual(result.log_likelihood,
                               multinomial_loglik(counts, 600, (0.1, 0, 0, 0), effects.P))

    def test_likelihood_below_x0(self):
        """Test that N below x0 has zero likelihood"""
        counts, _ = builtin_dataset('hav')
        self.assertEqual(multinomial_loglik(counts, 100, (0, 0, 0, 0), (0.5, 0.5, 0.5)), -np.inf)


class GibbsRunTest(SimpleTestCase):
    """Test cases for whole Gibbs runs"""

    def setUp(self):
        self.counts, _ = builtin_dataset('ld_north')
        self.config = GibbsConfig(iterations=1200, burn_in=200, thin=2, seed=42, debug=True)

    def test_chain_shape_and_support(self):
        """Test retained draws and parameter supports"""
        chain = run_gibbs(self.counts, PriorSpec.jeffreys(), self.config)
        self.assertEqual(len(chain), 500)
        self.assertTrue(np.all(chain.N >= self.counts.x0))
        self.assertTrue(np.all(chain.draws('alpha0') <= 1.0 + 1e-12))
        self.assertTrue(np.all((chain.P > 0) & (chain.P < 1)))
        self.assertTrue(np.all(chain.delta > 0))
        self.assertEqual(list(chain.to_frame().columns)[0], 'N')

    def test_same_seed_same_chain(self):
        """Test that a seed fixes the chain"""
        first = run_gibbs(self.counts, PriorSpec.jeffreys(), self.config)
        second = run_gibbs(self.counts, PriorSpec.jeffreys(), self.config)
        np.testing.assert_array_equal(first.N, second.N)
        np.testing.assert_array_equal(first.alpha, second.alpha)

    def test_mt_submodel(self):
        """Test that the M_t reduction never leaves the independent regime"""
        chain = run_gibbs(self.counts, PriorSpec.jeffreys('mt'), self.config)
        self.assertTrue(np.all(chain.alpha == 0.0))
        self.assertGreater(np.ptp(chain.N), 0)

    def test_unknown_draw_name(self):
        """Test that draw names are validated"""
        chain = run_gibbs(self.counts, PriorSpec.jeffreys(), self.config)
        with self.assertRaises(KeyError):
            chain.draws('alpha7')

    def test_random_start(self):
        """Test the dispersed initial state"""
        latent, effects = initialize_state(self.counts, PriorSpec.jeffreys(), np.random.default_rng(1), 'random')
        latent.check(self.counts, self.counts.x0 + latent.unobserved)

    def test_multi_chain(self):
        """Test that extra chains start dispersed and differ"""
        chains = multi_chain(self.counts, PriorSpec.jeffreys(), self.config, chains=2, workers=1)
        self.assertEqual([c.config.init for c in chains], ['default', 'random'])
        self.assertFalse(np.array_equal(chains[0].N, chains[1].N))

    @skipUnless(settings.TRS_RUN_SLOW_TESTS, 'long MCMC run')
    def test_national_ld_posterior(self):
        """Test the national Legionnaires' disease posterior median and HPD interval"""
        counts, _ = builtin_dataset('ld_all')
        chain = run_gibbs(counts, PriorSpec.jeffreys(), GibbsConfig(iterations=200_000, thin=10, seed=7))
        self.assertTrue(1050 <= np.median(chain.N) <= 1180)
        low, high = hpd_interval(chain.N, 0.95)
        self.assertAlmostEqual(low, 940, delta=0.08 * 940)
        self.assertAlmostEqual(high, 1335, delta=0.08 * 1335)

    @skipUnless(settings.TRS_RUN_SLOW_TESTS, 'long MCMC run')
    def test_hav_posterior(self):
        """Test the hepatitis A posterior median and under-reporting rate"""
        counts, _ = builtin_dataset('hav')
        chain = run_gibbs(counts, PriorSpec.jeffreys(), GibbsConfig(iterations=500_000, thin=10, seed=11))
        median = float(np.median(chain.N))
        self.assertTrue(570 <= median <= 700)
        self.assertTrue(54 <= ur_rate(median, counts.x0) <= 60)

    @skipUnless(settings.TRS_RUN_SLOW_TESTS, 'long MCMC run')
    def test_regional_ld_rates(self):
        """Test incidence and under-reporting rates of the four Legionnaires' disease regions"""
        expected = {
            'ld_north': (5.7, 27),
            'ld_south': (7.9, 32),
            'ld_east': (7.1, 42),
            'ld_west': (6.5, 26),
        }
        for i, (name, (ir, ur)) in enumerate(expected.items()):
            with self.subTest(dataset=name):
                counts, meta = builtin_dataset(name)
                chain = run_gibbs(counts, PriorSpec.jeffreys(),
                                  GibbsConfig(iterations=200_000, thin=10, seed=30 + i))
                median = float(np.median(chain.N))
                self.assertAlmostEqual(ir_rate(median, meta.inhabitants), ir, delta=0.5)
                self.assertAlmostEqual(ur_rate(median, counts.x0), ur, delta=5)
