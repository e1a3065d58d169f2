import math
from unittest import skipUnless

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from capture_recapture.counts import CELL_NAMES
from capture_recapture.exceptions import CountsValidationError
from capture_recapture.posterior import rmae
from capture_recapture.sampler import AlphaVector, GibbsConfig, cell_probabilities
from capture_recapture.simulation import (
    DEPENDENCE_PRESETS,
    EffectFamily,
    EffectSpec,
    Scenario,
    ar_next_probability,
    gen_ar_misspec,
    gen_thbm,
    parse_preset,
    run_replications,
    standard_scenarios,
)


def assert_cells_match(test, counts, probs, n):
    """Every observed cell within four binomial standard errors of n * p"""
    for name in CELL_NAMES:
        p = probs[tuple(int(ch) for ch in name[1:])]
        se = math.sqrt(n * p * (1 - p))
        test.assertLess(abs(getattr(counts, name) - n * p), 4 * se + 1e-9, name)


class GeneratorTest(SimpleTestCase):
    """Test cases for the simulated data generators"""

    def test_full_copy_leaves_mixed_cells_empty(self):
        """Test that alpha4 = 1 only produces all-or-nothing capture histories"""
        effects = EffectSpec.glogistic((1.6, 1.2, 0.8))
        for seed in range(200):
            counts = gen_thbm(200, AlphaVector(0, 0, 0, 1), effects, np.random.default_rng(seed))
            self.assertEqual(counts.x0, counts.x111)

    def test_independent_fair_coins(self):
        """Test that b = 0 without dependence gives N / 8 per cell"""
        n = 100_000
        counts = gen_thbm(n, AlphaVector(0, 0, 0, 0), EffectSpec.degenerate((0, 0, 0)),
                          np.random.default_rng(1))
        probs = {cell: 0.125 for cell in ((1, 1, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1),
                                          (1, 0, 0), (0, 1, 0), (0, 0, 1))}
        assert_cells_match(self, counts, probs, n)

    def test_matches_cell_probabilities(self):
        """Test that fixed effects reproduce the THBM cell probabilities"""
        n = 200_000
        b = (0.5, -0.3, 1.0)
        alpha = DEPENDENCE_PRESETS['P3']
        counts = gen_thbm(n, alpha, EffectSpec.degenerate(b), np.random.default_rng(2))
        P = 1.0 / (1.0 + np.exp(-np.array(b)))
        assert_cells_match(self, counts, cell_probabilities(alpha, P), n)

    def test_per_dataset_effects_shared(self):
        """Test that per-dataset effects are drawn once"""
        spec = EffectSpec.glogistic((1.0, 1.0, 1.0), granularity='dataset')
        b = spec.draw(np.random.default_rng(3), 50)
        self.assertEqual(b.shape, (50, 3))
        self.assertTrue(np.all(b == b[0]))

    def test_invalid_population(self):
        """Test that an empty population is rejected"""
        with self.assertRaises(CountsValidationError):
            gen_thbm(0, AlphaVector(0, 0, 0, 0), EffectSpec.degenerate((0, 0, 0)), np.random.default_rng(0))

    def test_ar_rule(self):
        """Test the autoregressive capture probability update"""
        p = np.array([0.3, 0.3, 0.995])
        z = np.array([1, 0, 0])
        np.testing.assert_allclose(ar_next_probability(p, z), [0.99, 0.3, 0.99])

    def test_ar_uniform_first_list(self):
        """Test that uniform first-list probabilities catch half of the population"""
        n = 100_000
        counts = gen_ar_misspec(n, 'uniform', np.random.default_rng(4))
        caught = counts.x111 + counts.x110 + counts.x101 + counts.x100
        self.assertLess(abs(caught / n - 0.5), 4 * math.sqrt(0.25 / n))

    def test_ar_unknown_family(self):
        """Test that AR families are validated"""
        with self.assertRaises(CountsValidationError):
            gen_ar_misspec(100, 'beta11', np.random.default_rng(0))

    def test_effect_family_validation(self):
        """Test that effect family parameters are checked"""
        with self.assertRaises(CountsValidationError):
            EffectFamily('normal', (0.0, -1.0))
        with self.assertRaises(CountsValidationError):
            EffectFamily('cauchy', (0.0,))


class PresetTest(SimpleTestCase):
    """Test cases for the scenario catalogue"""

    def test_dependence_preset(self):
        """Test a THBM preset"""
        scenario = parse_preset('P1:delta1:N200', replications=10)
        self.assertEqual(scenario.true_n, 200)
        self.assertAlmostEqual(scenario.alpha.independent, 0.15)
        self.assertEqual(scenario.effects.shapes().as_tuple(), (1.6, 1.2, 0.8))

    def test_misspecified_effects_preset(self):
        """Test a random effect misspecification preset"""
        scenario = parse_preset('R4:P2:N500')
        self.assertEqual([f.kind for f in scenario.effects.families], ['normal'] * 3)
        self.assertIsNone(scenario.effects.shapes())

    def test_ar_preset_default_size(self):
        """Test that AR presets default to N = 500"""
        scenario = parse_preset('AR:beta42')
        self.assertEqual(scenario.true_n, 500)
        self.assertEqual(scenario.ar_family, 'beta42')
        self.assertIsNone(scenario.effects)

    def test_unknown_preset(self):
        """Test that malformed preset names are rejected"""
        for name in ('P7:delta1:N200', 'P1:delta6', 'R1:P1:N', 'AR:normal'):
            with self.assertRaises(CountsValidationError):
                parse_preset(name)

    def test_informative_prior_needs_shapes(self):
        """Test that the informative prior requires generalized logistic effects"""
        with self.assertRaises(CountsValidationError):
            parse_preset('R3:P1:N200').with_overrides(prior='informative')
        scenario = parse_preset('P5:delta4:N200').with_overrides(prior='informative')
        for weight in scenario.prior_spec().beta:
            self.assertAlmostEqual(weight, 1.6)

    def test_catalogue(self):
        """Test the size of the standard catalogue"""
        catalogue = standard_scenarios(replications=1)
        self.assertEqual(len(catalogue), 6 * 5 * 2 + 6 * 6 * 2 + 3 * 2)
        self.assertIn('P6:delta5:N500', catalogue)
        self.assertIn('AR:uniform:N200', catalogue)

    def test_scenario_round_trip(self):
        """Test that a scenario survives its JSON form"""
        scenario = parse_preset('R6:P4:N200', replications=3).with_overrides(
            estimators=('sc', 'llm'))
        self.assertEqual(Scenario.from_dict(scenario.as_dict()).as_dict(), scenario.as_dict())

    def test_scenario_needs_one_mechanism(self):
        """Test that THBM effects and an AR family are mutually exclusive"""
        with self.assertRaises(CountsValidationError):
            Scenario('bad', 100, 1, alpha=AlphaVector(0, 0, 0, 0),
                     effects=EffectSpec.degenerate((0, 0, 0)), ar_family='uniform', estimators=('sc',))


class ReplicationTest(SimpleTestCase):
    """Test cases for the replication engine"""

    def setUp(self):
        self.scenario = parse_preset('P2:delta2:N200', replications=5).with_overrides(
            estimators=('sc', 'llm', 'independent'), bootstrap=100)

    def test_bookkeeping(self):
        """Test that every replicate is used, failed or infeasible"""
        report = run_replications(self.scenario, seed=1, workers=1)
        for summary in report.summaries:
            self.assertEqual(summary.used + summary.failures + summary.infeasible, 5)
        self.assertEqual(len(report.outcomes), 15)

    def test_deterministic(self):
        """Test that the seed fixes the whole study"""
        first = run_replications(self.scenario, seed=9, workers=1)
        second = run_replications(self.scenario, seed=9, workers=1)
        self.assertEqual(first.as_dict(), second.as_dict())

    def test_rmae_from_outcomes(self):
        """Test that the reported RMAE is computed over the usable replicates"""
        report = run_replications(self.scenario, seed=2, workers=1)
        summary = report.summary('independent')
        used = [o.n_hat for o in report.outcomes if o.method == 'independent' and o.feasible and not o.failed]
        self.assertAlmostEqual(summary.rmae, rmae(used, 200))
        frame = report.to_frame()
        self.assertEqual(list(frame['method']), ['sc', 'llm', 'independent'])

    def test_thbm_replicate(self):
        """Test that THBM fits run inside a study"""
        scenario = self.scenario.with_overrides(
            replications=2, estimators=('thbm',),
            gibbs=GibbsConfig(iterations=600, burn_in=100, thin=5, seed=1))
        report = run_replications(scenario, seed=3, workers=1)
        summary = report.summary('thbm')
        self.assertEqual(summary.used, 2)
        self.assertLessEqual(summary.mean_ci_low, summary.mean_estimate)

    @skipUnless(settings.TRS_RUN_SLOW_TESTS, 'large Monte-Carlo sample')
    def test_million_fair_coins(self):
        """Test the independent fair-coin generator at a million individuals"""
        n = 1_000_000
        counts = gen_thbm(n, AlphaVector(0, 0, 0, 0), EffectSpec.degenerate((0, 0, 0)),
                          np.random.default_rng(5))
        for name in CELL_NAMES:
            self.assertLess(abs(getattr(counts, name) - n / 8), 4 * math.sqrt(n * 0.125 * 0.875))


@skipUnless(settings.TRS_RUN_SLOW_TESTS, 'long simulation study')
class SimulationStudyTest(SimpleTestCase):
    """Test cases for the frequentist behaviour of the estimators over 100 replicates"""

    gibbs = GibbsConfig(iterations=20_000, burn_in=2_000, thin=5, seed=1)

    def test_thbm_on_strong_heterogeneity(self):
        """Test THBM error and HPD coverage under P3 with delta = (1.6, 1.6, 1.6)"""
        scenario = parse_preset('P3:delta5:N500').with_overrides(estimators=('thbm',), gibbs=self.gibbs)
        summary = run_replications(scenario, seed=101).summary('thbm')
        self.assertLessEqual(summary.rmae, 0.07)
        self.assertGreaterEqual(summary.coverage, 90)

    def test_classical_undercoverage(self):
        """Test that independence and SC intervals miss N under P1 with delta = (0.8, 0.8, 0.8)"""
        scenario = parse_preset('P1:delta4:N200').with_overrides(estimators=('independent', 'sc'))
        report = run_replications(scenario, seed=102)
        self.assertLessEqual(report.summary('independent').coverage, 10)
        self.assertLessEqual(report.summary('sc').coverage, 40)

    def test_thbm_self_consistency(self):
        """Test THBM HPD coverage on data generated from the THBM itself at N = 2000"""
        scenario = parse_preset('P5:delta5:N2000').with_overrides(estimators=('thbm',), gibbs=self.gibbs)
        summary = run_replications(scenario, seed=103).summary('thbm')
        self.assertGreaterEqual(summary.coverage, 85)
