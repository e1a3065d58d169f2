import json
from pathlib import Path

from capture_recapture.exceptions import CountsValidationError
from capture_recapture.services import FitService, SimulationService, payload_digest
from capture_recapture.simulation import EffectSpec, Scenario, known_methods, parse_preset, standard_scenarios

from ._base import TrsCommand


class Command(TrsCommand):
    help = 'Run a simulation study: generate TRS data repeatedly and compare estimators'
    command_name = 'simulate'

    def add_arguments(self, parser):
        parser.add_argument('--preset', help='P<k>:delta<d>:N<n>, R<r>:P<k>:N<n> or AR:<uniform|beta42|beta22>[:N<n>]')
        parser.add_argument('--scenario', help='Scenario JSON file')
        parser.add_argument('--list-presets', action='store_true', help='Print every preset name and exit')
        parser.add_argument('--reps', type=int, help='Replications (default: 100, or the scenario file value)')
        parser.add_argument('--estimators', help=f"Comma-separated subset of {', '.join(known_methods())}")
        parser.add_argument('--prior', choices=['jeffreys', 'informative'], help='Prior for the THBM fits')
        parser.add_argument('--granularity', choices=['individual', 'dataset'],
                            help='Draw effects per individual (default) or once per dataset')
        parser.add_argument('--iters', type=int, help='Gibbs sweeps per THBM fit')
        parser.add_argument('--burnin', type=int, help='Discarded sweeps per THBM fit')
        parser.add_argument('--thin', type=int, help='Thinning of the THBM chains')
        parser.add_argument('--bootstrap', type=int, help='Bootstrap replicates for competitor intervals')
        self.add_seed_argument(parser)
        self.add_workers_argument(parser)
        self.add_output_argument(parser)

    def run(self, **options):
        if options['list_presets']:
            for name in standard_scenarios(replications=1):
                self.stdout.write(name)
            return

        scenario = self.load_scenario(options)
        seed = self.resolve_seed(options['seed'])
        options.update(seed=seed)
        self.stdout.write(self.style.SUCCESS(
            f"Simulating {scenario.name}: N={scenario.true_n}, {scenario.replications} replications"
        ))

        report = self.record(
            options, seed, payload_digest(scenario.as_dict()),
            lambda output_dir: SimulationService.run(scenario, seed, output_dir, workers=options['workers']),
        )

        self.stdout.write(f"\n{'method':<12}{'mean N':>10}{'RMAE':>8}{'CP %':>8}{'mean CI':>20}{'used':>6}"
                          f"{'failed':>8}{'infeas.':>8}")
        for row in report.summaries:
            ci = (f"({row.mean_ci_low:.0f}, {row.mean_ci_high:.0f})" if row.mean_ci_low is not None else '-')
            self.stdout.write(
                f"{row.method:<12}{self.fmt(row.mean_estimate):>10}{self.fmt(row.rmae, 3):>8}"
                f"{self.fmt(row.coverage):>8}{ci:>20}{row.used:>6}{row.failures:>8}{row.infeasible:>8}"
            )

    def load_scenario(self, options):
        if bool(options['preset']) == bool(options['scenario']):
            raise CountsValidationError("Give exactly one of --preset or --scenario")
        if options['preset']:
            scenario = parse_preset(options['preset'], replications=options['reps'] or 100,
                                    granularity=options['granularity'] or 'individual')
        else:
            try:
                scenario = Scenario.from_dict(json.loads(Path(options['scenario']).read_text()))
            except (OSError, json.JSONDecodeError) as e:
                raise CountsValidationError(f"Could not read scenario {options['scenario']}: {e}") from e
            if options['granularity'] and scenario.effects is not None:
                scenario = scenario.with_overrides(
                    effects=EffectSpec(scenario.effects.families, options['granularity']))

        estimators = None
        if options['estimators']:
            estimators = tuple(m.strip() for m in options['estimators'].split(',') if m.strip())
            unknown = [m for m in estimators if m not in known_methods()]
            if unknown:
                raise CountsValidationError(f"Unknown estimator(s): {', '.join(unknown)}")

        gibbs = scenario.gibbs
        if any(options[k] is not None for k in ('iters', 'burnin', 'thin')):
            gibbs = FitService.build_config(options['iters'], options['burnin'], options['thin'])
        return scenario.with_overrides(
            replications=options['reps'] if options['scenario'] else None,
            estimators=estimators,
            prior=options['prior'],
            gibbs=gibbs,
            bootstrap=options['bootstrap'],
        )
