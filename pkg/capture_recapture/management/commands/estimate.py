from django.conf import settings

from capture_recapture.estimators import ESTIMATORS, parse_methods
from capture_recapture.services import EstimateService, counts_digest

from ._base import TrsCommand


class Command(TrsCommand):
    help = 'Classical population size estimates with bootstrap confidence intervals'
    command_name = 'estimate'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help='Built-in dataset name or path to a CSV/TSV/JSON table')
        parser.add_argument(
            '--methods',
            default=','.join(ESTIMATORS),
            help=f"Comma-separated subset of {', '.join(ESTIMATORS)}",
        )
        parser.add_argument('--bootstrap', type=int, help='Bootstrap replicates (default: TRS_BOOTSTRAP_REPLICATES)')
        parser.add_argument('--level', type=float, help='Interval level (default: TRS_CI_LEVEL)')
        parser.add_argument('--format', choices=['json', 'csv'], default='json', help='csv also writes a table')
        self.add_seed_argument(parser)
        self.add_workers_argument(parser)
        self.add_output_argument(parser)

    def run(self, **options):
        methods = parse_methods(options['methods'])
        seed = self.resolve_seed(options['seed'])
        B = options['bootstrap'] or getattr(settings, 'TRS_BOOTSTRAP_REPLICATES', 1000)
        level = options['level'] or getattr(settings, 'TRS_CI_LEVEL', 0.95)
        options.update(methods=','.join(methods), seed=seed, bootstrap=B, level=level)

        payload = self.record(
            options, seed, counts_digest(options['data']),
            lambda output_dir: EstimateService.run(options['data'], methods, output_dir, B=B, level=level,
                                                   seed=seed, workers=options['workers'],
                                                   fmt=options['format']),
        )

        self.stdout.write(self.style.SUCCESS(
            f"\n{payload['dataset']['name']} (x0 = {payload['dataset']['x0']}), "
            f"{B} bootstrap replicates, {level:.0%} intervals"
        ))
        self.stdout.write(f"{'method':<12}{'N':>10}{'MAE':>10}{'CI':>22}  extras")
        for row in payload['results']:
            ci = f"({self.fmt(row['ci_low'], 0)}, {self.fmt(row['ci_high'], 0)})"
            extras = ', '.join(f"{k}={v:.4g}" for k, v in sorted(row['extras'].items())
                               if isinstance(v, float))
            line = f"{row['method']:<12}{self.fmt(row['n_hat'], 0):>10}{self.fmt(row['mae']):>10}{ci:>22}  {extras}"
            if row['feasible']:
                self.stdout.write(line)
            else:
                self.stdout.write(self.style.WARNING(f"{line}  [infeasible: {row['note']}]"))
