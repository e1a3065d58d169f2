from capture_recapture.counts import load_counts
from capture_recapture.exceptions import CountsValidationError
from capture_recapture.services import FitService, counts_digest

from ._base import TrsCommand

FIT_KEYS = ('data', 'prior', 'alpha_prior', 'delta_prior', 'submodel', 'iters', 'burnin', 'thin',
            'seed', 'chains', 'init', 'level', 'format', 'workers', 'debug')


class Command(TrsCommand):
    help = 'Fit the THBM by Gibbs sampling and summarize the posterior of N'
    command_name = 'fit'

    def add_arguments(self, parser):
        parser.add_argument('--data', help='Built-in dataset name or path to a CSV/TSV/JSON table')
        parser.add_argument('--prior', choices=['jeffreys', 'informative'], help='Prior regime (default: jeffreys)')
        parser.add_argument('--alpha-prior', help='Dirichlet weights b1..b5 for the informative prior')
        parser.add_argument('--delta-prior', help='Gamma shape,scale pairs g1,l1,g2,l2,g3,l3 for the informative prior')
        parser.add_argument('--submodel', choices=['thbm', 'tbm1', 'tbm2', 'mt'], help='Model or reduction (default: thbm)')
        parser.add_argument('--iters', type=int, help='Gibbs sweeps (default: TRS_GIBBS_ITERATIONS)')
        parser.add_argument('--burnin', type=int, help='Discarded sweeps (default: 10%% of --iters)')
        parser.add_argument('--thin', type=int, help='Keep every n-th sweep (default: TRS_GIBBS_THIN)')
        parser.add_argument('--chains', type=int, help='Independent chains; extra chains start dispersed')
        parser.add_argument('--init', choices=['default', 'random'], help='Starting state of the first chain')
        parser.add_argument('--level', type=float, help='HPD level (default: TRS_CI_LEVEL)')
        parser.add_argument('--format', choices=['json', 'svg'], help='svg also writes histogram figures')
        parser.add_argument('--config', help='JSON file with any of the options above')
        parser.add_argument('--debug', action='store_true', default=None,
                            help='Check the latent state invariants on every sweep')
        self.add_seed_argument(parser)
        self.add_workers_argument(parser)
        self.add_output_argument(parser)

    def run(self, **options):
        options = self.merge_config_file(options, FIT_KEYS)
        if not options.get('data'):
            raise CountsValidationError("--data is required")

        prior = FitService.build_prior(options.get('prior') or 'jeffreys', options.get('alpha_prior'),
                                       options.get('delta_prior'), options.get('submodel') or 'thbm')
        config = FitService.build_config(options.get('iters'), options.get('burnin'), options.get('thin'),
                                         self.resolve_seed(options.get('seed')),
                                         options.get('init') or 'default', bool(options.get('debug')))
        chains = options.get('chains') or 1
        level = options.get('level')
        fmt = options.get('format') or 'json'

        options.update(iters=config.iterations, burnin=config.burn_in, thin=config.thin, seed=config.seed,
                       chains=chains, init=config.init, format=fmt)
        counts, meta = load_counts(options['data'])
        self.stdout.write(self.style.SUCCESS(f"Fitting THBM to {meta.name}: {counts}"))

        summary = self.record(
            options, config.seed, counts_digest(options['data']),
            lambda output_dir: FitService.run(options['data'], prior, config, output_dir, chains=chains,
                                              level=level, fmt=fmt, workers=options.get('workers')),
        )
        self.print_summary(summary)

    def print_summary(self, summary):
        n = summary['N']
        self.stdout.write(f"\nPosterior of N ({summary['retained_draws']} draws)")
        self.stdout.write(f"  Median:   {n['median']:.1f}")
        self.stdout.write(f"  Mean:     {n['mean']:.1f}")
        self.stdout.write(f"  MAE:      {n['mae']:.1f}")
        self.stdout.write(f"  {n['level']:.0%} HPD:  ({n['hpd_low']:.0f}, {n['hpd_high']:.0f})")
        self.stdout.write(f"  UR:       {self.fmt(summary['ur_rate'])}%")
        if summary['ir_rate'] is not None:
            self.stdout.write(f"  IR:       {summary['ir_rate']:.2f} per 100,000")

        self.stdout.write("\nGeweke z")
        for name, z in n['geweke_z'].items():
            self.stdout.write(f"  {name:<8} {self.fmt(z, 2)}")

        self.stdout.write("\nDependence (median, HPD, P(alpha > 0.01))")
        for name, entry in summary['dependence'].items():
            prob = entry.get('prob_above_threshold')
            self.stdout.write(f"  {name:<12} {entry['median']:.3f}  ({entry['hpd_low']:.3f}, {entry['hpd_high']:.3f})"
                              + (f"  {prob:.2f}" if prob is not None else ''))

        for chain in summary.get('chains', []):
            self.stdout.write(f"  chain {chain['chain']} ({chain['init']}): median {chain['median']:.1f}")

        for warning in summary['warnings']:
            self.stdout.write(self.style.WARNING(f"Warning: {warning}"))
