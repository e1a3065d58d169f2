from capture_recapture.services import ReportService, payload_digest

from ._base import TrsCommand


class Command(TrsCommand):
    help = 'Combine stratum fits into a surveillance report (estimate, HPD, UR, IR, sum vs pooled)'
    command_name = 'report'

    def add_arguments(self, parser):
        parser.add_argument('--fits', nargs='+', required=True, help='Fit output directories, one per stratum')
        parser.add_argument('--pooled', help='Fit output directory of the pooled data')
        parser.add_argument('--incidence', action='store_true',
                            help='Require inhabitants for every stratum and report incidence rates')
        self.add_output_argument(parser)

    def run(self, **options):
        fits = [ReportService.load_fit(p) for p in options['fits']]
        pooled = ReportService.load_fit(options['pooled']) if options['pooled'] else None
        digest = payload_digest({'fits': fits, 'pooled': pooled})

        report = self.record(
            options, None, digest,
            lambda output_dir: ReportService.run(options['fits'], output_dir, pooled_path=options['pooled'],
                                                 need_incidence=options['incidence']),
        )

        self.stdout.write(self.style.SUCCESS(
            f"\n{'stratum':<10}{'x0':>6}{'N':>8}{'MAE':>8}{'HPD':>16}{'UR %':>8}{'IR':>8}"
        ))
        for row in report['strata']:
            hpd = f"({row['hpd_low']:.0f}, {row['hpd_high']:.0f})"
            self.stdout.write(
                f"{row['stratum']:<10}{row['x0']:>6}{row['n_hat']:>8.0f}{row['mae']:>8.1f}{hpd:>16}"
                f"{self.fmt(row['ur_rate'], 0):>8}{self.fmt(row['ir_rate']):>8}"
            )
        if 'sum_of_strata' in report:
            self.stdout.write(f"\nSum of strata: {report['sum_of_strata']:.0f}")
        if 'pooled' in report:
            self.stdout.write(f"Pooled:        {report['pooled']['n_hat']:.0f} "
                              f"(relative discrepancy {report['relative_discrepancy']:.1%})")
