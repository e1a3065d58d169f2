import json

from django.core.management.base import BaseCommand

from capture_recapture.counts import CELL_NAMES, builtin_dataset, builtin_names


class Command(BaseCommand):
    help = 'List the built-in surveillance datasets with their cell counts'

    def add_arguments(self, parser):
        parser.add_argument(
            '--format',
            choices=['table', 'json'],
            default='table',
            help='Human-readable table or JSON',
        )

    def handle(self, *args, **options):
        rows = []
        for name in builtin_names():
            counts, meta = builtin_dataset(name)
            rows.append({
                'name': name,
                'stratum': meta.stratum,
                'description': meta.description,
                'counts': counts.as_dict(),
                'x0': counts.x0,
                'inhabitants': meta.inhabitants,
            })

        if options['format'] == 'json':
            self.stdout.write(json.dumps(rows, indent=2))
            return

        header = f"{'name':<10}" + ''.join(f"{c:>6}" for c in CELL_NAMES) + f"{'x0':>6}  {'inhabitants':>12}"
        self.stdout.write(self.style.SUCCESS(header))
        for row in rows:
            cells = ''.join(f"{row['counts'][c]:>6}" for c in CELL_NAMES)
            inhabitants = f"{row['inhabitants']:,}" if row['inhabitants'] else '-'
            self.stdout.write(f"{row['name']:<10}{cells}{row['x0']:>6}  {inhabitants:>12}")
        self.stdout.write(f"\n{len(rows)} datasets")
