from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError

from capture_recapture.exceptions import CountsValidationError
from capture_recapture.services import ManifestService

from ._base import TrsCommand


class Command(TrsCommand):
    help = 'Re-run a recorded manifest and check that every output is reproduced byte for byte'
    command_name = 'replay'

    def add_arguments(self, parser):
        parser.add_argument('manifest', help='manifest.json or the run directory holding it')
        parser.add_argument('--output', help='Directory for the replayed outputs (default: <run dir>-replay)')

    def run(self, **options):
        manifest = ManifestService.load_manifest(options['manifest'])
        source = Path(options['manifest'])
        source_dir = source if source.is_dir() else source.parent
        output_dir = Path(options['output'] or f"{source_dir}-replay")
        if output_dir.resolve() == source_dir.resolve():
            raise CountsValidationError("Replay output directory must differ from the recorded one")

        self.stdout.write(self.style.SUCCESS(f"Replaying {manifest['command']} from {source_dir}"))
        call_command(manifest['command'], output=str(output_dir), stdout=self.stdout, **manifest['config'])

        mismatched = ManifestService.compare_outputs(manifest, output_dir)
        if mismatched:
            self.stdout.write(self.style.ERROR(f"Outputs differ: {', '.join(mismatched)}"))
            raise CommandError(f"Replay did not reproduce {len(mismatched)} output(s)", returncode=1)
        self.stdout.write(self.style.SUCCESS(f"All {len(manifest['outputs'])} outputs reproduced"))
