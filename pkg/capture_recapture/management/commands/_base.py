import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from capture_recapture.exceptions import CountsValidationError, ModelSpecificationError, NumericalFailure
from capture_recapture.services import ManifestService

logger = logging.getLogger(__name__)

# Options that never affect outputs, so they stay out of the recorded config
IGNORED_OPTIONS = {'verbosity', 'settings', 'pythonpath', 'traceback', 'no_color', 'force_color',
                   'skip_checks', 'stdout', 'stderr', 'output', 'config'}

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class TrsCommand(BaseCommand):
    """
    Base for the estimation commands: maps library errors to exit codes and
    records every run as an EstimationRun plus a manifest.json
    """
    command_name = None

    def add_output_argument(self, parser):
        parser.add_argument(
            '--output',
            help='Output directory (default: TRS_OUTPUT_DIR/<command>-<input digest>-<config digest>-<seed>)',
        )

    def add_seed_argument(self, parser):
        parser.add_argument('--seed', type=int, help='Root random seed (default: TRS_DEFAULT_SEED)')

    def add_workers_argument(self, parser):
        parser.add_argument('--workers', type=int, help='Worker processes (default: TRS_WORKERS)')

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except (CountsValidationError, ModelSpecificationError) as e:
            raise CommandError(str(e), returncode=EXIT_VALIDATION)
        except NumericalFailure as e:
            raise CommandError(str(e), returncode=EXIT_NUMERICAL)

    def run(self, **options):
        raise NotImplementedError

    @staticmethod
    def resolve_seed(seed):
        return seed if seed is not None else getattr(settings, 'TRS_DEFAULT_SEED', 20240501)

    @staticmethod
    def merge_config_file(options, keys):
        """Fill options left unset on the command line from a JSON --config file"""
        path = options.get('config')
        if not path:
            return options
        try:
            file_config = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise CountsValidationError(f"Could not read config file {path}: {e}") from e
        unknown = sorted(set(file_config) - set(keys))
        if unknown:
            raise CountsValidationError(f"Unknown key(s) in {path}: {', '.join(unknown)}")
        merged = dict(options)
        for key, value in file_config.items():
            if merged.get(key) is None:
                merged[key] = value
        return merged

    @staticmethod
    def config_echo(options):
        return {k: v for k, v in sorted(options.items()) if k not in IGNORED_OPTIONS}

    def record(self, options, seed, digest, work):
        """Run work(output_dir) -> (payload, outputs) under an EstimationRun"""
        config = self.config_echo(options)
        output_dir = ManifestService.output_dir(self.command_name, digest, seed, options.get('output'), config)
        run = ManifestService.start_run(self.command_name, config, seed, digest, output_dir)
        try:
            payload, outputs = work(output_dir)
        except Exception as e:
            ManifestService.fail_run(run, e)
            raise
        ManifestService.finish_run(run, outputs)
        self.stdout.write(f"Outputs written to {output_dir}")
        return payload

    @staticmethod
    def fmt(value, digits=1):
        if value is None:
            return '-'
        if isinstance(value, float):
            return f"{value:.{digits}f}"
        return str(value)
