import hashlib
import json
import logging
import math
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.utils import timezone

from . import __version__
from .counts import emit_counts, load_counts
from .estimators import estimate, results_frame
from .exceptions import CountsValidationError
from .models import EstimationRun
from .posterior import (
    capture_probability_summary,
    dependence_summary,
    histogram,
    hpd_interval,
    ir_rate,
    summarize_chain,
    ur_rate,
)
from .sampler import GibbsConfig, PriorSpec, multi_chain

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def _canonical_json(payload):
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default, allow_nan=False) + '\n'


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _clean(value):
    """Replace non-finite floats by None, recursively"""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (float, np.floating)) and not math.isfinite(value):
        return None
    return value


def sha256_text(text):
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


class ManifestService:
    """
    Output files, digests and run bookkeeping shared by every command
    """

    @staticmethod
    def output_dir(command, digest, seed, requested=None, config=None):
        """Requested directory, or TRS_OUTPUT_DIR/<command>-<input digest>-<config digest>-<seed>"""
        if requested:
            path = Path(requested)
        else:
            base = Path(getattr(settings, 'TRS_OUTPUT_DIR', 'runs'))
            config_part = f"-{payload_digest(config or {})[:8]}"
            suffix = f"-{seed}" if seed is not None else ''
            path = base / f"{command}-{digest[:12]}{config_part}{suffix}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    @staticmethod
    def write_atomic(path, content):
        """Write through a temporary file in the same directory, then rename over the target"""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
        try:
            mode = 'wb' if isinstance(content, bytes) else 'w'
            with os.fdopen(fd, mode) as handle:
                handle.write(content)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @staticmethod
    def write_json(path, payload):
        return ManifestService.write_atomic(path, _canonical_json(_clean(payload)))

    @staticmethod
    def write_frame(path, frame):
        return ManifestService.write_atomic(path, frame.to_csv(index=False, float_format='%.10g'))

    @staticmethod
    def file_digest(path):
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()

    @staticmethod
    def start_run(command, config, seed, input_digest, output_dir):
        run = EstimationRun.objects.create(
            command=command,
            input_digest=input_digest,
            seed=seed,
            config=_clean(json.loads(json.dumps(config, default=_json_default))),
            tool_version=__version__,
            output_dir=str(output_dir),
        )
        logger.info(f"Started {command} run {run.id} -> {output_dir}")
        return run

    @staticmethod
    def finish_run(run, outputs):
        """Record output digests, mark the run successful and write manifest.json"""
        digests = {name: ManifestService.file_digest(path) for name, path in sorted(outputs.items())}
        run.output_digests = digests
        run.finished_at = timezone.now()
        run.success = True
        run.save()

        manifest = {
            'run_id': str(run.id),
            'command': run.command,
            'input_digest': run.input_digest,
            'seed': run.seed,
            'config': run.config,
            'tool_version': run.tool_version,
            'started_at': run.started_at.isoformat(),
            'finished_at': run.finished_at.isoformat(),
            'duration_seconds': run.duration,
            'outputs': digests,
        }
        ManifestService.write_json(Path(run.output_dir) / MANIFEST_NAME, manifest)
        logger.info(f"Finished {run.command} run {run.id} in {run.duration:.1f}s")
        return manifest

    @staticmethod
    def fail_run(run, error):
        run.finished_at = timezone.now()
        run.success = False
        run.error_message = str(error)
        run.save()
        logger.error(f"{run.command} run {run.id} failed: {error}")

    @staticmethod
    def load_manifest(path):
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise CountsValidationError(f"No manifest at {path}")
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise CountsValidationError(f"Invalid manifest {path}: {e}") from e
        for key in ('command', 'config', 'outputs'):
            if key not in manifest:
                raise CountsValidationError(f"Manifest {path} lacks '{key}'")
        return manifest

    @staticmethod
    def compare_outputs(manifest, output_dir):
        """Names of recorded outputs whose digest differs (or that are missing) in output_dir"""
        mismatched = []
        for name, digest in sorted(manifest['outputs'].items()):
            path = Path(output_dir) / name
            if not path.exists() or ManifestService.file_digest(path) != digest:
                mismatched.append(name)
        return mismatched


def parse_floats(text, count, label):
    """Comma-separated list of exactly `count` positive numbers"""
    try:
        values = tuple(float(v) for v in str(text).split(','))
    except ValueError:
        raise CountsValidationError(f"{label} must be {count} comma-separated numbers, got '{text}'") from None
    if len(values) != count or min(values) <= 0:
        raise CountsValidationError(f"{label} must be {count} positive numbers, got '{text}'")
    return values


class FitService:
    """
    THBM posterior fits: prior/Gibbs configuration, chains, summaries and
    the exported summary, histogram and draw tables
    """

    @staticmethod
    def build_prior(prior='jeffreys', alpha_prior=None, delta_prior=None, submodel='thbm'):
        if prior == 'jeffreys':
            return PriorSpec.jeffreys(submodel)
        if prior != 'informative':
            raise CountsValidationError(f"Unknown prior '{prior}'")
        if alpha_prior is None or delta_prior is None:
            raise CountsValidationError("The informative prior needs --alpha-prior and --delta-prior")
        beta = parse_floats(alpha_prior, 5, '--alpha-prior')
        pairs = parse_floats(delta_prior, 6, '--delta-prior')
        return PriorSpec.informative(beta, pairs[0::2], pairs[1::2], submodel=submodel)

    @staticmethod
    def build_config(iters=None, burnin=None, thin=None, seed=None, init='default', debug=False):
        kwargs = {'init': init, 'debug': debug}
        if iters is not None:
            kwargs['iterations'] = iters
        if burnin is not None:
            kwargs['burn_in'] = burnin
        if thin is not None:
            kwargs['thin'] = thin
        if seed is not None:
            kwargs['seed'] = seed
        return GibbsConfig(**kwargs)

    @staticmethod
    def summarize(chains, counts, meta, level):
        chain = chains[0]
        summary = summarize_chain(chain, level)
        n_hat = summary.median
        result = {
            'dataset': {'name': meta.name, 'stratum': meta.stratum, 'inhabitants': meta.inhabitants,
                        'counts': counts.as_dict(), 'x0': counts.x0},
            'gibbs': chain.config.as_dict(),
            'prior': chain.prior.as_dict(),
            'retained_draws': len(chain),
            'N': summary.as_dict(),
            'ur_rate': ur_rate(n_hat, counts.x0) if n_hat >= counts.x0 else None,
            'ir_rate': ir_rate(n_hat, meta.inhabitants) if meta.inhabitants else None,
            'capture_probabilities': capture_probability_summary(chain),
            'dependence': dependence_summary(chain, level),
            'warnings': list(summary.warnings),
        }
        if len(chains) > 1:
            per_chain = []
            for index, other in enumerate(chains):
                draws = other.draws('N')
                low, high = hpd_interval(draws, level)
                per_chain.append({'chain': index, 'init': other.config.init,
                                  'median': float(np.median(draws)), 'hpd_low': low, 'hpd_high': high})
            medians = [c['median'] for c in per_chain]
            result['chains'] = per_chain
            result['between_chain_median_spread'] = max(medians) - min(medians)
        return result

    @staticmethod
    def write_outputs(chains, summary, output_dir, fmt='json'):
        chain = chains[0]
        output_dir = Path(output_dir)
        outputs = {'summary.json': ManifestService.write_json(output_dir / 'summary.json', summary)}

        frame = chain.to_frame()
        outputs['draws.csv'] = ManifestService.write_frame(output_dir / 'draws.csv', frame)
        for name in ('N', 'P1', 'P2', 'P3', 'alpha1', 'alpha2', 'alpha3', 'alpha4'):
            filename = f'hist_{name}.csv'
            outputs[filename] = ManifestService.write_frame(output_dir / filename, histogram(chain.draws(name)))

        boxes = pd.DataFrame([{'list': name, **values}
                              for name, values in summary['capture_probabilities'].items()])
        outputs['capture_probabilities.csv'] = ManifestService.write_frame(
            output_dir / 'capture_probabilities.csv', boxes)

        if fmt == 'svg':
            from .plots import histogram_svg

            outputs['hist_N.svg'] = histogram_svg({'N': chain.draws('N')}, output_dir / 'hist_N.svg')
            outputs['hist_P.svg'] = histogram_svg(
                {f'P{l}': chain.draws(f'P{l}') for l in (1, 2, 3)}, output_dir / 'hist_P.svg')
        return outputs

    @staticmethod
    def run(data, prior, config, output_dir, chains=1, level=None, fmt='json', workers=None):
        counts, meta = load_counts(data)
        level = level if level is not None else getattr(settings, 'TRS_CI_LEVEL', 0.95)
        logger.info(f"Fitting THBM to {meta.name} ({counts}) with {chains} chain(s)")
        fitted = multi_chain(counts, prior, config, chains, workers=workers)
        summary = FitService.summarize(fitted, counts, meta, level)
        for warning in summary['warnings']:
            logger.warning(f"{meta.name}: {warning}")
        outputs = FitService.write_outputs(fitted, summary, output_dir, fmt)
        return summary, outputs


class EstimateService:
    """Classical estimators with bootstrap intervals"""

    @staticmethod
    def run(data, methods, output_dir, B=None, level=None, seed=None, workers=None, fmt='json'):
        counts, meta = load_counts(data)
        logger.info(f"Estimating N for {meta.name} with {', '.join(methods)}")
        results = [estimate(m, counts, B=B, level=level, seed=seed, workers=workers) for m in methods]
        payload = {
            'dataset': {'name': meta.name, 'counts': counts.as_dict(), 'x0': counts.x0},
            'bootstrap_replicates': B if B is not None else getattr(settings, 'TRS_BOOTSTRAP_REPLICATES', 1000),
            'level': level if level is not None else getattr(settings, 'TRS_CI_LEVEL', 0.95),
            'seed': seed,
            'results': [r.as_dict() for r in results],
        }
        output_dir = Path(output_dir)
        outputs = {'estimates.json': ManifestService.write_json(output_dir / 'estimates.json', payload)}
        if fmt == 'csv':
            outputs['estimates.csv'] = ManifestService.write_frame(output_dir / 'estimates.csv',
                                                                   results_frame(results))
        return payload, outputs


class SimulationService:
    """Simulation studies and their report tables"""

    @staticmethod
    def run(scenario, seed, output_dir, workers=None):
        from .simulation import run_replications

        report = run_replications(scenario, seed, workers=workers)
        output_dir = Path(output_dir)
        outcomes = pd.DataFrame([o.__dict__ for o in report.outcomes])
        outputs = {
            'report.json': ManifestService.write_json(output_dir / 'report.json', report.as_dict()),
            'report.csv': ManifestService.write_frame(output_dir / 'report.csv', report.to_frame()),
            'replicates.csv': ManifestService.write_frame(output_dir / 'replicates.csv', outcomes),
        }
        return report, outputs


class ReportService:
    """
    Stratified surveillance report from fit outputs: per-stratum estimate,
    dispersion, HPD, under-reporting and incidence, plus the sum of strata
    against the pooled fit
    """

    @staticmethod
    def load_fit(path):
        path = Path(path)
        summary_path = path / 'summary.json' if path.is_dir() else path
        if not summary_path.exists():
            raise CountsValidationError(f"No fit summary at {summary_path}")
        try:
            return json.loads(summary_path.read_text())
        except json.JSONDecodeError as e:
            raise CountsValidationError(f"Invalid fit summary {summary_path}: {e}") from e

    @staticmethod
    def stratum_row(fit, need_incidence=False):
        dataset = fit['dataset']
        n = fit['N']
        inhabitants = dataset.get('inhabitants')
        if need_incidence and not inhabitants:
            raise CountsValidationError(f"Stratum '{dataset['name']}' has no inhabitants; "
                                        f"incidence rate cannot be computed")
        return {
            'stratum': dataset.get('stratum') or dataset['name'],
            'dataset': dataset['name'],
            'x0': dataset['x0'],
            'n_hat': n['median'],
            'mae': n['mae'],
            'hpd_low': n['hpd_low'],
            'hpd_high': n['hpd_high'],
            'ur_rate': ur_rate(n['median'], dataset['x0']) if n['median'] >= dataset['x0'] else None,
            'ir_rate': ir_rate(n['median'], inhabitants) if inhabitants else None,
        }

    @staticmethod
    def stratified_report(fits, pooled=None, need_incidence=False):
        if not fits:
            raise CountsValidationError("At least one stratum fit is required")
        rows = [ReportService.stratum_row(f, need_incidence) for f in fits]
        report = {'strata': rows}
        if len(rows) > 1:
            total = sum(r['n_hat'] for r in rows)
            report['sum_of_strata'] = total
            if pooled is not None:
                pooled_n = pooled['N']['median']
                report['pooled'] = ReportService.stratum_row(pooled)
                report['relative_discrepancy'] = abs(total - pooled_n) / pooled_n
        return report

    @staticmethod
    def run(fit_paths, output_dir, pooled_path=None, need_incidence=False):
        fits = [ReportService.load_fit(p) for p in fit_paths]
        pooled = ReportService.load_fit(pooled_path) if pooled_path else None
        report = ReportService.stratified_report(fits, pooled, need_incidence)
        output_dir = Path(output_dir)
        outputs = {
            'report.json': ManifestService.write_json(output_dir / 'report.json', report),
            'report.csv': ManifestService.write_frame(output_dir / 'report.csv', pd.DataFrame(report['strata'])),
        }
        return report, outputs


def counts_digest(data):
    """Digest of the canonical form of a --data argument"""
    counts, _ = load_counts(data)
    return sha256_text(emit_counts(counts, 'json'))


def payload_digest(payload):
    return sha256_text(_canonical_json(payload))

