import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from ...harness import ExperimentConfig, acceptance_checks, run_experiment
from ..utils import CHECK_FAILED, config_errors


class Command(BaseCommand):
    help = 'Run a replicated experiment from a JSON config; writes one CSV per replication and summary.json'

    def add_arguments(self, parser):
        parser.add_argument('config', type=Path, help='Experiment config JSON')
        parser.add_argument('--out', type=Path, default=None, help='Output directory (overrides the config)')
        parser.add_argument('--threads', type=int, default=None, help='Parallel replications (default CBUS_THREADS)')
        parser.add_argument('--check', action='store_true', help='Exit with code 3 when acceptance checks fail')

    def handle(self, *args, **options):
        with config_errors():
            config = ExperimentConfig.from_file(options['config'])
            result = run_experiment(config, threads=options['threads'], out=options['out'])

        metrics = result.summary['metrics']
        self.stdout.write(json.dumps({name: metrics[name]['mean'] for name in metrics}, sort_keys=True))
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(result.csv_paths)} trajectories to {result.out_dir}"))

        if options['check']:
            failures = acceptance_checks(config, result)
            for failure in failures:
                self.stderr.write(failure)
            if failures:
                raise CommandError(f"{len(failures)} acceptance checks failed", returncode=CHECK_FAILED)
            self.stdout.write(self.style.SUCCESS('All acceptance checks passed'))
