import json
from pathlib import Path

from django.core.management.base import BaseCommand

from ...harness import ExperimentConfig, run_sweep
from ..utils import config_errors, parse_horizons


class Command(BaseCommand):
    help = 'Run an experiment at several horizons and fit log-log regret exponents'

    def add_arguments(self, parser):
        parser.add_argument('config', type=Path, help='Experiment config JSON (its T is ignored)')
        parser.add_argument('--horizons', required=True, help='e.g. 2^11..2^15 or 2048,4096,8192')
        parser.add_argument('--out', type=Path, default=None)
        parser.add_argument('--threads', type=int, default=None)

    def handle(self, *args, **options):
        horizons = parse_horizons(options['horizons'])
        with config_errors():
            config = ExperimentConfig.from_file(options['config'])
            result = run_sweep(config, horizons, threads=options['threads'], out=options['out'])

        self.stdout.write(result.table.to_string(index=False))
        self.stdout.write(json.dumps(result.fits, indent=2, sort_keys=True))
