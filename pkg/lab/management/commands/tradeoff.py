from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from ...harness import TradeoffConfig, read_json, tradeoff_checks, tradeoff_sweep
from ..utils import CHECK_FAILED, config_errors


class Command(BaseCommand):
    help = 'Sweep algorithm variants over the two-policy lower-bound family and report the regret frontier'

    def add_arguments(self, parser):
        parser.add_argument('config', type=Path, help='Trade-off config JSON (c, gammas, T, variants, ...)')
        parser.add_argument('--threads', type=int, default=None)
        parser.add_argument('--check', action='store_true', help='Exit with code 3 when the frontier checks fail')

    def handle(self, *args, **options):
        path = options['config']
        with config_errors():
            config = TradeoffConfig.from_dict(read_json(path), base_dir=path.parent)
            table = tradeoff_sweep(config, threads=options['threads'])
        self.stdout.write(table.to_string(index=False))

        if options['check']:
            failures = tradeoff_checks(table)
            for failure in failures:
                self.stderr.write(failure)
            if failures:
                raise CommandError(f"{len(failures)} frontier checks failed", returncode=CHECK_FAILED)
