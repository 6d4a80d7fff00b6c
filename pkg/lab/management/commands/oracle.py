import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from ...core import validate_instance
from ...harness import load_instance_file
from ...oracle import solve_cbus
from ..utils import CONFIG_ERROR, config_errors


class Command(BaseCommand):
    help = 'Print the exact ground truth (pi*, pi_bar, expectations) of an instance'

    def add_arguments(self, parser):
        parser.add_argument('instance', type=Path)

    def handle(self, *args, **options):
        with config_errors():
            instance = load_instance_file(options['instance'])
        violations = validate_instance(instance)
        if violations:
            raise CommandError(f"instance violates {len(violations)} invariants; run validate",
                               returncode=CONFIG_ERROR)
        self.stdout.write(json.dumps(solve_cbus(instance).to_dict(), indent=2))
