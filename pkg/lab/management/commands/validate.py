from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from ...core import validate_instance
from ...harness import load_instance_file
from ..utils import CONFIG_ERROR, config_errors


class Command(BaseCommand):
    help = 'Check an instance JSON against every instance invariant'

    def add_arguments(self, parser):
        parser.add_argument('instance', type=Path)

    def handle(self, *args, **options):
        with config_errors():
            instance = load_instance_file(options['instance'])
        violations = validate_instance(instance)
        for violation in violations:
            indices = ','.join(str(i) for i in violation.indices)
            detail = f" ({violation.detail})" if violation.detail else ''
            self.stdout.write(f"{violation.invariant} [{indices}]{detail}")
        if violations:
            raise CommandError(f"{len(violations)} invariant violations", returncode=CONFIG_ERROR)
        self.stdout.write(self.style.SUCCESS('Instance is valid'))
