import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from ...harness import curve_points, fit_scaling_exponent
from ...trajectory import COLUMNS, Trajectory
from ..utils import CONFIG_ERROR, config_errors


class Command(BaseCommand):
    help = ('Fit a log-log scaling exponent: one point per CSV (rows, final value), '
            'or the curve at powers of two for a single CSV')

    def add_arguments(self, parser):
        parser.add_argument('csv', nargs='+', type=Path)
        parser.add_argument('--column', default='cum_reg_r', choices=[c for c in COLUMNS if c != 't'])

    def handle(self, *args, **options):
        column = options['column']
        with config_errors():
            trajectories = []
            for path in options['csv']:
                if not path.exists():
                    raise CommandError(f"{path} does not exist", returncode=CONFIG_ERROR)
                trajectories.append(Trajectory.read_csv(path))
            if len(trajectories) == 1:
                points = curve_points(trajectories[0], column)
            else:
                points = [(len(t), float(t.frame[column].iloc[-1])) for t in trajectories]
            fit = fit_scaling_exponent(points)
        self.stdout.write(json.dumps({'column': column, 'points': len(points), **fit.to_dict()}, sort_keys=True))
