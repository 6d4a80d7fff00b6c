"""
Shared plumbing for the lab's management commands.
"""
import re
from contextlib import contextmanager

from django.core.management.base import CommandError

from ..exceptions import CbusError

CONFIG_ERROR = 2
CHECK_FAILED = 3


@contextmanager
def config_errors():
    """Report lab errors as a command failure with exit code 2."""
    try:
        yield
    except CbusError as e:
        raise CommandError(str(e), returncode=CONFIG_ERROR) from e


def parse_horizons(text):
    """
    Horizons as a comma list ("2048,4096") or a power-of-two range ("2^11..2^15").
    """
    text = text.strip()
    match = re.fullmatch(r'2\^(\d+)\s*\.\.\s*2\^(\d+)', text)
    if match:
        low, high = int(match.group(1)), int(match.group(2))
        if low > high:
            raise CommandError(f"empty horizon range {text}", returncode=CONFIG_ERROR)
        return [2 ** k for k in range(low, high + 1)]
    horizons = []
    for part in text.split(','):
        part = part.strip()
        power = re.fullmatch(r'2\^(\d+)', part)
        try:
            horizons.append(2 ** int(power.group(1)) if power else int(part))
        except ValueError:
            raise CommandError(f"invalid horizon {part!r}", returncode=CONFIG_ERROR)
    return horizons
