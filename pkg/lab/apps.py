import logging

from django.apps import AppConfig
from django.conf import settings


class LabConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'lab'

    def ready(self):
        # Runs started through the API write below CBUS_OUTPUT_ROOT
        try:
            logging.getLogger(__name__).debug(
                f"CBUS lab ready: threads={settings.CBUS_THREADS}, output_root={settings.CBUS_OUTPUT_ROOT}"
            )
        except Exception:
            logging.getLogger(__name__).exception('Failed to read CBUS settings in AppConfig.ready()')
