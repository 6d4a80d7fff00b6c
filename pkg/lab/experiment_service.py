"""
Background experiment runs.
Runs submitted through the API execute in a daemon thread and report back
through their ExperimentRun record.
"""
import logging
import threading
from pathlib import Path

from django.conf import settings
from django.utils import timezone

from .harness import ExperimentConfig, run_experiment

logger = logging.getLogger(__name__)


def output_dir_for(run_uuid: str) -> Path:
    return Path(settings.CBUS_OUTPUT_ROOT) / str(run_uuid)


def execute_experiment(run_uuid: str):
    """
    Run the experiment stored on the record and save its summary.
    This function runs in a background thread.

    Args:
        run_uuid: UUID of the ExperimentRun
    """
    from .models import ExperimentRun  # Import here to avoid circular imports

    try:
        logger.info(f"Starting experiment run for UUID: {run_uuid}")
        started_at = timezone.now()

        run = ExperimentRun.objects.get(uuid=run_uuid)
        run.status = 'processing'
        run.save()

        config = ExperimentConfig.from_dict(run.config)
        out_dir = output_dir_for(run_uuid)
        result = run_experiment(config, out=out_dir)

        duration = (timezone.now() - started_at).total_seconds()
        logger.info(f"Experiment run completed for {run_uuid} in {duration:.2f}s")

        run.status = 'completed'
        run.output_dir = str(result.out_dir)
        run.summary = result.summary
        run.save()

    except Exception as e:
        logger.exception(f"Error during experiment run {run_uuid}: {str(e)}")
        try:
            run = ExperimentRun.objects.get(uuid=run_uuid)
            run.status = 'failed'
            run.error_message = str(e)
            run.save()
        except Exception as save_error:
            logger.error(f"Failed to update experiment run status: {str(save_error)}")


def start_experiment_async(run_uuid: str):
    """
    Start the experiment in a background thread.

    Args:
        run_uuid: UUID of the ExperimentRun
    """
    thread = threading.Thread(
        target=execute_experiment,
        args=(run_uuid,),
        daemon=True
    )
    thread.start()
    logger.info(f"Started background experiment thread for UUID: {run_uuid}")
    return thread
