import logging

from rest_framework import status
from rest_framework.decorators import api_view
from rest_framework.response import Response
from django.views.decorators.csrf import csrf_exempt

from .core import Instance, validate_instance
from .envs import GeneratorSpec, make_instance
from .exceptions import CbusError
from .harness import ExperimentConfig
from .oracle import solve_cbus

logger = logging.getLogger(__name__)


def _parse_instance(data):
    if not isinstance(data, dict):
        raise CbusError('Request body must be an instance JSON object')
    try:
        return Instance.from_dict(data)
    except CbusError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise CbusError(f'Invalid instance: {e}') from e


def _user_error(e):
    return Response({'error': str(e)}, status=status.HTTP_400_BAD_REQUEST)


def _server_error(e):
    return Response(
        {'error': f'Internal server error: {str(e)}'},
        status=status.HTTP_500_INTERNAL_SERVER_ERROR
    )


@csrf_exempt
@api_view(['POST'])
def create_experiment(request):
    """
    Start an experiment run in the background.

    Process:
    1. Parse and validate the experiment configuration
    2. Store the run in the database with status 'pending'
    3. Respond with 201 and the UUID
    4. Run the replications in a background thread

    Expected JSON body: an experiment config
    ({"instance": {...}, "algo": {...}, "T": ..., "replications": ..., "seed": ...})
    """
    from .models import ExperimentRun
    from .experiment_service import start_experiment_async

    try:
        if not isinstance(request.data, dict):
            return _user_error('Request body must be an experiment config object')
        ExperimentConfig.from_dict(request.data)

        run = ExperimentRun.objects.create(
            name=str(request.data.get('name', '')),
            config=request.data,
            status='pending'
        )
        logger.info(f"Created experiment run with UUID: {run.uuid}")

        start_experiment_async(str(run.uuid))

        return Response(
            {
                'status': 'success',
                'message': 'Experiment accepted. Run in progress.',
                'uuid': str(run.uuid),
            },
            status=status.HTTP_201_CREATED
        )

    except CbusError as e:
        logger.warning(f"Rejected experiment config: {str(e)}")
        return _user_error(e)
    except Exception as e:
        logger.error(f"Error creating experiment run: {str(e)}")
        return _server_error(e)


@api_view(['GET'])
def get_experiment_status(request, uuid):
    """
    Get the status of an experiment run and its summary once completed.
    """
    from .models import ExperimentRun

    try:
        run = ExperimentRun.objects.get(uuid=uuid)

        response_data = {
            'uuid': str(run.uuid),
            'name': run.name,
            'status': run.status,
            'created_at': run.created_at.isoformat(),
            'updated_at': run.updated_at.isoformat(),
        }

        if run.status == 'completed':
            response_data['summary'] = run.summary
            response_data['output_dir'] = run.output_dir

        if run.status == 'failed' and run.error_message:
            response_data['error_message'] = run.error_message

        return Response(response_data, status=status.HTTP_200_OK)

    except ExperimentRun.DoesNotExist:
        return Response(
            {'error': f'Experiment run with UUID {uuid} not found'},
            status=status.HTTP_404_NOT_FOUND
        )
    except Exception as e:
        logger.error(f"Error retrieving experiment run: {str(e)}")
        return _server_error(e)


@csrf_exempt
@api_view(['POST'])
def validate_instance_view(request):
    """
    Check an instance against every invariant; the body is the instance JSON.
    """
    try:
        instance = _parse_instance(request.data)
        violations = validate_instance(instance)
        return Response(
            {
                'valid': not violations,
                'violations': [
                    {'invariant': v.invariant, 'indices': list(v.indices), 'detail': v.detail}
                    for v in violations
                ],
            },
            status=status.HTTP_200_OK
        )
    except CbusError as e:
        return _user_error(e)
    except Exception as e:
        logger.error(f"Error validating instance: {str(e)}")
        return _server_error(e)


@csrf_exempt
@api_view(['POST'])
def oracle_view(request):
    """
    Exact ground truth (pi*, pi_bar, expected rewards and constraints) of an instance.
    """
    try:
        instance = _parse_instance(request.data)
        violations = validate_instance(instance)
        if violations:
            return Response(
                {'error': f'Instance violates {len(violations)} invariants',
                 'violations': [v.invariant for v in violations]},
                status=status.HTTP_400_BAD_REQUEST
            )
        return Response(solve_cbus(instance).to_dict(), status=status.HTTP_200_OK)
    except CbusError as e:
        return _user_error(e)
    except Exception as e:
        logger.error(f"Error solving instance: {str(e)}")
        return _server_error(e)


@csrf_exempt
@api_view(['POST'])
def generate_instance_view(request):
    """
    Build an instance from a generator spec ({"kind": "random", "n_contexts": ..., ...}).
    """
    try:
        if not isinstance(request.data, dict):
            return _user_error('Request body must be a generator spec object')
        spec = GeneratorSpec.from_dict(request.data)
        instance = make_instance(spec)
        return Response(instance.to_dict(), status=status.HTTP_201_CREATED)
    except CbusError as e:
        return _user_error(e)
    except Exception as e:
        logger.error(f"Error generating instance: {str(e)}")
        return _server_error(e)


@api_view(['GET'])
def health_check(request):
    """
    Simple health check endpoint to verify the API is running.
    """
    return Response(
        {
            'status': 'healthy',
            'message': 'CBUS lab API is running'
        },
        status=status.HTTP_200_OK
    )
