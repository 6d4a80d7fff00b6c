import tempfile
import uuid
from unittest import mock

from django.test import TestCase, override_settings
from rest_framework import status
from rest_framework.test import APIClient

from lab.experiment_service import execute_experiment
from lab.models import ExperimentRun

from .fixtures import tiny_payload


def experiment_payload(**fields):
    payload = {'name': 'tiny exp4', 'instance': tiny_payload(), 'algo': {'algo': 'exp4', 'mu': 0.5},
               'T': 32, 'replications': 2, 'seed': 1}
    payload.update(fields)
    return payload


class ExperimentApiTests(TestCase):
    def setUp(self):
        self.client = APIClient()

    @mock.patch('lab.experiment_service.start_experiment_async')
    def test_create_experiment(self, start):
        response = self.client.post('/experiments', experiment_payload(), format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        run = ExperimentRun.objects.get(uuid=response.data['uuid'])
        self.assertEqual(run.status, 'pending')
        self.assertEqual(run.name, 'tiny exp4')
        start.assert_called_once_with(str(run.uuid))

    @mock.patch('lab.experiment_service.start_experiment_async')
    def test_invalid_config_is_rejected(self, start):
        response = self.client.post('/experiments', experiment_payload(T=2), format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('error', response.data)
        self.assertEqual(ExperimentRun.objects.count(), 0)
        start.assert_not_called()

    def test_unknown_run(self):
        response = self.client.get(f'/experiments/{uuid.uuid4()}')
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)

    def test_run_completes_in_the_worker(self):
        run = ExperimentRun.objects.create(config=experiment_payload())
        with tempfile.TemporaryDirectory() as root, override_settings(CBUS_OUTPUT_ROOT=root):
            execute_experiment(str(run.uuid))
            run.refresh_from_db()
            self.assertEqual(run.status, 'completed')
            self.assertEqual(run.summary['replications'], 2)
            self.assertTrue(run.output_dir.startswith(root))

            response = self.client.get(f'/experiments/{run.uuid}')
            self.assertEqual(response.status_code, status.HTTP_200_OK)
            self.assertEqual(response.data['status'], 'completed')
            self.assertEqual(response.data['summary']['T'], 32)

    def test_failed_run_keeps_the_error(self):
        payload = experiment_payload(algo={'algo': 'thompson'})
        run = ExperimentRun.objects.create(config=payload)
        with tempfile.TemporaryDirectory() as root, override_settings(CBUS_OUTPUT_ROOT=root):
            execute_experiment(str(run.uuid))
        run.refresh_from_db()
        self.assertEqual(run.status, 'failed')
        self.assertIn('thompson', run.error_message)
        response = self.client.get(f'/experiments/{run.uuid}')
        self.assertIn('error_message', response.data)


class InstanceApiTests(TestCase):
    def setUp(self):
        self.client = APIClient()

    def test_health(self):
        response = self.client.get('/health')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['status'], 'healthy')

    def test_validate(self):
        response = self.client.post('/instances/validate', tiny_payload(), format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertTrue(response.data['valid'])

        payload = tiny_payload()
        payload['contexts'] = [0.5, 0.6]
        response = self.client.post('/instances/validate', payload, format='json')
        self.assertFalse(response.data['valid'])
        self.assertIn('contexts.normalized', [v['invariant'] for v in response.data['violations']])

    def test_malformed_instance(self):
        response = self.client.post('/instances/validate', {'contexts': [1.0]}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_oracle(self):
        response = self.client.post('/instances/oracle', tiny_payload(), format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['pi_star'], 0)
        self.assertEqual(response.data['pi_bar'], 1)
        self.assertEqual(response.data['feasible'], [True, True, False, False])

    def test_oracle_refuses_invalid_instances(self):
        payload = tiny_payload()
        payload['epsilon'] = -1.0
        response = self.client.post('/instances/oracle', payload, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('epsilon.non_negative', response.data['violations'])

    def test_generate(self):
        response = self.client.post('/instances/generate',
                                    {'kind': 'random', 'n_contexts': 3, 'K': 3, 'n_policies': 6, 'seed': 2},
                                    format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(len(response.data['policies']), 6)

        response = self.client.post('/instances/generate', {'kind': 'random', 'colour': 'red'}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
