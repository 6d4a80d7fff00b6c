import json
import math
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from unittest import mock

from django.test import SimpleTestCase, override_settings, tag
from scipy import stats

from lab.core import make_rng
from lab.exceptions import ArgumentError, ConfigError
from lab.harness import (ExperimentConfig, TradeoffConfig, acceptance_checks, build_runner,
                         confidence_interval, curve_points, fit_scaling_exponent, resolve_instance,
                         run_experiment, run_fixed_policy, run_sweep, summarize_trajectories,
                         tradeoff_checks, tradeoff_sweep)
from lab.oracle import solve_cbus

from .fixtures import tiny_instance, tiny_payload


def experiment(**fields):
    payload = {'instance': tiny_payload(), 'algo': {'algo': 'exp4', 'mu': 0.5}, 'T': 64,
               'replications': 2, 'seed': 3}
    payload.update(fields)
    return ExperimentConfig.from_dict(payload)


class ScalingFitTests(SimpleTestCase):
    def test_known_exponents(self):
        horizons = [2 ** k for k in range(11, 16)]
        for exponent in (2 / 3, 0.5, 0.0):
            fit = fit_scaling_exponent([(T, 3.0 * T ** exponent) for T in horizons])
            self.assertAlmostEqual(fit.slope, exponent, places=9)
            self.assertAlmostEqual(fit.intercept, math.log(3.0), places=9)

    def test_too_few_points(self):
        with self.assertRaises(ArgumentError):
            fit_scaling_exponent([(16, 1.0), (32, 2.0)])

    def test_non_positive_regret(self):
        with self.assertRaises(ArgumentError):
            fit_scaling_exponent([(16, 1.0), (32, 0.0), (64, 2.0)])

    def test_curve_points_at_powers_of_two(self):
        trajectory = run_fixed_policy(tiny_instance(), 2, 48, make_rng(0))
        points = curve_points(trajectory)
        self.assertEqual([t for t, _ in points], [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 48.0])
        self.assertAlmostEqual(points[-1][1], 0.3 * 48)


class ConfidenceIntervalTests(SimpleTestCase):
    def test_single_replication_has_no_interval(self):
        self.assertEqual(confidence_interval([2.0]),
                         {'mean': 2.0, 'half_width': None, 'low': None, 'high': None})

    def test_t_interval(self):
        interval = confidence_interval([1.0, 2.0, 3.0])
        expected = stats.t.ppf(0.975, 2) / math.sqrt(3)
        self.assertAlmostEqual(interval['mean'], 2.0)
        self.assertAlmostEqual(interval['half_width'], expected)
        self.assertAlmostEqual(interval['high'] - interval['low'], 2 * expected)


class ExperimentConfigTests(SimpleTestCase):
    def test_generator_spec_is_kept(self):
        config = ExperimentConfig.from_dict({'instance': {'kind': 'random', 'seed': 1}, 'algo': 'efbo', 'T': 64})
        self.assertIsNotNone(config.generator)
        self.assertEqual(config.algo, {'algo': 'efbo'})

    def test_invalid_configs(self):
        bad = (
            {'algo': 'efbo', 'T': 64},
            {'instance': tiny_payload(), 'algo': 'efbo', 'T': 4},
            {'instance': tiny_payload(), 'algo': 'efbo', 'T': 64, 'budget': 3},
            {'instance': {'kind': 'adversarial'}, 'algo': 'efbo', 'T': 64},
            {'instance': 7, 'algo': 'efbo', 'T': 64},
            {'instance': tiny_payload(), 'algo': {'mu': 0.5}, 'T': 64},
        )
        for payload in bad:
            with self.subTest(payload=payload):
                with self.assertRaises(ConfigError):
                    ExperimentConfig.from_dict(payload)

    def test_missing_instance_file(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({'instance': 'nowhere.json', 'algo': 'efbo', 'T': 64},
                                       base_dir=Path(tempfile.gettempdir()))

    def test_unknown_algorithm(self):
        with self.assertRaises(ConfigError):
            build_runner({'algo': 'thompson'}, tiny_instance(), 64, defaults={})
        with self.assertRaises(ConfigError):
            build_runner({'algo': 'fixed', 'policy': 9}, tiny_instance(), 64, defaults={})

    def test_invalid_instance_is_rejected(self):
        with self.assertRaises(ConfigError):
            resolve_instance(tiny_instance(contexts=[0.5, 0.6]))


class FixedPolicyTests(SimpleTestCase):
    def test_regret_is_constant(self):
        trajectory = run_fixed_policy(tiny_instance(), 2, 20, make_rng(1), truth=solve_cbus(tiny_instance()))
        self.assertTrue(np.allclose(trajectory.frame['inst_reg_r'], 0.3))
        self.assertTrue(np.allclose(trajectory.frame['inst_reg_c'], 0.25))
        self.assertTrue((trajectory.frame['action'].isin([0, 1])).all())


class RunExperimentTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_outputs(self):
        result = run_experiment(experiment(), threads=1, out=self.root / 'a')
        names = sorted(p.name for p in result.out_dir.iterdir())
        self.assertEqual(names, ['instance.json', 'rep_000.csv', 'rep_001.csv', 'summary.json'])
        summary = json.loads((result.out_dir / 'summary.json').read_text())
        self.assertEqual(summary['rows'], [64, 64])
        self.assertEqual(summary['pi_star'], 0)
        self.assertEqual(acceptance_checks(experiment(), result), [])

    def test_summary_is_the_mean_of_the_last_rows(self):
        result = run_experiment(experiment(replications=3), threads=1, out=self.root)
        finals = [pd.read_csv(path)['cum_reg_r'].iloc[-1] for path in result.csv_paths]
        self.assertAlmostEqual(result.summary['metrics']['cum_reg_r']['mean'], float(np.mean(finals)))
        self.assertEqual(result.summary, summarize_trajectories(result.csv_paths) | {
            key: result.summary[key] for key in ('algo', 'T', 'seed', 'pi_star', 'epsilon')})

    def test_outputs_depend_only_on_seeds(self):
        first = run_experiment(experiment(), threads=1, out=self.root / 'serial')
        second = run_experiment(experiment(), threads=2, out=self.root / 'parallel')
        for a, b in zip(first.csv_paths, second.csv_paths):
            self.assertEqual(a.read_bytes(), b.read_bytes())
        third = run_experiment(experiment(seed=4), threads=1, out=self.root / 'shifted')
        self.assertEqual(first.csv_paths[1].read_bytes(), third.csv_paths[0].read_bytes())

    def test_cumulative_columns_match_prefix_sums(self):
        result = run_experiment(experiment(algo={'algo': 'corral'}), threads=1, out=self.root)
        for path in result.csv_paths:
            frame = pd.read_csv(path)
            for column, inst in (('cum_reg_r', 'inst_reg_r'), ('cum_reg_c', 'inst_reg_c')):
                drift = np.max(np.abs(frame[column].to_numpy() - np.cumsum(frame[inst].to_numpy())))
                self.assertLessEqual(drift, 1e-9)

    def test_long_trace_reads_back_without_drift(self):
        config = experiment(algo={'algo': 'exp4', 'mu': 0.5}, T=4096, replications=1)
        result = run_experiment(config, threads=1, out=self.root)
        written = result.trajectories[0].frame
        reread = pd.read_csv(result.csv_paths[0])
        for column in ('inst_reg_r', 'inst_reg_c', 'cum_reg_r', 'cum_reg_c'):
            np.testing.assert_allclose(reread[column], written[column], rtol=1e-15, atol=0)

    @override_settings(CBUS_THREADS=1)
    def test_requested_threads_are_capped_by_settings(self):
        with mock.patch('lab.harness.ThreadPoolExecutor') as pool:
            with self.assertLogs('lab.harness', level='WARNING') as logs:
                result = run_experiment(experiment(), threads=4, out=self.root)
        pool.assert_not_called()
        self.assertIn('capped at CBUS_THREADS=1', logs.output[0])
        self.assertEqual(len(result.csv_paths), 2)

    def test_summary_counts_intentional_and_all_reveals(self):
        result = run_experiment(experiment(algo={'algo': 'efbo'}), threads=1, out=self.root)
        metrics = result.summary['metrics']
        self.assertEqual(set(metrics), {'cum_reg_r', 'cum_reg_c', 'total_z', 'total_reveals'})
        for trajectory in result.trajectories:
            self.assertLessEqual(trajectory.total_z, trajectory.total_reveals)
            self.assertEqual(trajectory.total_z, 32)

    def test_missing_output_path(self):
        with self.assertRaises(ConfigError):
            run_experiment(experiment())

    def test_sweep_fits_linear_regret(self):
        config = experiment(algo={'algo': 'fixed', 'policy': 2}, replications=1)
        result = run_sweep(config, [16, 32, 64], threads=1, out=self.root)
        self.assertEqual(result.table['T'].tolist(), [16, 32, 64])
        self.assertAlmostEqual(result.fits['mean_cum_reg_r']['slope'], 1.0, places=6)
        self.assertAlmostEqual(result.fits['mean_cum_reg_c']['slope'], 1.0, places=6)
        self.assertTrue((self.root / 'sweep.csv').exists())
        self.assertTrue((self.root / 'T_32' / 'rep_000.csv').exists())


class TradeoffTests(SimpleTestCase):
    variants = (
        {'name': 'never_reveal', 'algo': {'algo': 'fixed', 'policy': 0}},
        {'name': 'commit_pi2', 'algo': {'algo': 'fixed', 'policy': 1}},
    )

    def test_fixed_policies_sit_on_the_axes(self):
        config = TradeoffConfig(c=0.25, gammas=(0.1,), T=64, variants=self.variants)
        table = tradeoff_sweep(config, threads=1).set_index('variant')
        never, commit = table.loc['never_reveal'], table.loc['commit_pi2']
        self.assertAlmostEqual(never['reg_c_s2'], 0.1 * 64)
        self.assertAlmostEqual(never['reg_c_slope_s2'], 0.1)
        self.assertAlmostEqual(never['reg_r_worst'], 0.0)
        self.assertAlmostEqual(commit['reg_r_worst'], 0.25 * 64)
        self.assertAlmostEqual(commit['reg_c_s2'], 0.0)
        self.assertAlmostEqual(commit['product'], 0.0)

    def test_checks(self):
        table = pd.DataFrame([
            {'variant': 'never_reveal', 'gamma': 0.1, 'c': 0.25, 'T': 4096, 'reg_c_slope_s2': 0.01,
             'reg_r_worst': 0.0, 'reg_c_worst': 400.0},
            {'variant': 'efbo', 'gamma': 0.1, 'c': 0.25, 'T': 4096, 'reg_c_slope_s2': 0.0,
             'reg_r_worst': 10.0, 'reg_c_worst': 10.0},
        ])
        failures = tradeoff_checks(table)
        self.assertEqual(len(failures), 2)
        self.assertTrue(failures[0].startswith('never_reveal'))
        self.assertTrue(failures[1].startswith('efbo'))

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            TradeoffConfig.from_dict({'gammas': []})
        with self.assertRaises(ConfigError):
            TradeoffConfig.from_dict({'variants': [{'name': 'x'}]})
        with self.assertRaises(ConfigError):
            TradeoffConfig.from_dict({'speed': 2})
        with self.assertRaises(ConfigError):
            tradeoff_sweep(TradeoffConfig(gammas=(0.7,), T=64, variants=self.variants), threads=1)

    @tag('slow')
    def test_default_variants_frontier(self):
        table = tradeoff_sweep(TradeoffConfig(gammas=(0.1,), T=2 ** 12), threads=2)
        failures = [f for f in tradeoff_checks(table) if 'beats' not in f]
        self.assertEqual(failures, [])
        self.assertEqual(sorted(table['variant']), ['commit_pi2', 'efbo', 'efbo_short', 'never_reveal'])
