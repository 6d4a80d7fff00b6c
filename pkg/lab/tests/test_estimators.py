import math

import numpy as np
from django.test import SimpleTestCase, tag

from lab.core import draw_context, env_step, make_rng
from lab.envs import GeneratorSpec, make_instance
from lab.estimators import (ActiveEstimator, BiasedEstimator, DoublyRobustEstimator, EstimatorConfig,
                            EstimatorContract, EstimatorKind, NestedPolicySets, active_query,
                            active_radius, biased_delta, biased_radius, doubly_robust_delta, dr_radius,
                            gamma_schedule, generic_shrink, generic_threshold, log_term, make_estimator,
                            shrink_biased)
from lab.exceptions import ArgumentError, ConfigError
from lab.oracle import solve_cbus

from .fixtures import tiny_instance


class RowEstimateTests(SimpleTestCase):
    def setUp(self):
        self.loss = tiny_instance().loss

    def test_biased_row_uses_bar_a_when_revealed(self):
        np.testing.assert_allclose(biased_delta(True, 2, 0, 0, self.loss), [0.0, 0.5, 1.0])
        np.testing.assert_allclose(biased_delta(False, 1, None, 0, self.loss), [0.5, 0.0, 0.5])

    def test_revealed_round_needs_bar_a(self):
        with self.assertRaises(ArgumentError):
            biased_delta(True, 2, None, 0, self.loss)

    def test_doubly_robust_correction(self):
        hat = np.array([0.2, 0.4])
        np.testing.assert_allclose(doubly_robust_delta(hat, True, 0.5, np.array([0.4, 0.4])), [0.6, 0.4])
        np.testing.assert_allclose(doubly_robust_delta(hat, False, 0.5), hat)

    def test_correction_without_probability(self):
        with self.assertRaises(ArgumentError):
            doubly_robust_delta(np.array([0.2]), True, 0.0, np.array([0.4]))
        with self.assertRaises(ArgumentError):
            doubly_robust_delta(np.array([0.2]), True, 0.5)

    def test_doubly_robust_is_unbiased(self):
        rng = make_rng(17)
        hat, true, gamma = np.array([0.5]), np.array([0.1]), 0.25
        n = 20000
        draws = [doubly_robust_delta(hat, rng.random() < gamma, gamma, true)[0] for _ in range(n)]
        self.assertAlmostEqual(float(np.mean(draws)), 0.1, delta=0.02)


class RadiusTests(SimpleTestCase):
    def test_radii_shrink_with_time(self):
        for radius in (lambda t: biased_radius(t, 0.1, 1000, 16, 0.05),
                       lambda t: dr_radius(t, 0.05, 0.1, 1000, 16),
                       lambda t: active_radius(t, 16, 0.05)):
            values = [radius(t) for t in (1, 10, 100, 1000)]
            self.assertEqual(values, sorted(values, reverse=True))

    def test_biased_radius_floor_is_twice_nu(self):
        self.assertGreater(biased_radius(10 ** 9, 0.2, 1000, 16, 0.05), 0.4)
        self.assertAlmostEqual(biased_radius(10 ** 12, 0.2, 1000, 16, 0.05), 0.4, places=3)

    def test_gamma_schedule(self):
        self.assertAlmostEqual(gamma_schedule(0.5, 16), 0.25)
        self.assertEqual(gamma_schedule(10.0, 16), 1.0)
        self.assertEqual(gamma_schedule(0.0, 16), 0.0)


class NestedSetTests(SimpleTestCase):
    def test_small_radius_keeps_only_the_minimizer(self):
        sets = NestedPolicySets.initial(3)
        sets = shrink_biased(sets, np.array([0.0, 0.5, 1.0]), 1, nu=0.0, epsilon=0.0,
                             delta_conf=0.05, T=100, kappa=1e-6)
        self.assertEqual(sets.surviving.tolist(), [True, False, False])

    def test_snapshots_are_not_mutated(self):
        first = NestedPolicySets.initial(3)
        second = shrink_biased(first, np.array([0.0, 0.5, 1.0]), 1, 0.0, 0.0, 0.05, 100, kappa=1e-6)
        self.assertEqual(first.n_surviving, 3)
        self.assertEqual(second.n_surviving, 1)
        self.assertFalse(second.surviving.flags.writeable)

    def test_survivors_are_nested_along_a_run(self):
        instance = tiny_instance()
        config = EstimatorConfig(radius_scale=0.05)
        estimator = BiasedEstimator(config, instance, T=300, keep_history=True)
        rng = make_rng(21)
        previous = estimator.sets.surviving
        for _ in range(300):
            x = int(rng.integers(0, 2))
            feedback = env_step(instance, x, int(rng.integers(0, 3)), False, rng)
            estimator.observe(feedback)
            current = estimator.sets.surviving
            self.assertFalse(np.any(current & ~previous))
            self.assertGreaterEqual(estimator.sets.n_surviving, 1)
            previous = current
        self.assertEqual(len(estimator.sets.radius_log), 300)
        self.assertEqual(len(estimator.sets.history), 300)

    def test_empirical_minimizer_ignores_eliminated_policies(self):
        sets = NestedPolicySets(surviving=np.array([False, True, True]), scores=np.array([0.0, 2.0, 1.0]))
        self.assertEqual(sets.empirical_minimizer(), 2)


class GenericShrinkTests(SimpleTestCase):
    def test_threshold_formula(self):
        contract = EstimatorContract(v=1.0, b=1.0, beta=0.1)
        L = log_term(100, 4, 0.05)
        expected = 0.2 + math.sqrt(2 * 4 * L) + 2 * L + 0.4
        self.assertAlmostEqual(generic_threshold(4, contract, 0.2, 0.05, 100, 4), expected)

    def test_epsilon_enters_unscaled(self):
        contract = EstimatorContract(v=np.full(50, 0.5), b=1.0, beta=np.zeros(50))
        gap = (generic_threshold(30, contract, 0.3, 0.05, 50, 8)
               - generic_threshold(30, contract, 0.0, 0.05, 50, 8))
        self.assertAlmostEqual(gap, 0.3)

    def test_per_round_arrays_use_the_prefix(self):
        contract = EstimatorContract(v=np.array([1.0, 0.0, 0.0]), b=0.0, beta=np.array([0.5, 0.5, 0.5]))
        L = log_term(3, 2, 0.05)
        self.assertAlmostEqual(generic_threshold(2, contract, 0.0, 0.05, 3, 2), math.sqrt(2 * L) + 1.0)

    def test_shrink_against_summed_scores(self):
        contract = EstimatorContract(v=0.0, b=0.0, beta=0.0)
        sets = generic_shrink(NestedPolicySets.initial(3), np.array([0.0, 0.1, 0.5]), 1, contract,
                              epsilon=0.2, delta_conf=0.05, T=10)
        self.assertEqual(sets.surviving.tolist(), [True, True, False])

    def test_best_score_is_taken_over_the_whole_class(self):
        contract = EstimatorContract(v=0.0, b=0.0, beta=0.0)
        sets = NestedPolicySets(surviving=np.array([False, True, True]), scores=np.zeros(3))
        sets = generic_shrink(sets, np.array([0.4, 0.45, 0.52]), 1, contract,
                              epsilon=0.1, delta_conf=0.05, T=10)
        self.assertEqual(sets.surviving.tolist(), [False, True, False])

    def test_negative_contract(self):
        with self.assertRaises(ArgumentError):
            EstimatorContract(v=-1.0)


class ActiveQueryTests(SimpleTestCase):
    def setUp(self):
        self.instance = tiny_instance()

    def test_query_when_survivors_disagree(self):
        sets = NestedPolicySets.initial(4)
        args = (self.instance.policies, self.instance.loss, 0, self.instance.epsilon)
        self.assertTrue(active_query(sets, *args, r_next=0.2))
        self.assertFalse(active_query(sets, *args, r_next=1.0))

    def test_no_query_when_survivors_agree(self):
        sets = NestedPolicySets(surviving=np.array([True, True, False, False]), scores=np.zeros(4))
        self.assertFalse(active_query(sets, self.instance.policies, self.instance.loss, 0, 0.0, 0.0))

    def test_queried_round_updates_the_minimizer(self):
        estimator = ActiveEstimator(EstimatorConfig(kind='active'), self.instance, T=100)
        rng = make_rng(2)
        row = estimator.observe(env_step(self.instance, 1, 2, True, rng))
        np.testing.assert_allclose(row, [0.2, 0.0, 1.0])
        self.assertEqual(estimator.pi_hat, 1)
        proxy = estimator.observe(env_step(self.instance, 0, 0, False, rng))
        np.testing.assert_allclose(proxy, self.instance.loss.row(0, 0))
        self.assertEqual(estimator.z_count, 1)


class DoublyRobustEstimatorTests(SimpleTestCase):
    def test_no_draw_without_reveal_probability(self):
        estimator = DoublyRobustEstimator(EstimatorConfig(kind='doubly_robust', nu=0.0), tiny_instance(), T=64)
        rng = make_rng(8)
        self.assertFalse(estimator.draw_z(0, rng))
        self.assertEqual(rng.random(), make_rng(8).random())

    def test_budget_guard_caps_intentional_reveals(self):
        instance = tiny_instance()
        config = EstimatorConfig(kind='doubly_robust', gamma=1.0, budget_guard=True, budget_cap=2)
        estimator = DoublyRobustEstimator(config, instance, T=10)
        rng = make_rng(3)
        for _ in range(6):
            z = estimator.draw_z(0, rng)
            action = instance.revealing_action if z else 0
            estimator.observe(env_step(instance, 0, action, z, rng), planned_action=0)
        self.assertEqual(estimator.z_count, 2)

    def test_default_cap(self):
        estimator = DoublyRobustEstimator(EstimatorConfig(kind='doubly_robust', nu=1.0), tiny_instance(), T=1000)
        self.assertEqual(estimator.budget_cap, 100)
        self.assertAlmostEqual(estimator.gamma, 1000 ** -0.25)


class EstimatorConfigTests(SimpleTestCase):
    def test_from_dict_with_defaults(self):
        config = EstimatorConfig.from_dict({'estimator': 'active'}, defaults={'radius_scale': 2.0})
        self.assertIs(config.kind, EstimatorKind.ACTIVE)
        self.assertEqual(config.radius_scale, 2.0)
        self.assertIsInstance(make_estimator(config, tiny_instance(), T=10), ActiveEstimator)

    def test_invalid_payloads(self):
        for payload in ({'estimator': 'oracle'}, {'nu': 0.1, 'colour': 'red'},
                        {'delta_conf': 1.5}, {'gamma': 2.0}):
            with self.subTest(payload=payload):
                with self.assertRaises(ConfigError):
                    EstimatorConfig.from_dict(payload)


def run_active(instance, T, rng):
    """Drive the active estimator alone; queries do not depend on the learner's actions."""
    estimator = ActiveEstimator(EstimatorConfig(kind='active'), instance, T=T)
    a0 = instance.revealing_action
    for _ in range(T):
        x = draw_context(instance, rng)
        planned = int(instance.policies.actions[estimator.pi_hat, x])
        z = estimator.draw_z(x, rng)
        estimator.observe(env_step(instance, x, a0 if z else planned, z, rng), planned_action=planned)
        if estimator.sets.n_surviving == 1:
            break
    return estimator


def query_cap(T, n_policies, delta_conf, tau):
    return 80 * math.log(T * n_policies / delta_conf) / tau ** 2


class BiasedEstimatorStatisticsTests(SimpleTestCase):
    def test_bias_is_at_most_nu_on_every_pair(self):
        nu = 0.3
        for seed in range(5):
            instance = make_instance(GeneratorSpec(kind='triggered', n_contexts=6, K=5, n_policies=16,
                                                   nu=nu, seed=seed))
            reveal, bar_a = instance.user.reveal_prob, instance.user.bar_a_probs
            for x in range(instance.n_contexts):
                for a in range(instance.n_actions):
                    if reveal[x, a] >= 1.0:
                        continue
                    row = biased_delta(False, a, None, x, instance.loss)
                    for b in np.flatnonzero(bar_a[x] > 0):
                        bias = np.max(np.abs(row - instance.loss.row(x, int(b))))
                        self.assertLessEqual(bias, nu + 1e-12, msg=f"seed={seed} x={x} a={a} bar_a={b}")


class DoublyRobustStatisticsTests(SimpleTestCase):
    def setUp(self):
        self.nu = 1.0
        self.instance = make_instance(GeneratorSpec(kind='triggered', n_contexts=4, K=4, n_policies=16,
                                                    nu=self.nu, seed=1))

    def estimator_rows(self, gamma, n, seed):
        instance = self.instance
        estimator = DoublyRobustEstimator(EstimatorConfig(kind='doubly_robust', nu=self.nu, gamma=gamma),
                                          instance, T=n)
        rng = make_rng(seed)
        planned, a0 = 0, instance.revealing_action
        rows = np.empty((n, instance.n_actions))
        for i in range(n):
            z = estimator.draw_z(0, rng)
            feedback = env_step(instance, 0, a0 if z else planned, z, rng)
            rows[i] = estimator.observe(feedback, planned_action=planned)
        return rows

    def test_rows_are_unbiased_when_the_planned_action_reveals_sometimes(self):
        n, gamma = 20000, 0.25
        self.assertGreater(self.instance.user.reveal_prob[0, 0], 0.0)
        rows = self.estimator_rows(gamma, n, seed=40)
        truth = self.instance.loss.delta[0] @ self.instance.user.bar_a_probs[0]
        tolerance = 4 * rows.std(axis=0) / math.sqrt(n) + 1e-12
        np.testing.assert_array_less(np.abs(rows.mean(axis=0) - truth), tolerance)

    def test_second_moment_bound(self):
        gamma = 0.25
        rows = self.estimator_rows(gamma, 20000, seed=41)
        support = np.flatnonzero(self.instance.user.bar_a_probs[0] > 0)
        nu_eff = float(self.instance.loss.delta[0][0, support].max())
        bound = 2 + 2 * nu_eff ** 2 / gamma
        self.assertLessEqual(float((rows ** 2).mean(axis=0).max()), 1.2 * bound)

    def test_intentional_reveal_needs_the_planned_action(self):
        instance = self.instance
        estimator = DoublyRobustEstimator(EstimatorConfig(kind='doubly_robust', gamma=1.0), instance, T=4)
        feedback = env_step(instance, 0, instance.revealing_action, True, make_rng(0))
        with self.assertRaises(ArgumentError):
            estimator.observe(feedback)

    def test_direct_estimate_ignores_chance_reveals(self):
        instance = self.instance
        estimator = DoublyRobustEstimator(EstimatorConfig(kind='doubly_robust', gamma=0.5), instance, T=100)
        rng = make_rng(3)
        for _ in range(100):
            feedback = env_step(instance, 1, 0, False, rng)
            np.testing.assert_array_equal(estimator.observe(feedback, planned_action=0),
                                          instance.loss.row(1, 0))


class ActiveQueryComplexityTests(SimpleTestCase):
    spec = {'kind': 'massart', 'n_contexts': 8, 'K': 4, 'n_policies': 32, 'epsilon': 0.1, 'tau': 0.2}

    def check_run(self, seed, T):
        instance = make_instance(GeneratorSpec(seed=seed, **self.spec))
        estimator = run_active(instance, T, make_rng(seed))
        cap = query_cap(T, instance.n_policies, estimator.config.delta_conf, self.spec['tau'])
        self.assertLessEqual(estimator.z_count, cap)
        self.assertTrue(estimator.sets.surviving[instance.pi_bar])
        self.assertEqual(estimator.sets.n_surviving, 1)
        return estimator

    def test_queries_within_the_low_noise_bound(self):
        estimator = self.check_run(seed=0, T=50000)
        self.assertGreater(estimator.z_count, 0)

    @tag('slow')
    def test_queries_within_the_low_noise_bound_over_seeds(self):
        for seed in range(20):
            with self.subTest(seed=seed):
                self.check_run(seed=seed, T=100000)


@tag('slow')
class RetentionTests(SimpleTestCase):
    def test_feasible_policies_survive(self):
        instance = make_instance(GeneratorSpec(kind='triggered', n_contexts=4, K=4, n_policies=16,
                                               nu=0.1, epsilon=0.05, seed=2))
        feasible = solve_cbus(instance).feasible
        a0 = instance.revealing_action
        T, seeds = 1000, range(50)
        for kind in EstimatorKind:
            config = EstimatorConfig(kind=kind, nu=0.1)
            retained = 0
            for seed in seeds:
                rng = make_rng(seed)
                estimator = make_estimator(config, instance, T)
                for _ in range(T):
                    x = draw_context(instance, rng)
                    planned = int(rng.integers(0, a0))
                    z = estimator.draw_z(x, rng)
                    estimator.observe(env_step(instance, x, a0 if z else planned, z, rng),
                                      planned_action=planned)
                retained += bool(np.all(estimator.sets.surviving[feasible]))
            with self.subTest(kind=kind.value):
                self.assertGreaterEqual(retained / len(seeds), 1 - 2 * config.delta_conf)
