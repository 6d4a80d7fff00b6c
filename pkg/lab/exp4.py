"""
Constrained Exp4: exponential weights over the surviving policy set.

The loss of a policy blends the importance-weighted bandit loss of its action
with the estimated Delta row, and Z=1 rounds freeze the learner.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import softmax

from .core import Instance, PolicyClass, draw_context, env_step, sample_index
from .estimators import EstimatorConfig, make_estimator
from .exceptions import ArgumentError
from .oracle import GroundTruth, action_law_regret, regret_step, solve_cbus
from .trajectory import Trajectory, TrajectoryRecorder

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Exp4State:
    mu: float
    cum_loss: np.ndarray
    eta0: float
    t_internal: int = 0

    @classmethod
    def initial(cls, mu: float, n_policies: int, eta0: float) -> 'Exp4State':
        return cls(mu=mu, cum_loss=np.zeros(n_policies), eta0=eta0)

    @property
    def eta(self) -> float:
        return self.eta0 / math.sqrt(self.t_internal + 1)


def default_eta0(mu: float, K: int, n_policies: int) -> float:
    """sqrt(log|Pi| / (2 (mu^2 K + (1 - mu)^2)))."""
    return math.sqrt(math.log(max(n_policies, 1)) / (2 * (mu ** 2 * K + (1 - mu) ** 2)))


def exp4_distribution(state: Exp4State, surviving: np.ndarray) -> np.ndarray:
    surviving = np.asarray(surviving, dtype=bool)
    if not surviving.any():
        raise ArgumentError("exp4_distribution needs at least one surviving policy")
    Q = np.zeros(state.cum_loss.shape[0])
    Q[surviving] = softmax(-state.eta * state.cum_loss[surviving])
    return Q


def exp4_action_dist(Q: np.ndarray, policies: PolicyClass, context: int) -> np.ndarray:
    return np.bincount(policies.at(context), weights=Q, minlength=policies.n_actions)


def exp4_loss_vector(mu: float, z: bool, chosen_action: int, realized_reward: float, propensity: float,
                     bar_delta_row: np.ndarray, policies: PolicyClass, context: int,
                     weight: float = 1.0) -> np.ndarray:
    """
    Policy losses for one round.

    per-action loss = weight (1 - mu) bar_delta[a] + mu 1(a = a_t) (1 - r) / propensity;
    `weight` is the master importance weight of a corralled base.
    """
    if z:
        return np.zeros(policies.n_policies)
    if propensity <= 0:
        raise RuntimeError(f"zero propensity for played action {chosen_action}")
    per_action = weight * (1.0 - mu) * np.asarray(bar_delta_row, dtype=float)
    per_action[chosen_action] += mu * (1.0 - realized_reward) / propensity
    return per_action[policies.at(context)]


def exp4_update(state: Exp4State, loss_vector: np.ndarray, counted: bool = True) -> Exp4State:
    """Accumulate losses; only rounds processed by the learner advance its clock."""
    return replace(state, cum_loss=state.cum_loss + loss_vector,
                   t_internal=state.t_internal + (1 if counted else 0))


def revealing_law(instance: Instance) -> np.ndarray:
    law = np.zeros((instance.n_contexts, instance.n_actions))
    law[:, instance.revealing_action] = 1.0
    return law


def run_exp4(instance: Instance, T: int, rng: np.random.Generator, mu: float = 1.0,
             eta0: Optional[float] = None, estimator_config: Optional[EstimatorConfig] = None,
             truth: Optional[GroundTruth] = None) -> Trajectory:
    """A single constrained Exp4 base, consuming randomness exactly like a one-arm corral."""
    truth = truth or solve_cbus(instance)
    estimator = make_estimator(estimator_config or EstimatorConfig(), instance, T)
    eta0 = default_eta0(mu, instance.n_actions, instance.n_policies) if eta0 is None else eta0
    state = Exp4State.initial(mu, instance.n_policies, eta0)
    policies = instance.policies
    a0_regret = action_law_regret(truth, revealing_law(instance))
    recorder = TrajectoryRecorder(T)

    for _ in range(T):
        x = draw_context(instance, rng)
        Q = exp4_distribution(state, estimator.sets.surviving)
        policy = sample_index(Q, rng)
        action = int(policies.actions[policy, x])
        if estimator.draw_z(x, rng):
            feedback = env_step(instance, x, instance.revealing_action, True, rng)
            estimator.observe(feedback, planned_action=action)
            recorder.record(feedback, *a0_regret, n_surviving=estimator.sets.n_surviving)
            continue
        feedback = env_step(instance, x, action, False, rng)
        row = estimator.observe(feedback, planned_action=action)
        propensity = exp4_action_dist(Q, policies, x)[action]
        loss = exp4_loss_vector(mu, False, action, feedback.reward, propensity, row, policies, x)
        state = exp4_update(state, loss)
        reg_r, reg_c = regret_step(truth, Q)
        recorder.record(feedback, reg_r, reg_c, n_surviving=estimator.sets.n_surviving, active_mu=mu)

    logger.info(f"Exp4 run of T={T} finished: {estimator.sets.n_surviving} policies survive, "
                f"{estimator.z_count} intentional reveals")
    return recorder.finish()
