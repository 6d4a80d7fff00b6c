"""
Exact ground truth for CBUS instances.

Expectations are exact sums over the finite context distribution; the
constrained optimum is found by enumerating the policy class.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Instance
from .exceptions import ArgumentError

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-12
NORMALIZATION_TOL = 1e-9


def one_minus(u: np.ndarray) -> np.ndarray:
    return 1.0 - u


def effective_reward_table(instance: Instance) -> np.ndarray:
    """r(a, x) = (1 - reveal_prob[x, a]) * mu_b[x, a]: revelation rounds pay 0."""
    return (1.0 - instance.user.reveal_prob) * instance.mu_b


def constraint_table(instance: Instance) -> np.ndarray:
    """c[x, a] = E over bar_a(x) of Delta(a, bar_a; x)."""
    return np.einsum('xab,xb->xa', instance.loss.delta, instance.user.bar_a_probs)


def _policy_values(instance: Instance, table: np.ndarray) -> np.ndarray:
    """E_x[table[x, pi(x)]] for every policy."""
    actions = instance.policies.actions
    per_context = np.take_along_axis(table.T, actions, axis=0)
    return per_context @ instance.contexts.probs


def expected_reward(instance: Instance, policy: int) -> float:
    actions = instance.policies.actions[policy]
    table = effective_reward_table(instance)
    return float(instance.contexts.probs @ table[np.arange(instance.n_contexts), actions])


def expected_constraint(instance: Instance, policy: int) -> float:
    actions = instance.policies.actions[policy]
    table = constraint_table(instance)
    return float(instance.contexts.probs @ table[np.arange(instance.n_contexts), actions])


@dataclass(frozen=True, eq=False)
class GroundTruth:
    exp_reward: np.ndarray
    exp_constraint: np.ndarray
    constraint_min: float
    feasible: np.ndarray
    pi_star: int
    pi_bar: int
    epsilon: float
    reward_table: np.ndarray
    constraint_table: np.ndarray
    context_probs: np.ndarray

    def to_dict(self) -> dict:
        return {
            'exp_reward': self.exp_reward.tolist(),
            'exp_constraint': self.exp_constraint.tolist(),
            'constraint_min': self.constraint_min,
            'feasible': self.feasible.tolist(),
            'pi_star': self.pi_star,
            'pi_bar': self.pi_bar,
            'epsilon': self.epsilon,
        }


def solve_cbus(instance: Instance) -> GroundTruth:
    """Enumerate Pi: pi* maximizes reward among epsilon-feasible policies (lowest index wins ties)."""
    reward_table = effective_reward_table(instance)
    cons_table = constraint_table(instance)
    exp_reward = _policy_values(instance, reward_table)
    exp_constraint = _policy_values(instance, cons_table)

    pi_bar = int(np.argmin(exp_constraint))
    constraint_min = float(exp_constraint[pi_bar])
    feasible = exp_constraint <= constraint_min + instance.epsilon + FEASIBILITY_TOL
    masked = np.where(feasible, exp_reward, -np.inf)
    pi_star = int(np.argmax(masked))

    logger.debug(f"solve_cbus: |Pi|={instance.n_policies}, feasible={int(feasible.sum())}, "
                 f"pi_star={pi_star}, pi_bar={pi_bar}")
    return GroundTruth(
        exp_reward=exp_reward,
        exp_constraint=exp_constraint,
        constraint_min=constraint_min,
        feasible=feasible,
        pi_star=pi_star,
        pi_bar=pi_bar,
        epsilon=instance.epsilon,
        reward_table=reward_table,
        constraint_table=cons_table,
        context_probs=instance.contexts.probs,
    )


def similarity_d(instance: Instance, alpha: float,
                 g: Callable[[np.ndarray], np.ndarray] = one_minus,
                 truth: Optional[GroundTruth] = None) -> float:
    """
    Smallest d >= 0 making the constraint distribution (alpha, d)-similar to the rewards.

    The constraint side's reward is r2 = g(Delta) with g(u) = 1 - u by default; the
    inequality is checked against pi* of the constrained problem for every policy.
    """
    if alpha < 0:
        raise ArgumentError(f"alpha must be non-negative, got {alpha}")
    truth = truth or solve_cbus(instance)
    r2_table = np.einsum('xab,xb->xa', g(instance.loss.delta), instance.user.bar_a_probs)
    r2 = _policy_values(instance, r2_table)
    star = truth.pi_star
    reward_gap = truth.exp_reward[star] - truth.exp_reward
    r2_gap = r2[star] - r2
    return float(max(0.0, np.max(alpha * reward_gap - r2_gap)))


def _check_distribution(Q: np.ndarray, size: int) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (size,):
        raise ArgumentError(f"distribution has shape {Q.shape}, expected ({size},)")
    if np.any(Q < -NORMALIZATION_TOL) or abs(Q.sum() - 1.0) > NORMALIZATION_TOL:
        raise ArgumentError(f"distribution is not normalized (sum={Q.sum():.12g})")
    return Q


def regret_step(truth: GroundTruth, Q: np.ndarray) -> tuple[float, float]:
    """Reg_r(Q), Reg_c(Q) against pi*; signed, no clamping."""
    Q = _check_distribution(Q, truth.exp_reward.shape[0])
    star = truth.pi_star
    reg_r = float(truth.exp_reward[star] - Q @ truth.exp_reward)
    reg_c = float(Q @ truth.exp_constraint - truth.exp_constraint[star])
    return reg_r, reg_c


def action_law_regret(truth: GroundTruth, law: np.ndarray) -> tuple[float, float]:
    """Regret of playing actions from law[x, a] = p(a | x) instead of a policy distribution."""
    law = np.asarray(law, dtype=float)
    if np.any(np.abs(law.sum(axis=1) - 1.0) > NORMALIZATION_TOL):
        raise ArgumentError("action law rows must each sum to 1")
    star = truth.pi_star
    reward = truth.context_probs @ (law * truth.reward_table).sum(axis=1)
    constraint = truth.context_probs @ (law * truth.constraint_table).sum(axis=1)
    return (float(truth.exp_reward[star] - reward),
            float(constraint - truth.exp_constraint[star]))


@dataclass(frozen=True)
class TheoryBounds:
    V_T0: float
    phi: float


def theory_bounds(T0: float, mu: float, v: float, n_policies: int, T: float,
                  alpha: float, dfrak: float, K: int) -> TheoryBounds:
    """The exploration deviation V_T0(mu, v) and the corral rate phi(mu, v, T, d)."""
    if min(T0, v, n_policies, T, K) <= 0 or alpha < 0 or dfrak < 0 or not 0 <= mu <= 1:
        raise ArgumentError("theory_bounds arguments must be positive (mu in [0, 1])")
    denominator = mu + alpha * (1 - mu)
    if denominator == 0:
        raise ArgumentError("mu + alpha * (1 - mu) is zero")
    variance = mu ** 2 * K + (1 - mu) ** 2 * v ** 2
    log_term = math.log(4 * n_policies * T0)
    V_T0 = 2 * math.sqrt(2 * T0 * variance * log_term) + (mu * K + (1 - mu)) * log_term
    phi = (variance * math.sqrt(T * math.log(n_policies) * math.log(T)) + T * (1 - mu) * dfrak) / denominator
    return TheoryBounds(V_T0=V_T0, phi=phi)


def efbo_bound(mu: float, T0: float, T: float, alpha: float, dfrak: float, K: int,
               n_policies: int, grid_size: int = 1) -> float:
    """EFBO reward-regret bound expression for a single blend weight (constants dropped)."""
    V = theory_bounds(T0, mu, 1.0, n_policies, T, alpha, dfrak, K).V_T0
    blend = (2 * V / T0 + (1 - mu) * dfrak) / (mu + alpha * (1 - mu))
    return math.sqrt(K * math.log(T0 * grid_size) / T0) + blend + T0 / T
