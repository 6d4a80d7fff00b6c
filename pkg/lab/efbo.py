"""
Explore First, Blend Optimally.

Four exploration phases of T0 rounds each (uniform actions, two batches of
revealing rounds, uniform actions again), then for every blend weight mu an
empirical saddle point of the mu-blended Lagrangian is solved by alternating
best responses and a clipped scalar MWU on lambda. The weight with the highest
reward on the second uniform batch is committed to for the remaining rounds.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from .core import Instance, PolicyClass, draw_context, env_step, sample_index
from .exceptions import ArgumentError, ConfigError
from .oracle import GroundTruth, action_law_regret, regret_step, solve_cbus
from .trajectory import Trajectory, TrajectoryRecorder

logger = logging.getLogger(__name__)


def mu_grid(T: int, K: int) -> tuple[float, ...]:
    """{1 - 2^-n} U {1/K + 2^-n} for n = 1..floor(log2 T), clipped, deduplicated, sorted."""
    if T < 2 or K < 2:
        raise ArgumentError(f"mu_grid needs T >= 2 and K >= 2, got T={T}, K={K}")
    depth = int(math.floor(math.log2(T)))
    values = set()
    for n in range(1, depth + 1):
        step = 2.0 ** -n
        for value in (1.0 - step, 1.0 / K + step):
            values.add(round(min(max(value, 0.0), 1.0), 12))
    return tuple(sorted(values))


@dataclass(frozen=True)
class EfboConfig:
    T0: int
    B: float
    S: int
    eta_mwu: float
    mu_grid: tuple[float, ...]
    # None means: use the instance's epsilon
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.T0 < 1:
            raise ConfigError(f"T0 must be >= 1, got {self.T0}")
        if self.B < 1:
            raise ConfigError(f"B must be >= 1, got {self.B}")
        if self.S < 1:
            raise ConfigError(f"S must be >= 1, got {self.S}")
        if self.eta_mwu <= 0:
            raise ConfigError(f"eta_mwu must be positive, got {self.eta_mwu}")
        if not self.mu_grid or any(not 0 <= mu <= 1 for mu in self.mu_grid):
            raise ConfigError("mu_grid must be a non-empty set of weights in [0, 1]")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")

    @classmethod
    def for_horizon(cls, T: int, K: int, T0: Optional[int] = None, B: Optional[float] = None,
                    S: Optional[int] = None, eta_mwu: Optional[float] = None,
                    mu_grid_values: Optional[tuple[float, ...]] = None,
                    epsilon: Optional[float] = None) -> 'EfboConfig':
        """Defaults: T0 = ceil(T^(2/3)) capped at T/4, B = T/T0, S = ceil(B T0), eta = sqrt(1/(S B))."""
        if T0 is None:
            T0 = min(math.ceil(T ** (2.0 / 3.0)), T // 4)
        if 4 * T0 > T:
            raise ConfigError(f"4 * T0 = {4 * T0} exceeds the horizon T = {T}")
        B = float(T) / T0 if B is None else float(B)
        S = int(math.ceil(B * T0)) if S is None else int(S)
        eta_mwu = math.sqrt(1.0 / (S * B)) if eta_mwu is None else float(eta_mwu)
        grid = tuple(mu_grid_values) if mu_grid_values is not None else mu_grid(T, max(K, 2))
        return cls(T0=int(T0), B=B, S=S, eta_mwu=eta_mwu, mu_grid=grid, epsilon=epsilon)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], T: int, K: int) -> 'EfboConfig':
        """Parse {"algo": "efbo", "T0": ..., "B": ..., "S": ..., "eta_mwu": ...}."""
        payload = dict(payload)
        payload.pop('algo', None)
        if 'T0_fraction' in payload:
            fraction = float(payload.pop('T0_fraction'))
            payload.setdefault('T0', max(1, int(math.ceil(fraction * T ** (2.0 / 3.0)))))
        if 'mu_grid' in payload:
            payload['mu_grid_values'] = tuple(float(mu) for mu in payload.pop('mu_grid'))
        known = {'T0', 'B', 'S', 'eta_mwu', 'mu_grid_values', 'epsilon'}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown efbo fields: {sorted(unknown)}")
        return cls.for_horizon(T, K, **payload)


@dataclass(frozen=True, eq=False)
class RewardBatch:
    """Uniform-exploration rounds: (context, action, realized reward)."""
    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.contexts.shape[0]


@dataclass(frozen=True, eq=False)
class DeltaBatch:
    """Revealing rounds: context and the full Delta row towards the revealed bar_a."""
    contexts: np.ndarray
    rows: np.ndarray

    def __len__(self) -> int:
        return self.contexts.shape[0]


@dataclass(frozen=True, eq=False)
class ExplorationLog:
    reward_batch_1: RewardBatch
    delta_batch_1: DeltaBatch
    delta_batch_2: DeltaBatch
    reward_batch_2: RewardBatch
    policies: PolicyClass
    K: int

    @property
    def T0(self) -> int:
        return len(self.reward_batch_1)


def ips_reward_table(batch: RewardBatch, policies: PolicyClass, K: int) -> np.ndarray:
    """(K / T0) sum_t r_t 1(a_t = pi(x_t)) for every policy at once."""
    if len(batch) == 0:
        return np.zeros(policies.n_policies)
    matches = policies.actions[:, batch.contexts] == batch.actions[None, :]
    return (K / len(batch)) * (matches.astype(float) @ batch.rewards)


def ips_reward_estimate(batch: RewardBatch, policy: np.ndarray, K: int) -> float:
    policy = np.asarray(policy)
    if len(batch) == 0:
        return 0.0
    matches = policy[batch.contexts] == batch.actions
    return float(K * np.sum(batch.rewards * matches) / len(batch))


def constraint_scores(batch: DeltaBatch, policies: PolicyClass) -> np.ndarray:
    """Mean Delta row entry at pi(x_t) over the batch, per policy."""
    if len(batch) == 0:
        return np.zeros(policies.n_policies)
    picked = batch.rows[np.arange(len(batch))[None, :], policies.actions[:, batch.contexts]]
    return picked.mean(axis=1)


def empirical_constraint_regret(batch: DeltaBatch, policies: PolicyClass, policy: int) -> float:
    scores = constraint_scores(batch, policies)
    return float(scores[policy] - scores.min())


def blended_reward(log: ExplorationLog, policy: int, mu: float, K: int) -> float:
    ips = ips_reward_estimate(log.reward_batch_1, log.policies.actions[policy], K)
    supervised = 1.0 - constraint_scores(log.delta_batch_2, log.policies)[policy]
    return float(mu * ips + (1.0 - mu) * supervised)


@dataclass(frozen=True, eq=False)
class EmpiricalTables:
    """Per-policy estimates shared by every saddle solve."""
    ips: np.ndarray
    supervised: np.ndarray
    constraint_regret: np.ndarray

    @classmethod
    def from_log(cls, log: ExplorationLog) -> 'EmpiricalTables':
        scores = constraint_scores(log.delta_batch_1, log.policies)
        return cls(
            ips=ips_reward_table(log.reward_batch_1, log.policies, log.K),
            supervised=1.0 - constraint_scores(log.delta_batch_2, log.policies),
            constraint_regret=scores - scores.min(),
        )

    def blended(self, mu: float) -> np.ndarray:
        return mu * self.ips + (1.0 - mu) * self.supervised


def lagrangian(Q: np.ndarray, lam: float, mu: float, tables: EmpiricalTables, epsilon: float) -> float:
    """R_mu(Q) - lambda (Reg_c(Q) - epsilon), linear in Q."""
    Q = np.asarray(Q, dtype=float)
    return float(Q @ tables.blended(mu) - lam * (Q @ tables.constraint_regret - epsilon))


def _best_response_index(lam: float, blended: np.ndarray, constraint_regret: np.ndarray) -> int:
    return int(np.argmax(blended - lam * constraint_regret))


def best_response(lam: float, mu: float, tables: EmpiricalTables) -> np.ndarray:
    """Point mass on the Lagrangian maximizer; lowest index wins ties."""
    index = _best_response_index(lam, tables.blended(mu), tables.constraint_regret)
    Q = np.zeros(tables.ips.shape[0])
    Q[index] = 1.0
    return Q


def mwu_update(lam: float, violation: float, eta: float, B: float) -> float:
    return min(lam * math.exp(eta * violation), B)


@dataclass(frozen=True, eq=False)
class SaddleResult:
    mu: float
    Q: np.ndarray
    duality_gap: float
    lambda_trace: np.ndarray = field(repr=False)

    @property
    def mean_lambda(self) -> float:
        return float(self.lambda_trace.mean())


def saddle_solve(mu: float, tables: EmpiricalTables, config: EfboConfig, epsilon: float) -> SaddleResult:
    """
    S rounds of best response against the current lambda followed by a clipped MWU step.

    Q_hat is the average of the S best responses; the reported gap is
    max_pi L(pi, lambda_bar) - min_{lambda in [0, B]} L(Q_hat, lambda).
    """
    blended = tables.blended(mu)
    regret = tables.constraint_regret
    counts = np.zeros(blended.shape[0])
    trace = np.empty(config.S)
    lam = 1.0 / config.B
    for s in range(config.S):
        trace[s] = lam
        index = _best_response_index(lam, blended, regret)
        counts[index] += 1
        lam = mwu_update(lam, regret[index] - epsilon, config.eta_mwu, config.B)

    Q = counts / config.S
    lam_bar = float(trace.mean())
    best_against_mean = float(np.max(blended - lam_bar * (regret - epsilon)))
    violation = float(Q @ regret - epsilon)
    worst_for_Q = float(Q @ blended - config.B * max(violation, 0.0))
    return SaddleResult(mu=mu, Q=Q, duality_gap=best_against_mean - worst_for_Q, lambda_trace=trace)


def select_mu(candidates: Mapping[float, np.ndarray], batch: RewardBatch, K: int,
              policies: PolicyClass) -> float:
    """Weight whose Q_hat earns the most on the held-out uniform batch; smaller mu wins ties."""
    if not candidates:
        raise ArgumentError("select_mu needs at least one candidate")
    values = ips_reward_table(batch, policies, K)
    best_mu, best_value = None, -math.inf
    for mu in sorted(candidates):
        value = float(np.asarray(candidates[mu]) @ values)
        if value > best_value:
            best_mu, best_value = mu, value
    return best_mu


class _RegretTracker:
    """Instantaneous regrets for the fixed action laws of the exploration phases."""

    def __init__(self, instance: Instance, truth: GroundTruth):
        X, K = instance.n_contexts, instance.n_actions
        self.uniform = action_law_regret(truth, np.full((X, K), 1.0 / K))
        revealing = np.zeros((X, K))
        revealing[:, instance.revealing_action] = 1.0
        self.revealing = action_law_regret(truth, revealing)


def collect_exploration(instance: Instance, T0: int, rng: np.random.Generator,
                        recorder: Optional[TrajectoryRecorder] = None,
                        truth: Optional[GroundTruth] = None) -> ExplorationLog:
    """Rounds 1..4T0: uniform, revealing, revealing, uniform."""
    K = instance.n_actions
    a0 = instance.revealing_action
    n_policies = instance.n_policies
    regrets = _RegretTracker(instance, truth) if recorder is not None else None

    def uniform_batch() -> RewardBatch:
        contexts = np.empty(T0, dtype=np.int64)
        actions = np.empty(T0, dtype=np.int64)
        rewards = np.empty(T0)
        for i in range(T0):
            x = draw_context(instance, rng)
            a = int(rng.integers(0, K))
            feedback = env_step(instance, x, a, False, rng)
            contexts[i], actions[i], rewards[i] = x, a, feedback.reward
            if recorder is not None:
                recorder.record(feedback, *regrets.uniform, n_surviving=n_policies)
        return RewardBatch(contexts, actions, rewards)

    def revealing_batch() -> DeltaBatch:
        contexts = np.empty(T0, dtype=np.int64)
        rows = np.empty((T0, K))
        for i in range(T0):
            x = draw_context(instance, rng)
            feedback = env_step(instance, x, a0, True, rng)
            if not feedback.xi:
                raise RuntimeError(f"revealing action {a0} did not reveal on context {x}")
            contexts[i], rows[i] = x, feedback.delta_row
            if recorder is not None:
                recorder.record(feedback, *regrets.revealing, n_surviving=n_policies)
        return DeltaBatch(contexts, rows)

    reward_1 = uniform_batch()
    delta_1 = revealing_batch()
    delta_2 = revealing_batch()
    reward_2 = uniform_batch()
    logger.debug(f"EFBO exploration done: 4 x {T0} rounds")
    return ExplorationLog(reward_batch_1=reward_1, delta_batch_1=delta_1, delta_batch_2=delta_2,
                          reward_batch_2=reward_2, policies=instance.policies, K=K)


def solve_all(log: ExplorationLog, config: EfboConfig, epsilon: float) -> dict[float, SaddleResult]:
    tables = EmpiricalTables.from_log(log)
    return {mu: saddle_solve(mu, tables, config, epsilon) for mu in config.mu_grid}


def run_efbo(instance: Instance, config: EfboConfig, T: int, rng: np.random.Generator,
             truth: Optional[GroundTruth] = None) -> Trajectory:
    if 4 * config.T0 > T:
        raise ConfigError(f"4 * T0 = {4 * config.T0} exceeds the horizon T = {T}")
    truth = truth or solve_cbus(instance)
    epsilon = instance.epsilon if config.epsilon is None else config.epsilon
    recorder = TrajectoryRecorder(T)
    started = time.monotonic()

    log = collect_exploration(instance, config.T0, rng, recorder=recorder, truth=truth)
    solutions = solve_all(log, config, epsilon)
    mu_hat = select_mu({mu: result.Q for mu, result in solutions.items()},
                       log.reward_batch_2, log.K, instance.policies)
    chosen = solutions[mu_hat]
    reg_r, reg_c = regret_step(truth, chosen.Q)
    logger.info(f"EFBO selected mu={mu_hat:.6g} (gap={chosen.duality_gap:.4g}, "
                f"support={int(np.count_nonzero(chosen.Q))}) after {4 * config.T0} exploration rounds")

    support = int(np.count_nonzero(chosen.Q))
    actions = instance.policies.actions
    for _ in range(4 * config.T0, T):
        x = draw_context(instance, rng)
        policy = sample_index(chosen.Q, rng)
        feedback = env_step(instance, x, int(actions[policy, x]), False, rng)
        recorder.record(feedback, reg_r, reg_c, n_surviving=support,
                        active_mu=mu_hat, lam=chosen.mean_lambda)

    logger.info(f"EFBO run of T={T} finished in {time.monotonic() - started:.2f}s")
    return recorder.finish()
