"""
Corralling constrained Exp4 bases, one per blend weight mu.

A 1/2-Tsallis FTRL master picks the base that acts each round; every base
reads the same nested policy sets, which the constraint estimator shrinks.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np
from scipy.optimize import brentq

from .core import Instance, draw_context, env_step, sample_index
from .efbo import mu_grid as default_mu_grid
from .estimators import ConstraintEstimator, EstimatorConfig, make_estimator
from .exceptions import ConfigError
from .exp4 import (Exp4State, default_eta0, exp4_action_dist, exp4_distribution, exp4_loss_vector,
                   exp4_update, revealing_law)
from .oracle import GroundTruth, action_law_regret, regret_step, solve_cbus
from .trajectory import Trajectory, TrajectoryRecorder

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorralConfig:
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    # None means the mu grid for (T, K)
    mu_grid: Optional[tuple[float, ...]] = None
    # None means default_eta0 per base
    eta0: Optional[float] = None
    master_floor: float = 0.5
    master_lr_scale: float = 1.0
    hedge_coef: float = 1.0

    def __post_init__(self):
        if self.mu_grid is not None:
            if not self.mu_grid or any(not 0 <= mu <= 1 for mu in self.mu_grid):
                raise ConfigError("mu_grid must be a non-empty set of weights in [0, 1]")
            object.__setattr__(self, 'mu_grid', tuple(float(mu) for mu in self.mu_grid))
        if self.eta0 is not None and self.eta0 < 0:
            raise ConfigError(f"eta0 must be non-negative, got {self.eta0}")
        if not 0 <= self.master_floor <= 1:
            raise ConfigError(f"master_floor must lie in [0, 1], got {self.master_floor}")
        if self.master_lr_scale <= 0 or self.hedge_coef < 0:
            raise ConfigError("master_lr_scale must be positive and hedge_coef non-negative")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], defaults: Optional[Mapping[str, Any]] = None
                  ) -> 'CorralConfig':
        """Parse {"algo": "corral", "estimator": {...}, "eta0": ..., "master_floor": ...}."""
        payload = dict(payload)
        payload.pop('algo', None)
        defaults = defaults or {}
        estimator = payload.pop('estimator', {})
        if isinstance(estimator, str):
            estimator = {'estimator': estimator}
        for key in ('master_floor', 'master_lr_scale', 'hedge_coef'):
            if key in defaults:
                payload.setdefault(key, defaults[key])
        known = {'mu_grid', 'eta0', 'master_floor', 'master_lr_scale', 'hedge_coef'}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown corral fields: {sorted(unknown)}")
        if 'mu_grid' in payload:
            payload['mu_grid'] = tuple(payload['mu_grid'])
        return cls(estimator=EstimatorConfig.from_dict(estimator, defaults), **payload)


def stability_constant(mu: float, K: int) -> float:
    return mu ** 2 * K + (1 - mu) ** 2


class TsallisMaster:
    """
    FTRL with the 1/2-Tsallis regularizer over M arms.

    P_m = 1 / (eta (L_m + offset_m - x))^2 with x normalizing, eta_t = scale sqrt(M / t),
    offset_m = hedge (sqrt(C_m) - min_k sqrt(C_k)) sqrt(t log|Pi|), then mixed
    with a floor of master_floor / (M T) per arm.
    """

    def __init__(self, stability: np.ndarray, T: int, n_policies: int, floor: float = 0.5,
                 lr_scale: float = 1.0, hedge_coef: float = 1.0):
        self.stability = np.asarray(stability, dtype=float)
        self.M = self.stability.shape[0]
        self.T = T
        self.log_policies = math.log(max(n_policies, 1))
        self.floor = floor / (self.M * T)
        self.lr_scale = lr_scale
        self.hedge_coef = hedge_coef
        self.cum_loss = np.zeros(self.M)
        self.t = 0

    def offsets(self) -> np.ndarray:
        root = np.sqrt(self.stability)
        return self.hedge_coef * (root - root.min()) * math.sqrt((self.t + 1) * self.log_policies)

    def weights(self) -> np.ndarray:
        if self.M == 1:
            return np.ones(1)
        eta = self.lr_scale * math.sqrt(self.M / (self.t + 1))
        losses = self.cum_loss + self.offsets()
        lowest = losses.min()

        def excess(x: float) -> float:
            return float(np.sum(1.0 / (eta * (losses - x)) ** 2) - 1.0)

        # every term is at most 1/(4M) at the lower end, so the bracket always changes sign
        x = brentq(excess, lowest - 2 * math.sqrt(self.M) / eta, lowest - 1.0 / eta, xtol=1e-14)
        P = 1.0 / (eta * (losses - x)) ** 2
        P = P / P.sum()
        return (1.0 - self.M * self.floor) * P + self.floor

    def update(self, arm: int, loss: float) -> None:
        self.cum_loss[arm] += loss
        self.t += 1


@dataclass
class CorralState:
    master: TsallisMaster
    bases: list[Exp4State]
    mus: tuple[float, ...]

    @property
    def master_weights(self) -> np.ndarray:
        return self.master.weights()


def corral_round(state: CorralState, estimator: ConstraintEstimator, instance: Instance,
                 rng: np.random.Generator):
    """
    One round: context, base choice, policy and planned action a_t, Z decision,
    environment, estimator, bases, master.

    a_t is fixed before Z_t is drawn. Returns (feedback, Q_played, active mu or
    NaN); Z=1 rounds play a_0 and return Q_played=None.
    """
    x = draw_context(instance, rng)
    policies = instance.policies
    M = len(state.bases)
    P = state.master.weights()
    arm = sample_index(P, rng) if M > 1 else 0
    surviving = estimator.sets.surviving
    Qs = [exp4_distribution(base, surviving) for base in state.bases]
    policy = sample_index(Qs[arm], rng)
    action = int(policies.actions[policy, x])

    if estimator.draw_z(x, rng):
        feedback = env_step(instance, x, instance.revealing_action, True, rng)
        estimator.observe(feedback, planned_action=action)
        return feedback, None, math.nan

    feedback = env_step(instance, x, action, False, rng)
    row = estimator.observe(feedback, planned_action=action)

    p_action = exp4_action_dist(Qs[arm], policies, x)[action]
    zeros = np.zeros(instance.n_policies)
    for m, base in enumerate(state.bases):
        if m == arm:
            loss = exp4_loss_vector(base.mu, False, action, feedback.reward, P[m] * p_action,
                                    row, policies, x, weight=1.0 / P[m])
        else:
            loss = zeros
        state.bases[m] = exp4_update(base, loss)
    if M > 1:
        state.master.update(arm, (1.0 - feedback.reward) / P[arm])

    Q_played = Qs[0] if M == 1 else np.einsum('m,mp->p', P, np.stack(Qs))
    return feedback, Q_played, state.mus[arm]


def init_corral(instance: Instance, config: CorralConfig, T: int) -> CorralState:
    K = instance.n_actions
    mus = config.mu_grid if config.mu_grid is not None else default_mu_grid(T, max(K, 2))
    bases = [Exp4State.initial(mu, instance.n_policies,
                               config.eta0 if config.eta0 is not None
                               else default_eta0(mu, K, instance.n_policies))
             for mu in mus]
    master = TsallisMaster(np.array([stability_constant(mu, K) for mu in mus]), T,
                           instance.n_policies, floor=config.master_floor,
                           lr_scale=config.master_lr_scale, hedge_coef=config.hedge_coef)
    return CorralState(master=master, bases=bases, mus=tuple(mus))


def run_corral(instance: Instance, config: CorralConfig, T: int, rng: np.random.Generator,
               truth: Optional[GroundTruth] = None) -> Trajectory:
    truth = truth or solve_cbus(instance)
    state = init_corral(instance, config, T)
    estimator = make_estimator(config.estimator, instance, T)
    a0_regret = action_law_regret(truth, revealing_law(instance))
    recorder = TrajectoryRecorder(T)
    started = time.monotonic()
    selections = np.zeros(len(state.bases), dtype=np.int64)

    for _ in range(T):
        feedback, Q_played, active_mu = corral_round(state, estimator, instance, rng)
        if Q_played is None:
            recorder.record(feedback, *a0_regret, n_surviving=estimator.sets.n_surviving)
            continue
        selections[state.mus.index(active_mu)] += 1
        reg_r, reg_c = regret_step(truth, Q_played)
        recorder.record(feedback, reg_r, reg_c, n_surviving=estimator.sets.n_surviving,
                        active_mu=active_mu)

    favourite = state.mus[int(np.argmax(selections))]
    logger.info(f"Corral run of T={T} with {len(state.bases)} bases ({config.estimator.kind.value}) finished "
                f"in {time.monotonic() - started:.2f}s: most selected mu={favourite:.6g}, "
                f"{estimator.sets.n_surviving} policies survive, {estimator.z_count} intentional reveals")
    return recorder.finish()
