"""
Constraint estimators and the nested policy sets they drive.

Each strategy turns a round's feedback into an estimated Delta row over
actions and shrinks the set of surviving (approximately feasible) policies:

- biased: the row towards bar_a when revealed, else towards the played action
- doubly_robust: Delta(., a_t) of the planned action, corrected on intentional
  revealing rounds Z ~ Ber(gamma)
- active: reveal only when two survivors disagree by more than the current radius
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Optional, Union

import numpy as np

from .core import Feedback, Instance, PolicyClass, SurrogateLoss
from .exceptions import ArgumentError, ConfigError

logger = logging.getLogger(__name__)


class EstimatorKind(str, Enum):
    BIASED = 'biased'
    DOUBLY_ROBUST = 'doubly_robust'
    ACTIVE = 'active'


@dataclass(frozen=True)
class EstimatorContract:
    """Per-round second moment v, magnitude b and bias beta; scalars or per-round arrays."""
    v: Union[float, np.ndarray] = 1.0
    b: float = 1.0
    beta: Union[float, np.ndarray] = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.v) < 0) or self.b < 0 or np.any(np.asarray(self.beta) < 0):
            raise ArgumentError("estimator contract bounds must be non-negative")


@dataclass(frozen=True)
class EstimatorConfig:
    kind: EstimatorKind = EstimatorKind.BIASED
    nu: float = 0.0
    delta_conf: float = 0.05
    radius_scale: float = 1.0
    # doubly robust only: override of nu / T^(1/4)
    gamma: Optional[float] = None
    budget_guard: bool = False
    # None means ceil(T^(2/3))
    budget_cap: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', EstimatorKind(self.kind))
        if self.radius_scale <= 0:
            raise ConfigError(f"radius_scale must be positive, got {self.radius_scale}")
        if not 0 < self.delta_conf < 1:
            raise ConfigError(f"delta_conf must lie in (0, 1), got {self.delta_conf}")
        if self.nu < 0:
            raise ConfigError(f"nu must be non-negative, got {self.nu}")
        if self.gamma is not None and not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.budget_cap is not None and self.budget_cap < 0:
            raise ConfigError(f"budget_cap must be non-negative, got {self.budget_cap}")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], defaults: Optional[Mapping[str, Any]] = None
                  ) -> 'EstimatorConfig':
        """Parse {"estimator": "biased"|"doubly_robust"|"active", "nu": ..., ...}."""
        payload = dict(payload)
        if 'estimator' in payload:
            payload['kind'] = payload.pop('estimator')
        for key in ('delta_conf', 'radius_scale'):
            if defaults and key in defaults:
                payload.setdefault(key, defaults[key])
        known = {'kind', 'nu', 'delta_conf', 'radius_scale', 'gamma', 'budget_guard', 'budget_cap'}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown estimator fields: {sorted(unknown)}")
        try:
            return cls(**payload)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid estimator config: {exc}") from exc


@dataclass(frozen=True, eq=False)
class NestedPolicySets:
    """
    Surviving mask plus the cumulative estimated constraint score per policy.

    Instances are never mutated; every shrink returns a new snapshot.
    """
    surviving: np.ndarray
    scores: np.ndarray
    t: int = 0
    keep_history: bool = False
    history: tuple = field(default=(), repr=False)
    radius_log: tuple = field(default=(), repr=False)

    @classmethod
    def initial(cls, n_policies: int, keep_history: bool = False) -> 'NestedPolicySets':
        surviving = np.ones(n_policies, dtype=bool)
        surviving.setflags(write=False)
        scores = np.zeros(n_policies)
        scores.setflags(write=False)
        return cls(surviving=surviving, scores=scores, keep_history=keep_history)

    @property
    def n_surviving(self) -> int:
        return int(self.surviving.sum())

    def empirical_minimizer(self) -> int:
        """Lowest-index survivor with the smallest score."""
        masked = np.where(self.surviving, self.scores, np.inf)
        return int(np.argmin(masked))


def _shrink(sets: NestedPolicySets, policy_values: np.ndarray, t: int, slack: float,
            radius: float, per_round: bool, against_all: bool = False) -> NestedPolicySets:
    """
    Accumulate this round's values, then keep survivors within `slack` of the best score.

    per_round=True compares mean scores (sum / t); otherwise raw sums. The best
    score is taken over the survivors, or over the whole class with against_all.
    """
    scores = sets.scores + np.asarray(policy_values, dtype=float)
    compared = scores / t if per_round else scores
    best = np.min(compared if against_all else compared[sets.surviving])
    surviving = sets.surviving & (compared <= best + slack)
    if not surviving.any():
        # the class minimizer was eliminated earlier; the sets never empty
        keep = int(np.argmin(np.where(sets.surviving, compared, np.inf)))
        logger.warning(f"round {t}: no survivor within the threshold, keeping policy {keep}")
        surviving = np.zeros_like(surviving)
        surviving[keep] = True
    surviving.setflags(write=False)
    scores.setflags(write=False)
    dropped = sets.n_surviving - int(surviving.sum())
    if dropped:
        logger.debug(f"round {t}: eliminated {dropped} policies, {int(surviving.sum())} remain "
                     f"(radius={radius:.4g})")
    history, radius_log = sets.history, sets.radius_log
    if sets.keep_history:
        history = history + (scores.copy(),)
        radius_log = radius_log + (radius,)
    return replace(sets, surviving=surviving, scores=scores, t=t, history=history, radius_log=radius_log)


def row_to_policies(row: np.ndarray, policies: PolicyClass, context: int) -> np.ndarray:
    return np.asarray(row)[policies.at(context)]


def biased_delta(xi: bool, chosen_action: int, bar_a: Optional[int], context: int,
                 loss: SurrogateLoss) -> np.ndarray:
    """Delta(., bar_a; x) when bar_a was revealed, Delta(., a_t; x) otherwise."""
    if xi:
        if bar_a is None:
            raise ArgumentError("xi=True requires the revealed bar_a")
        return loss.row(context, bar_a).copy()
    return loss.row(context, chosen_action).copy()


def log_term(T: int, n_policies: int, delta_conf: float) -> float:
    return math.log(T * n_policies / delta_conf)


def biased_radius(t: int, nu: float, T: int, n_policies: int, delta_conf: float) -> float:
    """r_t = 2 nu + 4 sqrt(2 log(T |Pi| / delta) / t)."""
    return 2 * nu + 4 * math.sqrt(2 * log_term(T, n_policies, delta_conf) / t)


def shrink_biased(sets: NestedPolicySets, policy_values: np.ndarray, t: int, nu: float,
                  epsilon: float, delta_conf: float, T: int, kappa: float = 1.0) -> NestedPolicySets:
    radius = kappa * biased_radius(t, nu, T, sets.surviving.shape[0], delta_conf)
    return _shrink(sets, policy_values, t, epsilon + radius, radius, per_round=True)


def doubly_robust_delta(hat_row: np.ndarray, z: bool, gamma: float,
                        true_row: Optional[np.ndarray] = None) -> np.ndarray:
    """hat + Z (true - hat) / gamma; unclipped, may leave [0, 1]."""
    hat_row = np.asarray(hat_row, dtype=float)
    if not z:
        return hat_row.copy()
    if gamma <= 0:
        raise ArgumentError("z=True with gamma=0: the correction term is undefined")
    if true_row is None:
        raise ArgumentError("z=True requires the revealed Delta row")
    return hat_row + (np.asarray(true_row, dtype=float) - hat_row) / gamma


def dr_base_row(feedback: Feedback, planned_action: int, gamma: float,
                loss: SurrogateLoss) -> np.ndarray:
    """
    hat Delta for the doubly-robust row.

    With gamma > 0 it is Delta(., a_t; x) for the planned a_t, a function of a_t
    alone, so it is the same whether Z_t sends a_0 or a_t to the user and whether
    a_t happens to reveal. With gamma = 0 no correction can follow and the
    reveal-aware biased row is used.
    """
    if gamma > 0:
        return biased_delta(False, planned_action, None, feedback.context, loss)
    return biased_delta(feedback.xi, feedback.action, feedback.bar_a, feedback.context, loss)


def dr_radius(t: int, delta_conf: float, nu: float, T: int, n_policies: int) -> float:
    """U_t = 4 sqrt((1 v nu T^(1/4)) L / t) + 4 T^(1/4) L / t with L = log(T |Pi| / delta)."""
    L = log_term(T, n_policies, delta_conf)
    quarter = T ** 0.25
    return 4 * math.sqrt(max(1.0, nu * quarter) * L / t) + 4 * quarter * L / t


def shrink_dr(sets: NestedPolicySets, policy_values: np.ndarray, t: int, epsilon: float,
              U_t: float, kappa: float = 1.0) -> NestedPolicySets:
    radius = kappa * 4 * U_t
    return _shrink(sets, policy_values, t, epsilon + radius, radius, per_round=True)


def gamma_schedule(nu: float, T: int) -> float:
    return float(np.clip(nu / T ** 0.25, 0.0, 1.0))


def dr_budget_guard(t: int, z_count: int, budget_cap: int) -> bool:
    """Whether round t may still spend an intentional reveal."""
    return z_count < budget_cap


def active_radius(t: int, n_policies: int, delta_conf: float) -> float:
    """r_t = 4 sqrt(2 log(|Pi| / delta) / t)."""
    return 4 * math.sqrt(2 * math.log(n_policies / delta_conf) / t)


def active_query(sets: NestedPolicySets, policies: PolicyClass, loss: SurrogateLoss,
                 context: int, epsilon: float, r_next: float) -> bool:
    """True iff two survivors are at least epsilon + r_next / 2 apart on this context."""
    actions = np.unique(policies.at(context)[sets.surviving])
    if actions.shape[0] < 2:
        return False
    gaps = loss.delta[context][np.ix_(actions, actions)]
    return bool(gaps.max() >= epsilon + r_next / 2)


def active_shrink(sets: NestedPolicySets, policy_values: np.ndarray, t: int, epsilon: float,
                  delta_conf: float, kappa: float = 1.0) -> NestedPolicySets:
    """Scores accumulate only on queried rounds; keep S(pi) <= S(pi_hat) + (2 eps + 3 r_t) t."""
    radius = kappa * active_radius(t, sets.surviving.shape[0], delta_conf)
    return _shrink(sets, policy_values, t, (2 * epsilon + 3 * radius) * t, radius, per_round=False)


def active_delta_proxy(pi_hat: int, policies: PolicyClass, context: int,
                       loss: SurrogateLoss) -> np.ndarray:
    """Row a -> Delta(a, pi_hat(x); x)."""
    return loss.row(context, int(policies.actions[pi_hat, context])).copy()


def _cumulative(values: Union[float, np.ndarray], t: int, squared: bool = False) -> float:
    array = np.asarray(values, dtype=float)
    if array.ndim == 0:
        value = float(array) ** 2 if squared else float(array)
        return t * value
    window = array[:t]
    return float(np.sum(window ** 2 if squared else window))


def generic_threshold(t: int, contract: EstimatorContract, epsilon: float, delta_conf: float,
                      T: int, n_policies: int) -> float:
    """eps + sqrt(2 sum v_s^2 L) + 2 b L + sum beta_s, on the scale of summed scores."""
    L = log_term(T, n_policies, delta_conf)
    return (epsilon + math.sqrt(2 * _cumulative(contract.v, t, squared=True) * L)
            + 2 * contract.b * L + _cumulative(contract.beta, t))


def generic_shrink(sets: NestedPolicySets, policy_values: np.ndarray, t: int,
                   contract: EstimatorContract, epsilon: float, delta_conf: float,
                   T: int) -> NestedPolicySets:
    """Compare survivors with the best summed score over the whole class."""
    threshold = generic_threshold(t, contract, epsilon, delta_conf, T, sets.surviving.shape[0])
    return _shrink(sets, policy_values, t, threshold, threshold - epsilon, per_round=False,
                   against_all=True)


class ConstraintEstimator:
    """
    Owns the nested sets of one simulation.

    Per round the learner first plans its action a_t, then draw_z decides
    whether a_0 is played instead, then observe consumes the feedback.
    """

    kind: EstimatorKind

    def __init__(self, config: EstimatorConfig, instance: Instance, T: int, keep_history: bool = False):
        self.config = config
        self.instance = instance
        self.T = T
        self.sets = NestedPolicySets.initial(instance.n_policies, keep_history=keep_history)
        self.t = 0
        self.z_count = 0

    def draw_z(self, context: int, rng: np.random.Generator) -> bool:
        return False

    def observe(self, feedback: Feedback, planned_action: Optional[int] = None) -> np.ndarray:
        """Consume the round's feedback, shrink the sets and return the Delta-row estimate."""
        raise NotImplementedError

    def _advance(self, feedback: Feedback) -> None:
        self.t += 1
        if feedback.z:
            self.z_count += 1


class BiasedEstimator(ConstraintEstimator):
    kind = EstimatorKind.BIASED

    def observe(self, feedback: Feedback, planned_action: Optional[int] = None) -> np.ndarray:
        self._advance(feedback)
        row = biased_delta(feedback.xi, feedback.action, feedback.bar_a, feedback.context,
                           self.instance.loss)
        values = row_to_policies(row, self.instance.policies, feedback.context)
        self.sets = shrink_biased(self.sets, values, self.t, self.config.nu, self.instance.epsilon,
                                  self.config.delta_conf, self.T, self.config.radius_scale)
        return row


class DoublyRobustEstimator(ConstraintEstimator):
    kind = EstimatorKind.DOUBLY_ROBUST

    def __init__(self, config: EstimatorConfig, instance: Instance, T: int, keep_history: bool = False):
        super().__init__(config, instance, T, keep_history)
        self.gamma = config.gamma if config.gamma is not None else gamma_schedule(config.nu, T)
        self.budget_cap = (config.budget_cap if config.budget_cap is not None
                           else int(math.ceil(T ** (2.0 / 3.0))))

    def draw_z(self, context: int, rng: np.random.Generator) -> bool:
        # no draw is consumed when reveals are impossible
        if self.gamma <= 0:
            return False
        if self.config.budget_guard and not dr_budget_guard(self.t + 1, self.z_count, self.budget_cap):
            return False
        return bool(rng.random() < self.gamma)

    def observe(self, feedback: Feedback, planned_action: Optional[int] = None) -> np.ndarray:
        self._advance(feedback)
        if feedback.z and planned_action is None:
            raise ArgumentError("an intentional reveal needs the planned action a_t")
        planned = feedback.action if planned_action is None else planned_action
        hat = dr_base_row(feedback, planned, self.gamma, self.instance.loss)
        row = doubly_robust_delta(hat, feedback.z, self.gamma, feedback.delta_row)
        values = row_to_policies(row, self.instance.policies, feedback.context)
        U_t = dr_radius(self.t, self.config.delta_conf, self.config.nu, self.T, self.instance.n_policies)
        self.sets = shrink_dr(self.sets, values, self.t, self.instance.epsilon, U_t,
                              self.config.radius_scale)
        return row


class ActiveEstimator(ConstraintEstimator):
    kind = EstimatorKind.ACTIVE

    def __init__(self, config: EstimatorConfig, instance: Instance, T: int, keep_history: bool = False):
        super().__init__(config, instance, T, keep_history)
        self.pi_hat = 0

    def draw_z(self, context: int, rng: np.random.Generator) -> bool:
        r_next = self.config.radius_scale * active_radius(self.t + 1, self.instance.n_policies,
                                                          self.config.delta_conf)
        return active_query(self.sets, self.instance.policies, self.instance.loss, context,
                            self.instance.epsilon, r_next)

    def observe(self, feedback: Feedback, planned_action: Optional[int] = None) -> np.ndarray:
        self._advance(feedback)
        policies = self.instance.policies
        if feedback.z:
            if feedback.delta_row is None:
                raise RuntimeError("queried round returned no Delta row")
            row = feedback.delta_row
            values = row_to_policies(row, policies, feedback.context)
        else:
            row = active_delta_proxy(self.pi_hat, policies, feedback.context, self.instance.loss)
            values = np.zeros(self.instance.n_policies)
        self.sets = active_shrink(self.sets, values, self.t, self.instance.epsilon,
                                  self.config.delta_conf, self.config.radius_scale)
        if feedback.z:
            self.pi_hat = self.sets.empirical_minimizer()
        return row


_STRATEGIES = {
    EstimatorKind.BIASED: BiasedEstimator,
    EstimatorKind.DOUBLY_ROBUST: DoublyRobustEstimator,
    EstimatorKind.ACTIVE: ActiveEstimator,
}


def make_estimator(config: EstimatorConfig, instance: Instance, T: int,
                   keep_history: bool = False) -> ConstraintEstimator:
    return _STRATEGIES[config.kind](config, instance, T, keep_history=keep_history)
