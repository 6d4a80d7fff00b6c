"""
CBUS protocol: domain types and the environment step shared by all algorithms.

An Instance is a finite environment: a categorical context distribution, a
finite policy table, Bernoulli reward means, the surrogate loss tensor Delta
and the user model deciding when the best action bar_a(x) is revealed.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .exceptions import ArgumentError

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12
METRIC_TOL = 1e-12


def _frozen(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index from a categorical distribution using a single uniform."""
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side='right'))
    return min(index, len(probs) - 1)


@dataclass(frozen=True, eq=False)
class ContextSpace:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'probs', _frozen(self.probs, float))

    @property
    def n_contexts(self) -> int:
        return int(self.probs.shape[0])

    @classmethod
    def uniform(cls, n_contexts: int) -> 'ContextSpace':
        return cls(np.full(n_contexts, 1.0 / n_contexts))


@dataclass(frozen=True, eq=False)
class PolicyClass:
    """Finite table of deterministic context -> action maps (rows are policies)."""
    actions: np.ndarray
    n_actions: int

    def __post_init__(self):
        actions = _frozen(self.actions, np.int64)
        if actions.ndim != 2 or actions.shape[0] < 1:
            raise ArgumentError(f"policy table must be a non-empty 2-D array, got shape {actions.shape}")
        if actions.min() < 0 or actions.max() >= self.n_actions:
            raise ArgumentError(f"policy actions must lie in [0, {self.n_actions})")
        if np.unique(actions, axis=0).shape[0] != actions.shape[0]:
            raise ArgumentError("policy table contains duplicate policies")
        object.__setattr__(self, 'actions', actions)
        object.__setattr__(self, 'n_actions', int(self.n_actions))

    @property
    def n_policies(self) -> int:
        return int(self.actions.shape[0])

    @property
    def n_contexts(self) -> int:
        return int(self.actions.shape[1])

    def at(self, context: int) -> np.ndarray:
        """Action every policy takes on `context`."""
        return self.actions[:, context]


@dataclass(frozen=True, eq=False)
class SurrogateLoss:
    """delta[x, a, a'] = Delta(a, a'; x)."""
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'delta', _frozen(self.delta, float))

    def row(self, context: int, target: int) -> np.ndarray:
        """The full vector Delta(., target; x)."""
        return self.delta[context, :, target]


@dataclass(frozen=True, eq=False)
class UserModel:
    bar_a_probs: np.ndarray
    reveal_prob: np.ndarray
    revealing_action: int
    # triggered(nu) tag: non-revealing (x, a) stay within nu of every bar_a in support
    trigger_nu: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'bar_a_probs', _frozen(self.bar_a_probs, float))
        object.__setattr__(self, 'reveal_prob', _frozen(self.reveal_prob, float))
        object.__setattr__(self, 'revealing_action', int(self.revealing_action))


@dataclass(frozen=True, eq=False)
class Instance:
    contexts: ContextSpace
    policies: PolicyClass
    mu_b: np.ndarray
    loss: SurrogateLoss
    user: UserModel
    epsilon: float
    # index of a designated constraint minimizer, when a generator built one
    pi_bar: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'mu_b', _frozen(self.mu_b, float))
        object.__setattr__(self, 'epsilon', float(self.epsilon))

    @property
    def n_contexts(self) -> int:
        return self.contexts.n_contexts

    @property
    def n_actions(self) -> int:
        return self.policies.n_actions

    @property
    def n_policies(self) -> int:
        return self.policies.n_policies

    @property
    def revealing_action(self) -> int:
        return self.user.revealing_action

    def to_dict(self) -> dict[str, Any]:
        user = {
            'bar_a_probs': self.user.bar_a_probs.tolist(),
            'reveal_prob': self.user.reveal_prob.tolist(),
            'revealing_action': self.user.revealing_action,
        }
        if self.user.trigger_nu is not None:
            user['trigger_nu'] = self.user.trigger_nu
        payload = {
            'contexts': self.contexts.probs.tolist(),
            'policies': self.policies.actions.tolist(),
            'mu_b': self.mu_b.tolist(),
            'delta': self.loss.delta.tolist(),
            'user': user,
            'epsilon': self.epsilon,
        }
        if self.pi_bar is not None:
            payload['pi_bar'] = self.pi_bar
        return payload

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> 'Instance':
        missing = {'contexts', 'policies', 'mu_b', 'delta', 'user', 'epsilon'} - set(payload)
        if missing:
            raise ArgumentError(f"instance document is missing keys: {sorted(missing)}")
        try:
            mu_b = np.asarray(payload['mu_b'], dtype=float)
            user = payload['user']
            return cls(
                contexts=ContextSpace(payload['contexts']),
                policies=PolicyClass(payload['policies'], n_actions=mu_b.shape[1]),
                mu_b=mu_b,
                loss=SurrogateLoss(payload['delta']),
                user=UserModel(
                    bar_a_probs=user['bar_a_probs'],
                    reveal_prob=user['reveal_prob'],
                    revealing_action=user['revealing_action'],
                    trigger_nu=user.get('trigger_nu'),
                ),
                epsilon=payload['epsilon'],
                pi_bar=payload.get('pi_bar'),
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            if isinstance(exc, ArgumentError):
                raise
            raise ArgumentError(f"malformed instance document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> 'Instance':
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Feedback:
    """One round's observation: a reward, or the revealed bar_a with its Delta row."""
    context: int
    action: int
    reward: float
    xi: bool
    z: bool
    bar_a: Optional[int] = None
    delta_row: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Violation:
    invariant: str
    indices: tuple
    detail: str = ''


def draw_context(instance: Instance, rng: np.random.Generator) -> int:
    return sample_index(instance.contexts.probs, rng)


def env_step(instance: Instance, context: int, action: int, z: bool,
             rng: np.random.Generator) -> Feedback:
    """Play `action` on `context`; the user either reveals bar_a or a reward is drawn."""
    if not 0 <= context < instance.n_contexts:
        raise ArgumentError(f"context {context} out of range [0, {instance.n_contexts})")
    if not 0 <= action < instance.n_actions:
        raise ArgumentError(f"action {action} out of range [0, {instance.n_actions})")
    if z and action != instance.revealing_action:
        raise ArgumentError(f"z=True requires the revealing action {instance.revealing_action}, got {action}")

    if rng.random() < instance.user.reveal_prob[context, action]:
        bar_a = sample_index(instance.user.bar_a_probs[context], rng)
        return Feedback(
            context=context,
            action=action,
            reward=0.0,
            xi=True,
            z=z,
            bar_a=bar_a,
            delta_row=instance.loss.row(context, bar_a).copy(),
        )
    reward = 1.0 if rng.random() < instance.mu_b[context, action] else 0.0
    return Feedback(context=context, action=action, reward=reward, xi=False, z=z)


def validate_instance(instance: Instance) -> list[Violation]:
    """Check every type invariant; violations are returned, never raised."""
    violations: list[Violation] = []
    X, K = instance.n_contexts, instance.n_actions
    probs = instance.contexts.probs

    if X < 1:
        violations.append(Violation('contexts.non_empty', ()))
    if np.any(probs < 0):
        for (x,) in np.argwhere(probs < 0):
            violations.append(Violation('contexts.non_negative', (int(x),)))
    if abs(probs.sum() - 1.0) > PROB_TOL:
        violations.append(Violation('contexts.normalized', (), f"sum={probs.sum():.15g}"))

    shapes = {
        'policies': (instance.policies.n_contexts, X),
        'mu_b': (instance.mu_b.shape, (X, K)),
        'delta': (instance.loss.delta.shape, (X, K, K)),
        'user.bar_a_probs': (instance.user.bar_a_probs.shape, (X, K)),
        'user.reveal_prob': (instance.user.reveal_prob.shape, (X, K)),
    }
    for name, (got, expected) in shapes.items():
        if got != expected:
            violations.append(Violation(f'{name}.shape', (), f"got {got}, expected {expected}"))
    if violations and any(v.invariant.endswith('.shape') for v in violations):
        # tables cannot be indexed consistently
        return violations

    actions = instance.policies.actions
    if actions.min() < 0 or actions.max() >= K:
        for p, x in np.argwhere((actions < 0) | (actions >= K)):
            violations.append(Violation('policies.range', (int(p), int(x))))
    _, first_index, counts = np.unique(actions, axis=0, return_index=True, return_counts=True)
    for p in first_index[counts > 1]:
        violations.append(Violation('policies.distinct', (int(p),)))

    mu_b = instance.mu_b
    for x, a in np.argwhere((mu_b < 0) | (mu_b > 1)):
        violations.append(Violation('mu_b.range', (int(x), int(a))))

    delta = instance.loss.delta
    for x, a, b in np.argwhere((delta < 0) | (delta > 1)):
        violations.append(Violation('delta.range', (int(x), int(a), int(b))))
    asym = np.abs(delta - delta.transpose(0, 2, 1)) > METRIC_TOL
    for x, a, b in np.argwhere(asym):
        if a < b:
            violations.append(Violation(
                'delta.symmetry', (int(x), int(a), int(b)),
                f"{delta[x, a, b]} != {delta[x, b, a]}"))
    # slack[x, a, m, b] = Delta(a,m) + Delta(m,b) - Delta(a,b)
    slack = delta[:, :, :, None] + delta[:, None, :, :] - delta[:, :, None, :]
    for x, a, m, b in np.argwhere(slack < -METRIC_TOL):
        violations.append(Violation(
            'delta.triangle', (int(x), int(a), int(m), int(b)),
            f"{delta[x, a, b]} > {delta[x, a, m]} + {delta[x, m, b]}"))

    bar_a_probs = instance.user.bar_a_probs
    for x, a in np.argwhere(bar_a_probs < 0):
        violations.append(Violation('user.bar_a_probs.non_negative', (int(x), int(a))))
    for x in np.flatnonzero(np.abs(bar_a_probs.sum(axis=1) - 1.0) > 1e-9):
        violations.append(Violation('user.bar_a_probs.normalized', (int(x),)))

    reveal = instance.user.reveal_prob
    for x, a in np.argwhere((reveal < 0) | (reveal > 1)):
        violations.append(Violation('user.reveal_prob.range', (int(x), int(a))))
    a0 = instance.revealing_action
    if not 0 <= a0 < K:
        violations.append(Violation('user.revealing_action.range', (a0,)))
    else:
        for x in np.flatnonzero(reveal[:, a0] != 1.0):
            violations.append(Violation('user.revealing_action.reveals', (int(x), a0)))

    nu = instance.user.trigger_nu
    if nu is not None:
        in_support = bar_a_probs > 0
        for x, a in np.argwhere(reveal < 1.0):
            worst = delta[x, a][in_support[x]].max(initial=0.0)
            if worst > nu + METRIC_TOL:
                violations.append(Violation(
                    'user.triggered', (int(x), int(a)), f"max Delta to support {worst} > nu={nu}"))

    if instance.epsilon < 0:
        violations.append(Violation('epsilon.non_negative', (), f"epsilon={instance.epsilon}"))
    if instance.pi_bar is not None and not 0 <= instance.pi_bar < instance.n_policies:
        violations.append(Violation('pi_bar.range', (instance.pi_bar,)))
    return violations


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream: identical seeds give identical runs on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))
