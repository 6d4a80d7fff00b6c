"""
Instance generators: the two-policy lower-bound family and random test
instances (plain, suboptimality-triggered, low-noise/Massart, reward-aligned).

Every surrogate loss is built as |p_a - p_a'| from per-context embedding
points, so symmetry and the triangle inequality hold by construction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

from .core import METRIC_TOL, ContextSpace, Instance, PolicyClass, SurrogateLoss, UserModel, make_rng
from .exceptions import ArgumentError, GenerationError
from .oracle import constraint_table, similarity_d, solve_cbus

logger = logging.getLogger(__name__)

# policy spaces up to this size are enumerated instead of sampled
ENUMERATION_LIMIT = 1 << 16
MAX_DRAW_ROUNDS = 200


class Strategy(str, Enum):
    S1 = 'S1'
    S2 = 'S2'


class GeneratorKind(str, Enum):
    LOWER_BOUND = 'lower_bound'
    RANDOM = 'random'
    TRIGGERED = 'triggered'
    MASSART = 'massart'
    ALIGNED = 'aligned'


@dataclass(frozen=True)
class LowerBoundParams:
    c: float
    gamma: float
    strategy: Strategy = Strategy.S1

    def __post_init__(self):
        object.__setattr__(self, 'strategy', Strategy(self.strategy))
        if not 0 < self.gamma < 0.5:
            raise ArgumentError(f"gamma must lie in (0, 1/2), got {self.gamma}")
        if not 0 < self.c <= 1:
            raise ArgumentError(f"c must lie in (0, 1], got {self.c}")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: GeneratorKind = GeneratorKind.RANDOM
    n_contexts: int = 8
    K: int = 4
    n_policies: int = 16
    epsilon: float = 0.05
    nu: float = 0.0
    tau: float = 0.0
    alpha: float = 1.0
    dfrak: float = 0.0
    seed: int = 0
    # size of each context's bar_a support (random / triggered)
    bar_a_support: int = 2
    # probability that bar_a departs from pi_bar (massart)
    bar_a_noise: float = 0.2
    weak: bool = False
    # lower_bound family
    c: float = 0.25
    gamma: float = 0.1
    strategy: Strategy = Strategy.S1

    def __post_init__(self):
        object.__setattr__(self, 'kind', GeneratorKind(self.kind))
        object.__setattr__(self, 'strategy', Strategy(self.strategy))
        if min(self.n_contexts, self.K, self.n_policies, self.bar_a_support) < 1:
            raise ArgumentError("generator sizes must be >= 1")
        if self.nu < 0 or self.tau < 0:
            raise ArgumentError("nu and tau must be non-negative")
        if self.epsilon < 0:
            raise ArgumentError("epsilon must be non-negative")

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> 'GeneratorSpec':
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ArgumentError(f"unknown generator fields: {sorted(unknown)}")
        try:
            return cls(**payload)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ArgumentError):
                raise
            raise ArgumentError(f"invalid generator spec: {exc}") from exc


def _metric_from_points(points: np.ndarray) -> np.ndarray:
    return np.clip(np.abs(points[:, :, None] - points[:, None, :]), 0.0, 1.0)


def _decode_policies(codes: np.ndarray, n_contexts: int, K: int) -> np.ndarray:
    """Base-K digits of each code, context 0 first."""
    digits = np.empty((codes.shape[0], n_contexts), dtype=np.int64)
    for x in range(n_contexts):
        digits[:, x] = codes % K
        codes = codes // K
    return digits


def _sample_policies(rng: np.random.Generator, n_policies: int, n_contexts: int, K: int) -> np.ndarray:
    total = K ** n_contexts
    if n_policies > total:
        raise GenerationError(
            f"cannot draw {n_policies} distinct policies: only {K}^{n_contexts} = {total} exist")
    if total <= 4 * n_policies:
        return _decode_policies(rng.choice(total, size=n_policies, replace=False), n_contexts, K)
    rows: list[np.ndarray] = []
    seen: set[bytes] = set()
    while len(rows) < n_policies:
        row = rng.integers(0, K, size=n_contexts)
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            rows.append(row)
    return np.stack(rows)


def _bar_a_law(rng: np.random.Generator, n_contexts: int, K: int, support: int,
               revealing_action: int) -> np.ndarray:
    candidates = np.array([a for a in range(K) if a != revealing_action]) if K > 1 else np.array([0])
    size = min(support, candidates.shape[0])
    probs = np.zeros((n_contexts, K))
    for x in range(n_contexts):
        chosen = rng.choice(candidates, size=size, replace=False)
        probs[x, chosen] = rng.dirichlet(np.ones(size))
    return probs


def make_lower_bound(params: LowerBoundParams, epsilon: float = 0.0) -> Instance:
    """
    The two-policy trade-off family, compressed to its two sign classes.

    Context 0 is sgn(x)=+1 and context 1 is sgn(x)=-1, each with probability 1/2.
    Actions 0 and 1 are a_{+1} and a_{-1}; action 2 is a dedicated revealing
    action, since neither of the other two reveals on both contexts. No policy
    plays it. pi_1 plays a_{sgn(x)} and pi_2 plays a_{-sgn(x)}.
    """
    a_plus, a_minus, a0 = 0, 1, 2
    policies = np.array([[a_plus, a_minus], [a_minus, a_plus]])

    delta = np.zeros((2, 3, 3))
    delta[1] = 1.0 - np.eye(3)

    half = 0.5
    if params.strategy is Strategy.S1:
        bar_a = np.array([[half, half, 0.0], [half, half, 0.0]])
    else:
        g = params.gamma
        # a_{sgn(x)} with 1/2 - gamma, a_{-sgn(x)} with 1/2 + gamma
        bar_a = np.array([[half - g, half + g, 0.0], [half + g, half - g, 0.0]])

    # pi_2's actions and a0 always reveal; pi_1's never do
    reveal = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0]])
    mu_b = np.array([[params.c, 0.0, 0.0], [0.0, params.c, 0.0]])

    return Instance(
        contexts=ContextSpace([half, half]),
        policies=PolicyClass(policies, n_actions=3),
        mu_b=mu_b,
        loss=SurrogateLoss(delta),
        user=UserModel(bar_a_probs=bar_a, reveal_prob=reveal, revealing_action=a0),
        epsilon=epsilon,
    )


def lower_bound_constraint_values(params: LowerBoundParams) -> dict[str, dict[str, float]]:
    """
    Expected constraint of pi_1 and pi_2, conditional on sgn(x)=-1 and unconditional.

    Delta vanishes on sgn(x)=+1, so the unconditional value is half the conditional one.
    """
    instance = make_lower_bound(params)
    table = constraint_table(instance)
    values = {}
    for name, policy in (('pi_1', 0), ('pi_2', 1)):
        conditional = float(table[1, instance.policies.actions[policy, 1]])
        values[name] = {'conditional': conditional, 'unconditional': conditional / 2}
    return values


def _random_parts(spec: GeneratorSpec, rng: np.random.Generator) -> dict[str, Any]:
    X, K = spec.n_contexts, spec.K
    a0 = K - 1
    policies = _sample_policies(rng, spec.n_policies, X, K)
    mu_b = rng.uniform(size=(X, K))
    points = rng.uniform(size=(X, K))
    reveal = rng.uniform(size=(X, K))
    reveal[:, a0] = 1.0
    bar_a = _bar_a_law(rng, X, K, spec.bar_a_support, a0)
    return {
        'policies': policies, 'mu_b': mu_b, 'delta': _metric_from_points(points),
        'reveal': reveal, 'bar_a': bar_a, 'a0': a0,
    }


def _assemble(spec: GeneratorSpec, parts: dict[str, Any], trigger_nu: Optional[float] = None,
              pi_bar: Optional[int] = None) -> Instance:
    return Instance(
        contexts=ContextSpace.uniform(spec.n_contexts),
        policies=PolicyClass(parts['policies'], n_actions=spec.K),
        mu_b=parts['mu_b'],
        loss=SurrogateLoss(parts['delta']),
        user=UserModel(bar_a_probs=parts['bar_a'], reveal_prob=parts['reveal'],
                       revealing_action=parts['a0'], trigger_nu=trigger_nu),
        epsilon=spec.epsilon,
        pi_bar=pi_bar,
    )


def make_random(spec: GeneratorSpec, rng: np.random.Generator) -> Instance:
    return _assemble(spec, _random_parts(spec, rng))


def make_triggered(spec: GeneratorSpec, rng: np.random.Generator) -> Instance:
    """Random instance where every (x, a) further than nu from some bar_a in support always reveals."""
    parts = _random_parts(spec, rng)
    in_support = parts['bar_a'] > 0
    worst = np.where(in_support[:, None, :], parts['delta'], 0.0).max(axis=2)
    forced = worst > spec.nu
    parts['reveal'] = np.where(forced, 1.0, parts['reveal'])
    logger.debug(f"make_triggered: nu={spec.nu}, forced reveals on {int(forced.sum())} (x, a) pairs")
    return _assemble(spec, parts, trigger_nu=spec.nu)


def _near_pi_bar(candidates: np.ndarray, pibar_actions: np.ndarray, delta: np.ndarray,
                 near_radius: float) -> np.ndarray:
    contexts = np.arange(pibar_actions.shape[0])
    distances = delta[contexts[None, :], candidates, pibar_actions[None, :]]
    return (distances <= near_radius + METRIC_TOL).all(axis=1)


def _low_noise_mask(candidates: np.ndarray, pibar_actions: np.ndarray, c_table: np.ndarray,
                    delta: np.ndarray, gap: float, near_radius: float) -> np.ndarray:
    """
    Policies meeting the weak low-noise condition against pi_bar: an expected
    constraint at least `gap` above pi_bar's, or every action within
    near_radius of pi_bar's action. Contexts are uniform.
    """
    contexts = np.arange(pibar_actions.shape[0])
    values = c_table[contexts[None, :], candidates].mean(axis=1)
    pibar_value = c_table[contexts, pibar_actions].mean()
    near = _near_pi_bar(candidates, pibar_actions, delta, near_radius)
    return (values >= pibar_value + gap - METRIC_TOL) | near


def _low_noise_policies(rng: np.random.Generator, n_policies: int, pibar_actions: np.ndarray, K: int,
                        admissible: Callable[[np.ndarray], np.ndarray]) -> tuple[np.ndarray, int]:
    """Draw n_policies - 1 admissible policies besides pi_bar; return the table and pi_bar's index."""
    X = pibar_actions.shape[0]
    total = K ** X
    if total <= ENUMERATION_LIMIT:
        candidates = _decode_policies(np.arange(total), X, K)
        pool = candidates[admissible(candidates)]
    else:
        pool = np.empty((0, X), dtype=np.int64)
        for _ in range(MAX_DRAW_ROUNDS):
            batch = rng.integers(0, K, size=(8 * n_policies, X))
            pool = np.unique(np.concatenate([pool, batch[admissible(batch)]]), axis=0)
            if pool.shape[0] > n_policies:
                break
    pool = pool[~(pool == pibar_actions).all(axis=1)]
    if pool.shape[0] < n_policies - 1:
        raise GenerationError(f"only {pool.shape[0] + 1} policies satisfy the low-noise condition, "
                              f"{n_policies} requested")
    chosen = pool[rng.choice(pool.shape[0], size=n_policies - 1, replace=False)]
    pi_bar = int(rng.integers(0, n_policies))
    return np.insert(chosen, pi_bar, pibar_actions, axis=0), pi_bar


def make_massart(spec: GeneratorSpec, rng: np.random.Generator) -> Instance:
    """
    Instance with a designated constraint minimizer pi_bar and a low-noise constraint.

    pi_bar's action sits at one end of each context's embedding and every other
    action at distance >= eps + tau. Every policy of the class then either has an
    expected constraint at least 3 eps + tau above pi_bar's, or stays within
    (2 eps + tau) / 4 of pi_bar on every context; only policies meeting this are
    drawn. With `weak=True` one extra action per context is placed within
    (2 eps + tau) / 4 of pi_bar, which drops the pointwise margin.
    """
    X, K, eps, tau = spec.n_contexts, spec.K, spec.epsilon, spec.tau
    margin = eps + tau
    if margin > 1.0:
        raise GenerationError(f"margin eps + tau = {margin} exceeds the range of Delta")
    if K < 2:
        raise GenerationError("massart instances need at least two actions")
    if not 0 <= spec.bar_a_noise < 0.5:
        raise GenerationError(f"bar_a_noise must lie in [0, 1/2), got {spec.bar_a_noise}")
    a0 = K - 1
    noise = spec.bar_a_noise
    gap = 3 * eps + tau
    near_radius = (2 * eps + tau) / 4

    pibar_actions = rng.integers(0, K - 1, size=X)
    # a context where the policy leaves pi_bar adds at least contraction * Delta to its constraint
    contraction = 1.0 - 2.0 * noise * (K - 1) / K
    floor = max(margin, min(1.0, gap / contraction))
    points = rng.uniform(floor, 1.0, size=(X, K))
    points[np.arange(X), pibar_actions] = 0.0
    if spec.weak:
        if K < 3:
            raise GenerationError("the weak low-noise form needs at least three actions")
        for x in range(X):
            others = [a for a in range(K - 1) if a != pibar_actions[x]]
            if others:
                points[x, rng.choice(others)] = rng.uniform(0.0, near_radius)
    flip = rng.random(X) < 0.5
    points[flip] = 1.0 - points[flip]
    delta = _metric_from_points(points)

    bar_a = np.full((X, K), noise / K)
    bar_a[np.arange(X), pibar_actions] += 1.0 - noise
    c_table = np.einsum('xab,xb->xa', delta, bar_a)

    policies, pi_bar = _low_noise_policies(
        rng, spec.n_policies, pibar_actions, K,
        lambda rows: _low_noise_mask(rows, pibar_actions, c_table, delta, gap, near_radius))

    mu_b = rng.uniform(size=(X, K))
    reveal = rng.uniform(size=(X, K))
    reveal[:, a0] = 1.0
    parts = {'policies': policies, 'mu_b': mu_b, 'delta': delta, 'reveal': reveal,
             'bar_a': bar_a, 'a0': a0}

    instance = _assemble(spec, parts, pi_bar=pi_bar)
    truth = solve_cbus(instance)
    if truth.pi_bar != pi_bar:
        raise GenerationError(f"designated pi_bar {pi_bar} is not the constraint minimizer ({truth.pi_bar})")
    admissible = ((truth.exp_constraint >= truth.exp_constraint[pi_bar] + gap - METRIC_TOL)
                  | _near_pi_bar(instance.policies.actions, pibar_actions, delta, near_radius))
    if not admissible.all():
        raise GenerationError(f"policies {np.flatnonzero(~admissible).tolist()} break the low-noise condition")
    if not spec.weak:
        others = np.ones((X, K), dtype=bool)
        others[np.arange(X), pibar_actions] = False
        pointwise = delta[np.arange(X)[:, None], np.arange(K)[None, :], pibar_actions[:, None]]
        if np.any(pointwise[others] < margin - METRIC_TOL):
            raise GenerationError("margin condition failed after construction")
    logger.debug(f"make_massart: {instance.n_policies} policies, pi_bar={pi_bar}, points floor {floor:.4g}")
    return instance


def make_aligned(spec: GeneratorSpec, rng: np.random.Generator) -> Instance:
    """
    Instance whose constraint-derived reward 1 - E[Delta] is an affine distortion
    (slope alpha) of the effective reward plus noise in [0, dfrak), certified
    by the oracle.
    """
    X, K, alpha, dfrak = spec.n_contexts, spec.K, spec.alpha, spec.dfrak
    if alpha < 0 or not 0 <= dfrak < 1:
        raise GenerationError(f"aligned instances need alpha >= 0 and dfrak in [0, 1), got {alpha}, {dfrak}")
    if K < 2:
        raise GenerationError("aligned instances need at least two actions")
    a0 = K - 1
    policies = _sample_policies(rng, spec.n_policies, X, K)

    r_cap = (1.0 - dfrak) / max(alpha, 1.0)
    rewards = rng.uniform(0.0, r_cap, size=(X, K))
    rewards[:, a0] = 0.0
    reveal = np.zeros((X, K))
    reveal[:, a0] = 1.0
    mu_b = rewards.copy()
    mu_b[:, a0] = rng.uniform(size=X)

    best = np.argmax(rewards[:, :a0], axis=1)
    noise = rng.uniform(0.0, dfrak, size=(X, K)) if dfrak > 0 else np.zeros((X, K))
    noise[np.arange(X), best] = 0.0
    points = alpha * (rewards[np.arange(X), best][:, None] - rewards) + noise
    points[np.arange(X), best] = 0.0
    bar_a = np.zeros((X, K))
    bar_a[np.arange(X), best] = 1.0

    parts = {'policies': policies, 'mu_b': mu_b, 'delta': _metric_from_points(points),
             'reveal': reveal, 'bar_a': bar_a, 'a0': a0}
    instance = _assemble(spec, parts)
    certified = similarity_d(instance, alpha)
    if certified > dfrak + 1e-12:
        raise GenerationError(f"certification failed: similarity d={certified:.6g} > target {dfrak}")
    logger.debug(f"make_aligned: alpha={alpha}, certified d={certified:.6g} <= {dfrak}")
    return instance


def make_instance(spec: GeneratorSpec, rng: Optional[np.random.Generator] = None) -> Instance:
    """Dispatch on spec.kind; the rng defaults to a fresh stream keyed by spec.seed."""
    rng = rng if rng is not None else make_rng(spec.seed)
    if spec.kind is GeneratorKind.LOWER_BOUND:
        params = LowerBoundParams(c=spec.c, gamma=spec.gamma, strategy=spec.strategy)
        return make_lower_bound(params, epsilon=spec.epsilon)
    builders = {
        GeneratorKind.RANDOM: make_random,
        GeneratorKind.TRIGGERED: make_triggered,
        GeneratorKind.MASSART: make_massart,
        GeneratorKind.ALIGNED: make_aligned,
    }
    instance = builders[spec.kind](spec, rng)
    logger.info(f"Generated {spec.kind.value} instance: |X|={instance.n_contexts}, K={instance.n_actions}, "
                f"|Pi|={instance.n_policies}, epsilon={instance.epsilon}")
    return instance
