"""
Small hand-checked instance shared by the tests.

Two equally likely contexts, actions {0, 1} plus the revealing action 2.
Delta comes from points ctx0 = (0, .5, 1), ctx1 = (.2, 0, 1); bar_a is 0 on
ctx0 and 1 on ctx1. Policy values (reward, constraint):

    pi0 (0, 0): (.85, .10)   pi1 (0, 1): (.70, .00)
    pi2 (1, 0): (.55, .35)   pi3 (1, 1): (.40, .25)

With epsilon = .15, pi0 and pi1 are feasible, pi* = pi0 and pi_bar = pi1.
"""
import numpy as np

from lab.core import ContextSpace, Instance, PolicyClass, SurrogateLoss, UserModel

EXP_REWARD = [0.85, 0.70, 0.55, 0.40]
EXP_CONSTRAINT = [0.10, 0.00, 0.35, 0.25]


def points_metric(points):
    points = np.asarray(points, dtype=float)
    return np.abs(points[:, :, None] - points[:, None, :])


def tiny_payload():
    return {
        'contexts': [0.5, 0.5],
        'policies': [[0, 0], [0, 1], [1, 0], [1, 1]],
        'mu_b': [[0.8, 0.2, 0.5], [0.9, 0.6, 0.5]],
        'delta': points_metric([[0.0, 0.5, 1.0], [0.2, 0.0, 1.0]]).tolist(),
        'user': {
            'bar_a_probs': [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            'reveal_prob': [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]],
            'revealing_action': 2,
        },
        'epsilon': 0.15,
    }


def tiny_instance(**overrides):
    payload = tiny_payload()
    payload.update(overrides)
    return Instance.from_dict(payload)


def uniform_instance(n_contexts=2, K=3, epsilon=0.1):
    """Every action reveals with probability 1/2; bar_a uniform over the non-revealing actions."""
    a0 = K - 1
    policies = np.array([[a] * n_contexts for a in range(K)])
    reveal = np.full((n_contexts, K), 0.5)
    reveal[:, a0] = 1.0
    bar_a = np.zeros((n_contexts, K))
    bar_a[:, :a0] = 1.0 / a0
    points = np.tile(np.linspace(0.0, 1.0, K), (n_contexts, 1))
    return Instance(
        contexts=ContextSpace.uniform(n_contexts),
        policies=PolicyClass(policies, n_actions=K),
        mu_b=np.full((n_contexts, K), 0.5),
        loss=SurrogateLoss(points_metric(points)),
        user=UserModel(bar_a_probs=bar_a, reveal_prob=reveal, revealing_action=a0),
        epsilon=epsilon,
    )
