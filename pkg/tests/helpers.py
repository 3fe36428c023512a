"""Random instances shared by the test modules."""

from __future__ import annotations

import numpy as np

from distral.envsuite import TabularMdp


def random_mdp(rng: np.random.Generator, n_states: int | None = None, n_actions: int | None = None,
               discount: float = 0.95, terminal: bool = False, sparse: bool = False) -> TabularMdp:
    """Dense random MDP with <= 5 states and <= 3 actions unless sizes are given.

    With ``terminal`` the last state is absorbing with zero reward.
    """
    S = n_states or int(rng.integers(2, 6))
    A = n_actions or int(rng.integers(2, 4))
    P = rng.random((S, A, S)) ** (4 if sparse else 1)
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1, 1, (S, A))
    term = frozenset()
    if terminal:
        P[-1] = 0.0
        P[-1, :, -1] = 1.0
        R[-1] = 0.0
        term = frozenset({S - 1})
    return TabularMdp(P, R, discount, term)


def random_policy(rng: np.random.Generator, S: int, A: int, scale: float = 1.0) -> np.ndarray:
    z = scale * rng.standard_normal((S, A))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def chain_mdp(discount: float = 0.9) -> TabularMdp:
    """4-state chain: action 1 moves right, action 0 moves left; reward 1 for
    moving right from state 2 into the absorbing state 3."""
    S, A = 4, 2
    P = np.zeros((S, A, S))
    R = np.full((S, A), -0.1)
    for s in range(3):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, s + 1] = 1.0
    R[2, 1] = 1.0
    P[3, :, 3] = 1.0
    R[3] = 0.0
    return TabularMdp(P, R, discount, frozenset({3}))
