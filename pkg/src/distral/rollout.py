"""Environment handles, trajectories, and the rollout kernel backend.

The compiled backend (``distral._kernels``) is used when importable; set
``DISTRAL_PURE_PYTHON=1`` to force the pure-Python fallback. Both backends
consume the same pre-drawn uniforms, so a seeded run is backend-independent.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from .envsuite import GridEncoding, GridTask, TabularMdp, grid_to_mdp

if os.environ.get("DISTRAL_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled


def get_backend(name: str | None = None):
    """Kernel module by name; ``None`` selects the default backend."""
    name = name or BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_BACKENDS)}") from None


@dataclass
class Trajectory:
    """Contiguous steps; ``t`` is the step index within the step's episode."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    t: np.ndarray
    terminal: np.ndarray
    truncated: np.ndarray
    episode_returns: np.ndarray  # undiscounted returns of episodes completed in this batch

    def __len__(self) -> int:
        return len(self.states)

    @classmethod
    def empty(cls) -> "Trajectory":
        i = np.zeros(0, dtype=np.int64)
        b = np.zeros(0, dtype=bool)
        f = np.zeros(0)
        return cls(i, i.copy(), f, i.copy(), i.copy(), b, b.copy(), f.copy())

    @property
    def episode_ends(self) -> np.ndarray:
        return self.terminal | self.truncated

    def episodes(self) -> list[slice]:
        """Slices of contiguous steps belonging to one episode."""
        ends = np.flatnonzero(self.episode_ends)
        out, start = [], 0
        for e in ends:
            out.append(slice(start, e + 1))
            start = e + 1
        if start < len(self):
            out.append(slice(start, len(self)))
        return out

    def concat(self, other: "Trajectory") -> "Trajectory":
        return Trajectory(*(np.concatenate([getattr(self, k), getattr(other, k)])
                            for k in self.__dataclass_fields__))


class TabularEnv:
    """Sampling handle over a finite MDP with uniform resets over ``start_states``.

    Transitions are stored sparsely as per-(s, a) successor lists with
    cumulative probabilities so grid worlds (one successor) stay small.
    Mutable episode state lives in ``carry_i`` (state, elapsed) and
    ``carry_f`` (running return); state ``-1`` means a reset is pending.
    """

    def __init__(self, mdp: TabularMdp, start_states=None, max_steps: int = 100):
        self.mdp = mdp
        p = mdp.transition
        support = p > 0
        k = int(support.sum(axis=2).max())
        S, A = mdp.n_states, mdp.n_actions
        self.next_idx = np.zeros((S, A, k), dtype=np.int64)
        self.next_cdf = np.ones((S, A, k))
        for s in range(S):
            for a in range(A):
                nz = np.flatnonzero(support[s, a])
                cdf = np.cumsum(p[s, a, nz])
                cdf[-1] = 1.0
                self.next_idx[s, a, : len(nz)] = nz
                self.next_idx[s, a, len(nz):] = nz[-1]
                self.next_cdf[s, a, : len(nz)] = cdf
        self.reward = np.ascontiguousarray(mdp.reward, dtype=float)
        self.terminal = mdp.terminal_mask.astype(np.uint8)
        if start_states is None:
            start_states = np.flatnonzero(~mdp.terminal_mask)
        self.start_states = np.ascontiguousarray(start_states, dtype=np.int64)
        if len(self.start_states) == 0:
            raise ValueError("no start states")
        self.max_steps = int(max_steps)
        self.gamma = mdp.discount
        self.carry_i = np.array([-1, 0], dtype=np.int64)
        self.carry_f = np.zeros(1)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def reset_carry(self) -> None:
        self.carry_i[:] = (-1, 0)
        self.carry_f[0] = 0.0

    def fork(self) -> "TabularEnv":
        """Shares immutable tables; gets its own episode state."""
        other = object.__new__(TabularEnv)
        other.__dict__.update(self.__dict__)
        other.carry_i = np.array([-1, 0], dtype=np.int64)
        other.carry_f = np.zeros(1)
        return other


class GridEnv(TabularEnv):
    def __init__(self, task: GridTask):
        self.task = task
        self.encoding = GridEncoding(task)
        super().__init__(grid_to_mdp(task), self.encoding.start_states(), task.max_episode_steps)


def _alloc(n: int):
    return (np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64), np.empty(n),
            np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64),
            np.empty(n, dtype=np.uint8), np.empty(n, dtype=np.uint8), np.empty(n))


def _pack(outs, n, n_ep) -> Trajectory:
    s, a, r, s2, t, term, trunc, ep = outs
    return Trajectory(s[:n], a[:n], r[:n], s2[:n], t[:n], term[:n].astype(bool),
                      trunc[:n].astype(bool), ep[:n_ep])


def draw_uniforms(rng: np.random.Generator, n: int):
    u = rng.random((3, n))
    return u[0], u[1], u[2]


def soft_q_steps(env: TabularEnv, q: np.ndarray, prior: np.ndarray, beta: float, eta: float,
                 n_steps: int, rng: np.random.Generator, backend: str | None = None) -> Trajectory:
    """Runs ``n_steps`` of on-policy soft Q-learning, updating ``q`` in place.

    ``prior`` holds alpha*log(pi0) per (s, a), with -inf for excluded actions.
    """
    kern = get_backend(backend)
    u_act, u_trans, u_reset = draw_uniforms(rng, n_steps)
    outs = _alloc(n_steps)
    n_ep = kern.soft_q_rollout(
        q, prior, float(beta), float(env.gamma), float(eta), env.next_idx, env.next_cdf,
        env.reward, env.terminal, env.start_states, env.max_steps, n_steps,
        u_act, u_trans, u_reset, env.carry_i, env.carry_f, *outs)
    return _pack(outs, n_steps, n_ep)


def policy_steps(env: TabularEnv, probs: np.ndarray, n_steps: int, rng: np.random.Generator,
                 max_episodes: int = 0, backend: str | None = None) -> Trajectory:
    """Samples up to ``n_steps`` under the fixed policy table ``probs``."""
    kern = get_backend(backend)
    probs = np.ascontiguousarray(probs, dtype=float)
    u_act, u_trans, u_reset = draw_uniforms(rng, n_steps)
    outs = _alloc(n_steps)
    n, n_ep = kern.policy_rollout(
        probs, env.next_idx, env.next_cdf, env.reward, env.terminal, env.start_states,
        env.max_steps, n_steps, max_episodes, u_act, u_trans, u_reset,
        env.carry_i, env.carry_f, *outs)
    return _pack(outs, n, n_ep)


def evaluate_policy(env: TabularEnv, probs: np.ndarray, n_episodes: int,
                    rng: np.random.Generator, backend: str | None = None) -> float:
    """Mean undiscounted return over ``n_episodes`` fresh episodes of ``probs``."""
    probe = env.fork()
    traj = policy_steps(probe, probs, n_episodes * env.max_steps, rng,
                        max_episodes=n_episodes, backend=backend)
    return float(np.mean(traj.episode_returns))
