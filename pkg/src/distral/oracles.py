"""Exact reference computations for small MDPs.

Nothing here calls into the learners; the soft backups are recomputed from
scratch so the two paths can check each other.
"""

from __future__ import annotations

import numpy as np

from .envsuite import TabularMdp


def _policy_matrices(mdp: TabularMdp, policy: np.ndarray):
    p_pi = np.einsum("sa,sat->st", policy, mdp.transition)
    return p_pi


def exact_occupancy(mdp: TabularMdp, policy: np.ndarray, start: np.ndarray | None = None) -> np.ndarray:
    """Discounted state-action occupancy mu(s, a) = d(s) pi(a|s).

    ``d`` solves d = start + gamma P_pi^T d; total mass is 1 / (1 - gamma).
    """
    start = mdp.nonterminal_start() if start is None else np.asarray(start, dtype=float)
    p_pi = _policy_matrices(mdp, policy)
    system = np.eye(mdp.n_states) - mdp.discount * p_pi.T
    try:
        d = np.linalg.solve(system, start)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"occupancy system is singular: {exc}") from exc
    resid = np.abs(system @ d - start).max()
    if resid > 1e-10:
        raise np.linalg.LinAlgError(f"occupancy solve residual {resid:.3e}")
    return d[:, None] * policy


def _log_probs(policy: np.ndarray, occupied: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        lp = np.log(policy)
    # Zero probability where nothing is visited contributes nothing.
    return np.where(occupied, lp, 0.0)


def regularized_reward_table(mdp: TabularMdp, pi0: np.ndarray, pi: np.ndarray,
                             alpha: float, beta: float) -> np.ndarray:
    """R + (alpha/beta) log pi0 - (1/beta) log pi, zero at terminal states."""
    with np.errstate(divide="ignore"):
        reg = mdp.reward - np.log(pi) / beta
        if alpha > 0:
            reg = reg + (alpha / beta) * np.log(pi0)
    reg[mdp.terminal_mask] = 0.0
    return reg


def exact_objective(mdps, pi0: np.ndarray, pis, cfg, start=None) -> float:
    """Sum over tasks of mu_i . (R_i + (alpha/beta) log pi0 - (1/beta) log pi_i).

    Terminal states contribute nothing (the episode has ended). Returns -inf
    if a zero-probability action has positive occupancy.
    """
    alpha, beta = cfg.alpha, cfg.beta
    total = 0.0
    for mdp, pi in zip(mdps, pis):
        mu = exact_occupancy(mdp, pi, start)
        mu[mdp.terminal_mask] = 0.0
        occupied = mu > 0
        if np.any(occupied & (pi <= 0)) or (alpha > 0 and np.any(occupied & (pi0 <= 0))):
            return -np.inf
        lp0 = _log_probs(pi0, occupied) if alpha > 0 else 0.0
        integrand = mdp.reward + (alpha / beta) * lp0 - _log_probs(pi, occupied) / beta
        total += float(np.sum(mu * integrand))
    return total


def policy_evaluation(mdp: TabularMdp, policy: np.ndarray, reward: np.ndarray | None = None):
    """Exact (V, Q) of ``policy`` for the given per-(s, a) reward table."""
    reward = mdp.reward if reward is None else reward
    r_pi = np.sum(policy * reward, axis=1)
    p_pi = _policy_matrices(mdp, policy)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_pi, r_pi)
    q = reward + mdp.discount * mdp.transition @ v
    return v, q


def finite_horizon_dp(mdp: TabularMdp, pi0: np.ndarray, cfg, horizon: int) -> np.ndarray:
    """Backward induction of the softened backups for ``horizon`` steps from V = 0."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    alpha, beta = cfg.alpha, cfg.beta
    weights = np.where(pi0 > 0, pi0, 0.0) ** alpha if alpha > 0 else np.ones_like(pi0)
    term = mdp.terminal_mask
    v = np.zeros(mdp.n_states)
    for _ in range(horizon):
        q = mdp.reward + mdp.discount * np.einsum("sat,t->sa", mdp.transition, v)
        shift = q.max(axis=1)
        v = shift + np.log(np.sum(weights * np.exp(beta * (q - shift[:, None])), axis=1)) / beta
        v[term] = 0.0
    return v


def truncated_occupancy(mdp: TabularMdp, policy: np.ndarray, start: np.ndarray, horizon: int) -> np.ndarray:
    """Power-series occupancy sum_{t < horizon} gamma^t d_t, an independent check on the solve."""
    p_pi = _policy_matrices(mdp, policy)
    d = np.asarray(start, dtype=float).copy()
    acc = np.zeros_like(d)
    g = 1.0
    for _ in range(horizon):
        acc += g * d
        d = d @ p_pi
        g *= mdp.discount
    return acc[:, None] * policy


def monte_carlo_objective(mdps, pi0, pis, cfg, start, n_traj: int, horizon: int,
                          rng: np.random.Generator):
    """Sampled estimate of :func:`exact_objective`; returns (mean, standard error)."""
    alpha, beta = cfg.alpha, cfg.beta
    per_traj = np.zeros(n_traj)
    for mdp, pi in zip(mdps, pis):
        reg = regularized_reward_table(mdp, pi0, pi, alpha, beta)
        S, A = pi.shape
        cdf_pi = np.cumsum(pi, axis=1)
        cdf_p = np.cumsum(mdp.transition, axis=2)
        s = np.searchsorted(np.cumsum(start), rng.random(n_traj), side="right").clip(0, S - 1)
        g = 1.0
        for _ in range(horizon):
            a = (rng.random(n_traj)[:, None] >= cdf_pi[s]).sum(axis=1).clip(0, A - 1)
            per_traj += g * reg[s, a]
            u = rng.random(n_traj)[:, None]
            s = (u >= cdf_p[s, a]).sum(axis=1).clip(0, S - 1)
            g *= mdp.discount
    return float(per_traj.mean()), float(per_traj.std(ddof=1) / np.sqrt(n_traj))
