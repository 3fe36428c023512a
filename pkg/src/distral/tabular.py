"""Soft Q-learning and distillation for tabular tasks.

Values follow the KL+entropy regularized objective with reparameterization
``alpha = c_kl / (c_kl + c_ent)`` and ``beta = 1 / (c_kl + c_ent)``:

    V(s)    = (1/beta) log sum_a pi0(a|s)^alpha exp(beta Q(s, a))
    Q(s, a) = R(s, a) + gamma sum_s' p(s'|s, a) V(s')
    pi(a|s) = pi0(a|s)^alpha exp(beta (Q(s, a) - V(s)))

Policies, Q tables and visitation counts are plain ``(n_states, n_actions)``
arrays.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .envsuite import TabularMdp
from .records import TaskCurve
from .rollout import TabularEnv, Trajectory, evaluate_policy, soft_q_steps

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
ROW_TOL = 1e-9


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iters: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iters} iterations)")
        self.residual = residual
        self.iters = iters


class UnvisitedStateWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RegularizationConfig:
    c_kl: float
    c_ent: float

    def __post_init__(self):
        if self.c_kl < 0 or self.c_ent < 0:
            raise ValueError("regularization costs must be nonnegative")
        if self.c_kl + self.c_ent <= 0:
            raise ValueError("c_kl + c_ent must be positive")

    @property
    def alpha(self) -> float:
        return self.c_kl / (self.c_kl + self.c_ent)

    @property
    def beta(self) -> float:
        return 1.0 / (self.c_kl + self.c_ent)

    @classmethod
    def from_alpha_beta(cls, alpha: float, beta: float) -> "RegularizationConfig":
        if not 0.0 <= alpha <= 1.0 or beta <= 0:
            raise ValueError(f"need alpha in [0, 1] and beta > 0, got {alpha}, {beta}")
        return cls(c_kl=alpha / beta, c_ent=(1.0 - alpha) / beta)


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def check_policy(probs: np.ndarray, tol: float = ROW_TOL) -> None:
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ValueError("policy has negative or non-finite entries")
    err = np.abs(probs.sum(axis=-1) - 1.0).max(initial=0.0)
    if err > tol:
        raise ValueError(f"policy rows deviate from 1 by {err:.3e}")


def prior_logits(pi0: np.ndarray, alpha: float) -> np.ndarray:
    """``alpha * log pi0`` with positive entries floored at PROB_FLOOR.

    Exact zeros carry zero weight when alpha > 0 (log weight -inf); with
    alpha = 0 every action has weight one.
    """
    pi0 = np.asarray(pi0, dtype=float)
    if alpha == 0:
        return np.zeros_like(pi0)
    out = np.full_like(pi0, -np.inf)
    pos = pi0 > 0
    out[pos] = alpha * np.log(np.maximum(pi0[pos], PROB_FLOOR))
    return out


def _soft_values(q: np.ndarray, prior: np.ndarray, beta: float) -> np.ndarray:
    z = prior + beta * q
    m = z.max(axis=-1, keepdims=True)
    if np.any(~np.isfinite(m)):
        raise ValueError("all actions have zero weight at some state")
    return (m[..., 0] + np.log(np.exp(z - m).sum(axis=-1))) / beta


def soft_state_value(q_row, pi0_row, cfg: RegularizationConfig) -> float:
    q_row = np.asarray(q_row, dtype=float)
    return float(_soft_values(q_row[None], prior_logits(np.asarray(pi0_row)[None], cfg.alpha), cfg.beta)[0])


def soft_values(q: np.ndarray, pi0: np.ndarray, cfg: RegularizationConfig) -> np.ndarray:
    """Row-wise :func:`soft_state_value`."""
    return _soft_values(q, prior_logits(pi0, cfg.alpha), cfg.beta)


def soft_bellman_backup(mdp: TabularMdp, q: np.ndarray, pi0: np.ndarray, cfg: RegularizationConfig):
    """One softened backup; returns ``(V from q, new Q)``. Terminal states have V = 0."""
    if q.shape != mdp.reward.shape or pi0.shape != mdp.reward.shape:
        raise ValueError(f"shape mismatch: q {q.shape}, pi0 {pi0.shape}, reward {mdp.reward.shape}")
    v = soft_values(q, pi0, cfg)
    v[mdp.terminal_mask] = 0.0
    return v, mdp.reward + mdp.discount * (mdp.transition @ v)


def soft_value_iteration(mdp: TabularMdp, pi0: np.ndarray, cfg: RegularizationConfig,
                         tol: float = 1e-10, max_iters: int = 100_000, q0: np.ndarray | None = None):
    """Iterates :func:`soft_bellman_backup` until the max-norm change in Q is below ``tol``.

    Returns ``(q, v, iters)`` with ``v`` consistent with the returned ``q``.
    """
    q = np.zeros_like(mdp.reward) if q0 is None else np.array(q0, dtype=float)
    residual = math.inf
    for it in range(1, max_iters + 1):
        _, q_new = soft_bellman_backup(mdp, q, pi0, cfg)
        residual = float(np.abs(q_new - q).max())
        q = q_new
        if residual <= tol:
            v = soft_values(q, pi0, cfg)
            v[mdp.terminal_mask] = 0.0
            return q, v, it
    raise ConvergenceError("soft value iteration did not converge", residual, max_iters)


def boltzmann_policy(q: np.ndarray, v: np.ndarray, pi0: np.ndarray, cfg: RegularizationConfig,
                     terminal: np.ndarray | None = None) -> np.ndarray:
    """pi(a|s) = pi0^alpha exp(beta (Q - V)).

    ``v`` must be the soft value of ``q`` (checked to 1e-6); rows at
    ``terminal`` states, where V is pinned to 0, are renormalized instead.
    """
    prior = prior_logits(pi0, cfg.alpha)
    v_check = _soft_values(q, prior, cfg.beta)
    free = np.ones(len(v), dtype=bool) if terminal is None else ~np.asarray(terminal, dtype=bool)
    gap = np.abs(v_check - v)[free]
    if gap.size and gap.max() > 1e-6:
        raise ValueError(f"v inconsistent with q: max gap {gap.max():.3e}")
    v_use = np.where(free, v, v_check)
    probs = np.exp(prior + cfg.beta * (q - v_use[:, None]))
    err = np.abs(probs.sum(axis=1) - 1.0).max(initial=0.0)
    if err > ROW_TOL:
        raise ValueError(f"Boltzmann rows deviate from 1 by {err:.3e}; (q, v) inconsistent")
    return probs


def task_policy_from_q(q: np.ndarray, pi0: np.ndarray, cfg: RegularizationConfig) -> np.ndarray:
    """Boltzmann policy with V computed from ``q`` itself."""
    return boltzmann_policy(q, soft_values(q, pi0, cfg), pi0, cfg)


def soft_q_rollout_update(env: TabularEnv, q: np.ndarray, pi0: np.ndarray, cfg: RegularizationConfig,
                          rollout_len: int, learn_rate: float, rng: np.random.Generator,
                          backend: str | None = None):
    """Acts ``rollout_len`` steps under the current Boltzmann policy, TD-updating ``q`` in place.

    Each transition applies Q(s,a) += lr (r + gamma V(s') - Q(s,a)) with V
    the soft value of the current table (zero at terminal s'). Episodes
    carry over between calls through ``env``.
    """
    if not 0.0 <= learn_rate <= 1.0:
        raise ValueError(f"learn_rate must lie in [0, 1], got {learn_rate}")
    traj = soft_q_steps(env, q, prior_logits(pi0, cfg.alpha), cfg.beta, learn_rate,
                        rollout_len, rng, backend=backend)
    return q, traj


def accumulate_visitations(counts: np.ndarray, traj: Trajectory, gamma: float) -> np.ndarray:
    """counts[s_t, a_t] += gamma**t in place, t counted from each episode's start."""
    if len(traj):
        np.add.at(counts, (traj.states, traj.actions), gamma ** traj.t.astype(float))
    return counts


def distill_ml(counts, pseudocount: float = 1.0) -> np.ndarray:
    """Smoothed maximum-likelihood fit of pi0 to the mixture of task visitations.

    pi0(a|s) is proportional to pseudocount + sum_i counts_i(s, a). Rows with a
    zero denominator (only possible with pseudocount 0) become uniform and
    trigger an :class:`UnvisitedStateWarning`.
    """
    if pseudocount < 0:
        raise ValueError("pseudocount must be nonnegative")
    total = np.sum(np.asarray(counts, dtype=float), axis=0) if isinstance(counts, (list, tuple)) \
        else np.asarray(counts, dtype=float)
    smoothed = total + pseudocount
    denom = smoothed.sum(axis=1, keepdims=True)
    empty = denom[:, 0] <= 0
    if np.any(empty):
        warnings.warn(f"{int(empty.sum())} states have no visitation mass; set uniform",
                      UnvisitedStateWarning, stacklevel=2)
        smoothed[empty] = 1.0
        denom[empty] = smoothed.shape[1]
    return smoothed / denom


@dataclass
class AlternatingSchedule:
    iterations: int
    rollouts_per_iteration: int = 1
    rollout_len: int = 10
    learn_rate: float = 0.1
    final_learn_rate: float | None = None  # linear decay when set
    pseudocount: float = 1.0
    distill: bool = True  # False keeps pi0 uniform: independent soft Q-learning per task
    count_decay: float = 1.0  # multiplier applied to counts before each refresh
    eval_every: int = 1000
    eval_episodes: int = 10
    log_every: int = 0

    def learn_rate_at(self, iteration: int) -> float:
        if self.final_learn_rate is None or self.iterations <= 1:
            return self.learn_rate
        frac = iteration / (self.iterations - 1)
        return self.learn_rate + frac * (self.final_learn_rate - self.learn_rate)

    @property
    def steps_per_iteration(self) -> int:
        return self.rollouts_per_iteration * self.rollout_len


class CurveTracker:
    """Turns a stream of training trajectories into a TaskCurve with periodic evaluation."""

    def __init__(self, task_id: int, eval_every: int, eval_episodes: int, rng: np.random.Generator):
        self.curve = TaskCurve(task_id)
        self.eval_every = eval_every
        self.eval_episodes = eval_episodes
        self.rng = rng
        self.steps = 0
        self._pending: list[float] = []

    def due(self, steps: int) -> bool:
        return self.eval_every > 0 and steps // self.eval_every > self.steps // self.eval_every

    def observe(self, traj: Trajectory, evaluate) -> None:
        """``evaluate(rng)`` returns (task_eval_return, distilled_eval_return)."""
        self._pending.extend(traj.episode_returns.tolist())
        new_steps = self.steps + len(traj)
        if self.due(new_steps):
            self.steps = new_steps
            self.record(evaluate)
        self.steps = new_steps

    def record(self, evaluate) -> None:
        train = float(np.mean(self._pending)) if self._pending else math.nan
        self._pending = []
        ev, dist = evaluate(self.rng)
        self.curve.append(self.steps, train, ev, dist)


def alternate_optimize(envs: list[TabularEnv], cfg: RegularizationConfig, schedule: AlternatingSchedule,
                       rng: np.random.Generator, backend: str | None = None):
    """Alternates per-task soft Q-learning rollouts with ML distillation of pi0.

    Returns ``(pi0, q_tables, curves)``; one :class:`TaskCurve` per task with
    an evaluation at step 0 and after every ``eval_every`` steps.
    """
    if not envs:
        raise ValueError("need at least one task")
    S, A = envs[0].n_states, envs[0].n_actions
    pi0 = uniform_policy(S, A)
    qs = [np.zeros((S, A)) for _ in envs]
    counts = [np.zeros((S, A)) for _ in envs]
    child = rng.spawn(2 * len(envs))
    train_rngs, eval_rngs = child[: len(envs)], child[len(envs):]
    trackers = [CurveTracker(i, schedule.eval_every, schedule.eval_episodes, eval_rngs[i])
                for i in range(len(envs))]

    def evaluator(i):
        def evaluate(r):
            pi_i = task_policy_from_q(qs[i], pi0, cfg)
            return (evaluate_policy(envs[i], pi_i, schedule.eval_episodes, r, backend),
                    evaluate_policy(envs[i], pi0, schedule.eval_episodes, r, backend))
        return evaluate

    if schedule.eval_every > 0:
        for i, tr in enumerate(trackers):
            tr.record(evaluator(i))
    for it in range(schedule.iterations):
        lr = schedule.learn_rate_at(it)
        for i, env in enumerate(envs):
            for _ in range(schedule.rollouts_per_iteration):
                _, traj = soft_q_rollout_update(env, qs[i], pi0, cfg, schedule.rollout_len, lr,
                                                train_rngs[i], backend)
                accumulate_visitations(counts[i], traj, env.gamma)
                trackers[i].observe(traj, evaluator(i))
        if schedule.distill:
            if schedule.count_decay != 1.0:
                for c in counts:
                    c *= schedule.count_decay
            pi0 = distill_ml(counts, schedule.pseudocount)
        if schedule.log_every and (it + 1) % schedule.log_every == 0:
            last = [tr.curve.eval_return[-1] for tr in trackers if len(tr.curve)]
            log.info("iteration %d: mean eval return %.3f", it + 1, float(np.mean(last)) if last else math.nan)
    return pi0, qs, [tr.curve for tr in trackers]


def exact_alternation(mdps: list[TabularMdp], cfg: RegularizationConfig, iterations: int,
                      start: np.ndarray | None = None, tol: float = 1e-12):
    """Alternation with exact inner steps: soft value iteration per task, then
    distillation from exact discounted occupancies. Returns ``(pi0, task_policies)``."""
    from .oracles import exact_occupancy

    S, A = mdps[0].reward.shape
    pi0 = uniform_policy(S, A)
    pis = []
    for _ in range(iterations):
        pis, occ = [], []
        for mdp in mdps:
            q, v, _ = soft_value_iteration(mdp, pi0, cfg, tol=tol)
            pi = boltzmann_policy(q, v, pi0, cfg, terminal=mdp.terminal_mask)
            pis.append(pi)
            occ.append(exact_occupancy(mdp, pi, mdp.nonterminal_start() if start is None else start))
        pi0 = distill_ml(occ, pseudocount=0.0)
    return pi0, pis


def table_to_json(table: np.ndarray) -> str:
    """State-indexed rows; infinities are not representable and rejected."""
    if not np.all(np.isfinite(table)):
        raise ValueError("table has non-finite entries")
    return json.dumps({"rows": np.asarray(table).tolist()})


def table_from_json(text: str) -> np.ndarray:
    return np.array(json.loads(text)["rows"], dtype=float)
