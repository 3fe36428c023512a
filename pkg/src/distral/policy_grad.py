"""Joint optimization of task and distilled policies by stochastic gradient ascent.

Tabular logit tables stand in for network columns:

* ``h`` (S, A): distilled logits, pi0 = softmax(h)
* ``f`` (n, S, A): task logits, carrying the beta factor already so the
  two-column task policy is softmax(alpha * h + f)
* ``v`` (n, S): per-task value baselines

Three architectures are supported. ``separate`` gives each task its own
column (pi_i = softmax(f_i)) next to a separate distilled column;
``two-column`` forms pi_i = softmax(w * h + f_i) with w = alpha unless set;
``shared-only`` uses softmax(h) for every task.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .oracles import exact_occupancy, policy_evaluation, regularized_reward_table
from .rollout import Trajectory

PROB_FLOOR = 1e-12
ARCHITECTURES = ("separate", "two-column", "shared-only")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def distilled_policy(h_row) -> np.ndarray:
    return softmax(h_row)


def task_policy(h_row, f_row, cfg, column_weight: float | None = None) -> np.ndarray:
    w = cfg.alpha if column_weight is None else column_weight
    return softmax(w * np.asarray(h_row, dtype=float) + np.asarray(f_row, dtype=float))


def soft_advantage(h_row, f_row, cfg) -> np.ndarray:
    """beta * A(a) = f(a) - log sum_a' pi0(a')^alpha exp(f(a'))."""
    f_row = np.asarray(f_row, dtype=float)
    z = cfg.alpha * log_softmax(h_row) + f_row
    m = z.max(axis=-1, keepdims=True)
    return f_row - (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))


@dataclass
class Diagnostics:
    floored_probs: int = 0


def regularized_reward(r, pi0_prob, pii_prob, cfg, diag: Diagnostics | None = None):
    """r + (alpha/beta) log pi0 - (1/beta) log pi_i, probabilities floored at 1e-12."""
    pi0_prob = np.asarray(pi0_prob, dtype=float)
    pii_prob = np.asarray(pii_prob, dtype=float)
    if diag is not None:
        diag.floored_probs += int(np.sum(pii_prob < PROB_FLOOR))
        if cfg.alpha > 0:
            diag.floored_probs += int(np.sum(pi0_prob < PROB_FLOOR))
    out = np.asarray(r, dtype=float) - np.log(np.maximum(pii_prob, PROB_FLOOR)) / cfg.beta
    if cfg.alpha > 0:
        out = out + (cfg.alpha / cfg.beta) * np.log(np.maximum(pi0_prob, PROB_FLOOR))
    return out if out.ndim else float(out)


@dataclass
class PolicyParams:
    h: np.ndarray
    f: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_tasks: int, n_states: int, n_actions: int) -> "PolicyParams":
        return cls(np.zeros((n_states, n_actions)), np.zeros((n_tasks, n_states, n_actions)),
                   np.zeros((n_tasks, n_states)))

    @classmethod
    def random(cls, n_tasks, n_states, n_actions, rng, scale=1.0) -> "PolicyParams":
        return cls(scale * rng.standard_normal((n_states, n_actions)),
                   scale * rng.standard_normal((n_tasks, n_states, n_actions)),
                   scale * rng.standard_normal((n_tasks, n_states)))

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.h.copy(), self.f.copy(), self.v.copy())

    def to_json(self) -> str:
        return json.dumps({"h": self.h.tolist(), "f": self.f.tolist(), "v": self.v.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "PolicyParams":
        d = json.loads(text)
        return cls(np.array(d["h"], dtype=float), np.array(d["f"], dtype=float),
                   np.array(d["v"], dtype=float))


@dataclass
class GradientAccumulator:
    d_h: np.ndarray
    d_f: np.ndarray
    d_v: np.ndarray

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "GradientAccumulator":
        return cls(np.zeros_like(params.h), np.zeros_like(params.f), np.zeros_like(params.v))

    def __add__(self, other: "GradientAccumulator") -> "GradientAccumulator":
        return GradientAccumulator(self.d_h + other.d_h, self.d_f + other.d_f, self.d_v + other.d_v)

    def __iadd__(self, other: "GradientAccumulator") -> "GradientAccumulator":
        self.d_h += other.d_h
        self.d_f += other.d_f
        self.d_v += other.d_v
        return self

    def zero(self) -> None:
        self.d_h[...] = 0.0
        self.d_f[...] = 0.0
        self.d_v[...] = 0.0

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.d_h)) and np.all(np.isfinite(self.d_f))
                    and np.all(np.isfinite(self.d_v)))


@dataclass(frozen=True)
class Architecture:
    kind: str
    column_weight: float | None = None  # None: alpha (two-column only)

    def __post_init__(self):
        if self.kind not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.kind!r}")

    def weight(self, cfg) -> float:
        return cfg.alpha if self.column_weight is None else self.column_weight

    def task_logits(self, params: PolicyParams, task: int, cfg) -> np.ndarray:
        if self.kind == "shared-only":
            return params.h
        if self.kind == "separate":
            return params.f[task]
        return self.weight(cfg) * params.h + params.f[task]

    def task_probs(self, params: PolicyParams, task: int, cfg) -> np.ndarray:
        return softmax(self.task_logits(params, task, cfg))

    def distilled_probs(self, params: PolicyParams) -> np.ndarray:
        return softmax(params.h)

    @property
    def has_distilled_prior(self) -> bool:
        """Whether softmax(h) is the pi0 inside the KL term."""
        return self.kind != "shared-only"


@dataclass
class _BatchTerms:
    states: np.ndarray
    disc: np.ndarray  # gamma ** t with t the in-episode index
    returns: np.ndarray  # regularized returns from each step, reset per episode
    weights: np.ndarray  # disc * (returns - baseline)
    score: np.ndarray  # onehot(a_t) - pi_i(.|s_t), shape (T, A)
    pi_i: np.ndarray
    pi0: np.ndarray
    diag: Diagnostics = field(default_factory=Diagnostics)


def discounted_returns(rewards, episode_end, bootstrap_values, gamma):
    """G_t = r_t + gamma G_{t+1}, restarting at episode ends.

    ``bootstrap_values[t]`` is added (discounted) after the last step of a
    segment that ends without termination; pass zero for terminal steps.
    """
    T = len(rewards)
    out = np.empty(T)
    g = 0.0
    for t in range(T - 1, -1, -1):
        if episode_end[t] or t == T - 1:
            g = bootstrap_values[t]
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def _batch_terms(traj: Trajectory, params: PolicyParams, task: int, cfg, arch: Architecture,
                 gamma: float, use_baseline: bool, bootstrap: bool) -> _BatchTerms:
    s, a = traj.states, traj.actions
    logits = arch.task_logits(params, task, cfg)
    pi_i = softmax(logits[s])
    pi0 = softmax(params.h[s]) if arch.has_distilled_prior else pi_i
    diag = Diagnostics()
    idx = np.arange(len(s))
    ent_cfg = cfg if arch.has_distilled_prior else _EntropyOnly(cfg.beta)
    r_reg = regularized_reward(traj.rewards, pi0[idx, a], pi_i[idx, a], ent_cfg, diag)
    r_reg = np.atleast_1d(r_reg)
    v = params.v[task]
    boot = np.zeros(len(s))
    if bootstrap:
        boot = np.where(traj.terminal, 0.0, v[traj.next_states])
    returns = discounted_returns(r_reg, traj.episode_ends, boot, gamma)
    disc = gamma ** traj.t.astype(float)
    baseline = v[s] if use_baseline else 0.0
    score = -pi_i
    score[idx, a] += 1.0
    return _BatchTerms(s, disc, returns, disc * (returns - baseline), score, pi_i, pi0, diag)


@dataclass(frozen=True)
class _EntropyOnly:
    beta: float
    alpha: float = 0.0


def task_gradient(traj: Trajectory, params: PolicyParams, task: int, cfg, arch: Architecture,
                  gamma: float, use_baseline: bool = True, bootstrap: bool = True,
                  terms: _BatchTerms | None = None) -> GradientAccumulator:
    """Policy-gradient ascent direction for the task column, plus value regression.

    d_f[task][s_t] += gamma^t (G_t - v(s_t)) (onehot(a_t) - pi_i(.|s_t)) and
    d_v[task][s_t] += G_t - v(s_t). Under ``shared-only`` the policy
    gradient lands in d_h since that column is the task policy.
    """
    out = GradientAccumulator.zeros_like(params)
    if len(traj) == 0:
        return out
    bt = terms or _batch_terms(traj, params, task, cfg, arch, gamma, use_baseline, bootstrap)
    contrib = bt.weights[:, None] * bt.score
    target = out.d_h if arch.kind == "shared-only" else out.d_f[task]
    np.add.at(target, bt.states, contrib)
    np.add.at(out.d_v[task], bt.states, bt.returns - params.v[task][bt.states])
    return out


def matching_term(traj: Trajectory, params: PolicyParams, task: int, cfg, arch: Architecture,
                  gamma: float, terms: _BatchTerms | None = None) -> np.ndarray:
    """(alpha/beta) sum_t gamma^t (pi_i(.|s_t) - pi0(.|s_t)) placed at rows s_t."""
    out = np.zeros_like(params.h)
    if len(traj) == 0 or cfg.alpha == 0 or not arch.has_distilled_prior:
        return out
    bt = terms or _batch_terms(traj, params, task, cfg, arch, gamma, False, False)
    np.add.at(out, bt.states, (cfg.alpha / cfg.beta) * bt.disc[:, None] * (bt.pi_i - bt.pi0))
    return out


def distilled_gradient(trajs, params: PolicyParams, cfg, arch: Architecture, gamma: float,
                       use_baseline: bool = True, bootstrap: bool = True) -> GradientAccumulator:
    """d_h from every task's batch: the policy-gradient term through the shared
    column (weight alpha, two-column only) plus the probability-matching term.

    ``trajs`` maps task index to trajectory (a list is taken positionally).
    """
    out = GradientAccumulator.zeros_like(params)
    if cfg.alpha == 0 or not arch.has_distilled_prior:
        return out
    items = trajs.items() if isinstance(trajs, dict) else enumerate(trajs)
    for task, traj in items:
        if len(traj) == 0:
            continue
        bt = _batch_terms(traj, params, task, cfg, arch, gamma, use_baseline, bootstrap)
        if arch.kind == "two-column":
            np.add.at(out.d_h, bt.states, cfg.alpha * bt.weights[:, None] * bt.score)
        out.d_h += matching_term(traj, params, task, cfg, arch, gamma, terms=bt)
    return out


def shared_column_gradient(trajs, params: PolicyParams, cfg, arch: Architecture, gamma: float,
                           use_baseline: bool = True, bootstrap: bool = True) -> GradientAccumulator:
    """Plain policy gradient into a shared column with fixed weight and no KL term."""
    out = GradientAccumulator.zeros_like(params)
    w = arch.weight(cfg)
    items = trajs.items() if isinstance(trajs, dict) else enumerate(trajs)
    for task, traj in items:
        if len(traj) == 0:
            continue
        bt = _batch_terms(traj, params, task, cfg, arch, gamma, use_baseline, bootstrap)
        np.add.at(out.d_h, bt.states, w * bt.weights[:, None] * bt.score)
    return out


def entropy_regularized_gradient(traj: Trajectory, logits: np.ndarray, v: np.ndarray, beta: float,
                                 gamma: float, use_baseline: bool = True, bootstrap: bool = True):
    """Entropy-regularized actor-critic gradient for a single logits table.

    Written step by step, independently of :func:`task_gradient`; it is the
    reference the alpha = 0 configurations must reduce to. Returns
    ``(d_logits, d_v)``.
    """
    d_logits = np.zeros_like(logits)
    d_v = np.zeros_like(v)
    T = len(traj)
    g = 0.0
    for t in range(T - 1, -1, -1):
        s, a = int(traj.states[t]), int(traj.actions[t])
        lp = log_softmax(logits[s])
        r = traj.rewards[t] - max(lp[a], np.log(PROB_FLOOR)) / beta
        if traj.terminal[t]:
            g = 0.0
        elif traj.truncated[t] or t == T - 1:
            g = v[traj.next_states[t]] if bootstrap else 0.0
        g = r + gamma * g
        adv = g - (v[s] if use_baseline else 0.0)
        probs = np.exp(lp)
        grad_logp = -probs
        grad_logp[a] += 1.0
        d_logits[s] += gamma ** int(traj.t[t]) * adv * grad_logp
        d_v[s] += g - v[s]
    return d_logits, d_v


def sgd_delta(params: PolicyParams, grads: GradientAccumulator, step_size: float,
              value_l2_coeff: float = 0.0, value_step: float | None = None) -> PolicyParams:
    """Additive update: ascent on logits, regression step on values, and an
    optional L2 pull of each task's values toward the across-task mean."""
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    if not grads.is_finite():
        raise FloatingPointError("non-finite gradient; step aborted")
    vs = step_size if value_step is None else value_step
    dv = vs * grads.d_v
    if value_l2_coeff:
        dv = dv - step_size * value_l2_coeff * (params.v - params.v.mean(axis=0, keepdims=True))
    return PolicyParams(step_size * grads.d_h, step_size * grads.d_f, dv)


def sgd_apply(params: PolicyParams, grads: GradientAccumulator, step_size: float,
              value_l2_coeff: float = 0.0, value_step: float | None = None) -> PolicyParams:
    d = sgd_delta(params, grads, step_size, value_l2_coeff, value_step)
    return PolicyParams(params.h + d.h, params.f + d.f, params.v + d.v)


def _policies(params: PolicyParams, cfg, arch: Architecture, n_tasks: int):
    pis = [arch.task_probs(params, i, cfg) for i in range(n_tasks)]
    pi0 = arch.distilled_probs(params) if arch.has_distilled_prior else None
    return pi0, pis


def joint_objective(mdps, params: PolicyParams, cfg, arch: Architecture, start=None) -> float:
    """Exact objective as a function of the logit tables."""
    from .oracles import exact_objective

    pi0, pis = _policies(params, cfg, arch, len(mdps))
    if pi0 is None:
        pi0 = np.full_like(pis[0], 1.0 / pis[0].shape[1])
        cfg = _EntropyOnly(cfg.beta)
    return exact_objective(mdps, pi0, pis, cfg, start)


def exact_gradient(mdps, params: PolicyParams, cfg, arch: Architecture, start=None) -> GradientAccumulator:
    """Expected value of the sampled gradients, from occupancies and exact Q of the
    regularized reward (the d_v part is left at zero)."""
    out = GradientAccumulator.zeros_like(params)
    pi0, pis = _policies(params, cfg, arch, len(mdps))
    reg_cfg = cfg if arch.has_distilled_prior else _EntropyOnly(cfg.beta)
    for i, (mdp, pi) in enumerate(zip(mdps, pis)):
        prior = pi0 if pi0 is not None else np.ones_like(pi)
        r_reg = regularized_reward_table(mdp, prior, pi, reg_cfg.alpha, reg_cfg.beta)
        v, q = policy_evaluation(mdp, pi, r_reg)
        mu = exact_occupancy(mdp, pi, start)
        mu[mdp.terminal_mask] = 0.0
        d = mu.sum(axis=1)
        g_logits = d[:, None] * pi * (q - v[:, None])
        if arch.kind == "shared-only":
            out.d_h += g_logits
            continue
        out.d_f[i] = g_logits
        if arch.kind == "two-column":
            out.d_h += arch.weight(cfg) * g_logits
        if cfg.alpha > 0:
            out.d_h += (cfg.alpha / cfg.beta) * d[:, None] * (pi - pi0)
    return out


def finite_difference_gradient(mdps, params: PolicyParams, cfg, arch: Architecture, start=None,
                               eps: float = 1e-5) -> GradientAccumulator:
    """Central differences of :func:`joint_objective` over h and f."""
    out = GradientAccumulator.zeros_like(params)
    for name, grad in (("h", out.d_h), ("f", out.d_f)):
        base = getattr(params, name)
        for idx in np.ndindex(base.shape):
            old = base[idx]
            base[idx] = old + eps
            up = joint_objective(mdps, params, cfg, arch, start)
            base[idx] = old - eps
            down = joint_objective(mdps, params, cfg, arch, start)
            base[idx] = old
            grad[idx] = (up - down) / (2 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|, 1e-12)."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def write_gradient_check_csv(path, checks) -> None:
    """``checks`` yields (point id, analytic, numeric) accumulators; one row per
    parameter group (h, f) and point."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("point_id", "group", "analytic_norm", "numeric_norm", "rel_error"))
        for pid, a, n in checks:
            for group in ("d_h", "d_f"):
                ga, gn = getattr(a, group), getattr(n, group)
                w.writerow((pid, group, repr(float(np.abs(ga).max(initial=0.0))),
                            repr(float(np.abs(gn).max(initial=0.0))), repr(relative_error(ga, gn))))
