"""Algorithm registry, trainers, and multitask experiment execution."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .envsuite import GridTask
from .experiments import aggregate_curves, compute_auc, final_score, record_auc
from .harness import SharedParams, WorkerConfig, run_alternating, run_joint
from .policy_grad import (
    Architecture,
    GradientAccumulator,
    PolicyParams,
    distilled_gradient,
    sgd_delta,
    shared_column_gradient,
    softmax,
    task_gradient,
)
from .records import RunRecord, TaskCurve
from .rollout import GridEnv, TabularEnv, evaluate_policy, policy_steps
from .tabular import AlternatingSchedule, CurveTracker, RegularizationConfig, alternate_optimize

log = logging.getLogger(__name__)

KL_ENT_ALPHA = 0.5

# name -> (alpha row, architecture, optimization, column weight)
ALGORITHMS = {
    "A3C": ("zero", "separate", "joint", None),
    "A3C_multitask": ("zero", "shared-only", "joint", None),
    "A3C_2col": ("zero", "two-column", "joint", 1.0),
    "KL_1col": ("one", "separate", "joint", None),
    "KL_2col": ("one", "two-column", "joint", None),
    "KL+ent_1col": ("between", "separate", "joint", None),
    "KL+ent_2col": ("between", "two-column", "joint", None),
    "tabular_distral": ("any", "separate", "alternating", None),
    "soft_q": ("any", "separate", "alternating", None),
}
JOINT_ALGORITHMS = ("A3C", "A3C_multitask", "A3C_2col", "KL_1col", "KL_2col", "KL+ent_1col", "KL+ent_2col")
DEFAULT_ALPHA = {"zero": 0.0, "one": 1.0, "between": KL_ENT_ALPHA, "any": 1.0}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    cfg: RegularizationConfig
    architecture: str
    optimization: str
    column_weight: float | None = None

    def validate(self) -> None:
        if self.name not in ALGORITHMS:
            raise SpecError(f"unknown algorithm {self.name!r}")
        row, arch, opt, _ = ALGORITHMS[self.name]
        a = self.cfg.alpha
        if row == "zero" and a != 0:
            raise SpecError(f"{self.name} requires alpha = 0, got {a}")
        if row == "one" and a != 1:
            raise SpecError(f"{self.name} requires alpha = 1, got {a}")
        if row == "between" and not 0 < a < 1:
            raise SpecError(f"{self.name} requires 0 < alpha < 1, got {a}")
        if self.architecture != arch:
            raise SpecError(f"{self.name} requires architecture {arch!r}, got {self.architecture!r}")
        if self.optimization != opt:
            raise SpecError(f"{self.name} requires {opt} optimization, got {self.optimization!r}")

    @property
    def arch(self) -> Architecture:
        return Architecture(self.architecture, self.column_weight)


def make_spec(name: str, entropy_cost: float = 0.2, alpha: float | None = None) -> AlgorithmSpec:
    """Spec with beta = 1 / entropy_cost and the row's default alpha."""
    if name not in ALGORITHMS:
        raise SpecError(f"unknown algorithm {name!r}; known: {sorted(ALGORITHMS)}")
    row, arch, opt, w = ALGORITHMS[name]
    a = DEFAULT_ALPHA[row] if alpha is None else alpha
    spec = AlgorithmSpec(name, RegularizationConfig.from_alpha_beta(a, 1.0 / entropy_cost), arch, opt, w)
    spec.validate()
    return spec


class JointTrainer:
    """Joint stochastic-gradient trainer for the seven joint-optimization algorithms."""

    def __init__(self, spec: AlgorithmSpec, n_tasks: int, n_states: int, n_actions: int,
                 gamma: float, step_size: float = 0.5, value_l2_coeff: float = 0.0,
                 value_step: float | None = None, use_baseline: bool = True):
        spec.validate()
        if spec.optimization != "joint":
            raise SpecError(f"{spec.name} is not a joint-optimization algorithm")
        self.spec = spec
        self.cfg = spec.cfg
        self.arch = spec.arch
        self.gamma = gamma
        self.step_size = step_size
        self.value_l2_coeff = value_l2_coeff
        self.value_step = value_step
        self.use_baseline = use_baseline
        self.n_tasks = n_tasks
        self.params = PolicyParams.zeros(n_tasks, n_states, n_actions)

    @property
    def has_distilled(self) -> bool:
        return self.spec.name != "A3C"

    def task_policy(self, task: int, params: PolicyParams | None = None) -> np.ndarray:
        return self.arch.task_probs(self.params if params is None else params, task, self.cfg)

    def distilled_policy(self, params: PolicyParams | None = None) -> np.ndarray:
        """softmax(h); for A3C this stays the untrained (uniform) column."""
        return softmax((self.params if params is None else params).h)

    def compute_gradient(self, params: PolicyParams, task: int, traj) -> GradientAccumulator:
        g = task_gradient(traj, params, task, self.cfg, self.arch, self.gamma, self.use_baseline)
        batch = {task: traj}
        if self.cfg.alpha > 0:
            g += distilled_gradient(batch, params, self.cfg, self.arch, self.gamma, self.use_baseline)
        elif self.arch.kind == "two-column":
            g += shared_column_gradient(batch, params, self.cfg, self.arch, self.gamma, self.use_baseline)
        return g

    def delta(self, params: PolicyParams, grads: GradientAccumulator) -> PolicyParams:
        return sgd_delta(params, grads, self.step_size, self.value_l2_coeff, self.value_step)

    def step(self, task: int, traj) -> GradientAccumulator:
        grads = self.compute_gradient(self.params, task, traj)
        d = self.delta(self.params, grads)
        self.params.h += d.h
        self.params.f += d.f
        self.params.v += d.v
        return grads


class AlternatingTrainer:
    """Holds the configuration for alternating soft Q-learning + distillation."""

    def __init__(self, spec: AlgorithmSpec, schedule: AlternatingSchedule):
        spec.validate()
        self.spec = spec
        self.cfg = spec.cfg
        self.schedule = replace(schedule, distill=spec.name != "soft_q")

    def run(self, envs, rng, wcfg: WorkerConfig | None = None, backend=None):
        if wcfg is None:
            pi0, qs, curves = alternate_optimize(envs, self.cfg, self.schedule, rng, backend)
            return pi0, qs, curves, {}
        res = run_alternating(envs, self.cfg, self.schedule, wcfg, rng, backend)
        if res.errors:
            raise RuntimeError("; ".join(res.errors))
        return res.pi0, res.q, res.curves, res.metrics


def build_algorithm(spec: AlgorithmSpec, n_tasks: int, n_states: int, n_actions: int, gamma: float = 0.95,
                    **hyper):
    """Trainer for ``spec``. Joint specs accept step_size / value_l2_coeff /
    use_baseline; alternating specs accept ``schedule``."""
    spec.validate()
    if spec.optimization == "alternating":
        return AlternatingTrainer(spec, hyper.get("schedule") or AlternatingSchedule(iterations=0))
    return JointTrainer(spec, n_tasks, n_states, n_actions, gamma, **hyper)


def train_joint_serial(trainer: JointTrainer, envs: Sequence[TabularEnv], budget: int, batch_len: int,
                       rng: np.random.Generator, eval_every: int = 1000, eval_episodes: int = 10,
                       backend=None) -> list[TaskCurve]:
    """Single-threaded reference loop: tasks take turns, one batch each."""
    n = len(envs)
    child = rng.spawn(2 * n)
    train_rngs, eval_rngs = child[:n], child[n:]
    trackers = [CurveTracker(i, eval_every, eval_episodes, eval_rngs[i]) for i in range(n)]
    done = [0] * n

    def evaluator(i):
        def evaluate(r):
            ev = evaluate_policy(envs[i], trainer.task_policy(i), eval_episodes, r, backend)
            dist = evaluate_policy(envs[i], trainer.distilled_policy(), eval_episodes, r, backend)
            return ev, dist
        return evaluate

    if eval_every > 0:
        for i in range(n):
            trackers[i].record(evaluator(i))
    while any(d < budget for d in done):
        for i, env in enumerate(envs):
            k = min(batch_len, budget - done[i])
            if k <= 0:
                continue
            traj = policy_steps(env, trainer.task_policy(i), k, train_rngs[i], backend=backend)
            trainer.step(i, traj)
            done[i] += k
            trackers[i].observe(traj, evaluator(i))
    return [tr.curve for tr in trackers]


@dataclass
class ExperimentPlan:
    tasks: list[GridTask]
    algorithm: str
    hyper_grid: list[tuple[float, float]]  # (entropy cost 1/beta, step size)
    seeds: list[int]
    budget: int
    alpha: float | None = None
    eval_every: int = 1000
    eval_episodes: int = 10
    workers: int = 1
    serialized: bool = True
    batch_len: int = 20
    value_l2_coeff: float = 0.0
    value_step: float = 0.02  # summed per-batch regression; keep small for stability
    rollout_len: int = 10
    rollouts_per_iteration: int = 1
    pseudocount: float = 1.0
    final_window: float = 0.05

    def validate(self) -> None:
        if not self.tasks or not self.seeds or not self.hyper_grid:
            raise ValueError("plan needs non-empty tasks, seeds and hyper_grid")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        make_spec(self.algorithm, self.hyper_grid[0][0], self.alpha)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [t.to_dict() for t in self.tasks]
        d["hyper_grid"] = [list(h) for h in self.hyper_grid]
        return d


def _worker_config(plan: ExperimentPlan) -> WorkerConfig | None:
    if plan.workers <= 1 and plan.serialized:
        return None
    return WorkerConfig(plan.workers, plan.batch_len, "serialized" if plan.serialized else "lock-free")


def run_single(plan: ExperimentPlan, hyper_id: int, seed: int, backend=None) -> RunRecord:
    entropy_cost, step_size = plan.hyper_grid[hyper_id]
    spec = make_spec(plan.algorithm, entropy_cost, plan.alpha)
    hyper = {"entropy_cost": entropy_cost, "step_size": step_size, "alpha": spec.cfg.alpha,
             "beta": spec.cfg.beta}
    envs = [GridEnv(t) for t in plan.tasks]
    S, A = envs[0].n_states, envs[0].n_actions
    rng = np.random.default_rng(seed)
    wcfg = _worker_config(plan)
    extra: dict = {}
    if spec.optimization == "alternating":
        W = wcfg.workers_per_task if wcfg else 1
        per_iter = W * plan.rollouts_per_iteration * plan.rollout_len
        sched = AlternatingSchedule(iterations=plan.budget // per_iter,
                                    rollouts_per_iteration=plan.rollouts_per_iteration,
                                    rollout_len=plan.rollout_len, learn_rate=step_size,
                                    pseudocount=plan.pseudocount, eval_every=plan.eval_every,
                                    eval_episodes=plan.eval_episodes)
        trainer = build_algorithm(spec, len(envs), S, A, schedule=sched)
        pi0, qs, curves, metrics = trainer.run(envs, rng, wcfg, backend)
        extra["pi0"] = pi0
        extra["q"] = qs
    else:
        trainer = build_algorithm(spec, len(envs), S, A, gamma=plan.tasks[0].discount,
                                  step_size=step_size, value_l2_coeff=plan.value_l2_coeff,
                                  value_step=plan.value_step)
        if wcfg is None:
            curves = train_joint_serial(trainer, envs, plan.budget, plan.batch_len, rng,
                                        plan.eval_every, plan.eval_episodes, backend)
            metrics = {}
        else:
            shared = SharedParams(trainer.params, wcfg.staleness_mode)
            res = run_joint(trainer, envs, shared, wcfg, plan.budget, rng, plan.eval_every,
                            plan.eval_episodes, trainer.distilled_policy, backend=backend)
            if res.errors:
                raise RuntimeError("; ".join(res.errors))
            curves, metrics = res.curves, res.metrics
        extra["params"] = trainer.params
    rec = RunRecord(plan.algorithm, hyper_id, hyper, seed, curves, metrics=metrics)
    rec.final_score = final_score(rec, plan.budget, plan.final_window)
    rec.auc = record_auc(rec)
    rec.artifacts = extra
    return rec


def run_plan(plan: ExperimentPlan, backend=None) -> list[RunRecord]:
    """Every (hyper setting, seed) pair; a failing run is recorded and skipped."""
    plan.validate()
    records = []
    for hyper_id in range(len(plan.hyper_grid)):
        for seed in plan.seeds:
            try:
                rec = run_single(plan, hyper_id, seed, backend)
            except Exception as exc:  # noqa: BLE001
                log.exception("run %s h%d s%d failed", plan.algorithm, hyper_id, seed)
                entropy_cost, step_size = plan.hyper_grid[hyper_id]
                rec = RunRecord(plan.algorithm, hyper_id,
                                {"entropy_cost": entropy_cost, "step_size": step_size}, seed,
                                [], status="failed", error=repr(exc))
            records.append(rec)
    return records


def select_best_hypers(records: Sequence[RunRecord]):
    """Setting with the highest mean AUC over tasks and seeds; ties go to the
    larger entropy cost. Returns (hyper dict, aggregated eval curve)."""
    by_setting: dict[int, list[RunRecord]] = {}
    for r in records:
        if r.status == "ok" and not math.isnan(r.auc):
            by_setting.setdefault(r.hyper_id, []).append(r)
    if not by_setting:
        raise ValueError("no complete records")

    def key(hid):
        rs = by_setting[hid]
        return (float(np.mean([r.auc for r in rs])), rs[0].hyper.get("entropy_cost", 0.0))

    best = max(by_setting, key=key)
    rs = by_setting[best]
    curves = [c for r in rs for c in r.curves]
    return rs[0].hyper, aggregate_curves(curves)


def plan_from_config(cfg: dict, algorithm: str) -> ExperimentPlan:
    """One plan for ``algorithm`` from a parsed JSON config (see README)."""
    from .envsuite import make_task_suite

    if "tasks" in cfg and isinstance(cfg["tasks"], list):
        tasks = [GridTask.from_dict(t) for t in cfg["tasks"]]
    else:
        tc = cfg.get("task_suite", {})
        layout = tc.get("layout", {})
        tasks = make_task_suite(int(tc.get("n_tasks", 4)), int(tc.get("seed", 0)),
                                room_width=int(layout.get("room_width", 5)),
                                room_height=int(layout.get("room_height", 5)),
                                corridor_length=int(layout.get("corridor_length", 3)),
                                discount=float(tc.get("discount", 0.95)),
                                max_episode_steps=int(tc.get("max_episode_steps", 100)))
    grid = cfg.get("hyper_grid", [[0.2, 0.1]])
    hyper_grid = [(float(h["entropy_cost"]), float(h["step_size"])) if isinstance(h, dict)
                  else (float(h[0]), float(h[1])) for h in grid]
    overrides = cfg.get("algorithm_overrides", {}).get(algorithm, {})
    if "hyper_grid" in overrides:
        hyper_grid = [tuple(map(float, h)) for h in overrides["hyper_grid"]]
    keys = ("eval_every", "eval_episodes", "workers", "serialized", "batch_len", "value_l2_coeff", "value_step",
            "rollout_len", "rollouts_per_iteration", "pseudocount", "final_window")
    opts = {k: cfg[k] for k in keys if k in cfg}
    opts.update({k: overrides[k] for k in keys if k in overrides})
    plan = ExperimentPlan(tasks=tasks, algorithm=algorithm, hyper_grid=hyper_grid,
                          seeds=[int(s) for s in cfg.get("seeds", [0])], budget=int(cfg["budget"]),
                          alpha=overrides.get("alpha", cfg.get("alpha", {}).get(algorithm)
                                              if isinstance(cfg.get("alpha"), dict) else None),
                          **opts)
    plan.validate()
    return plan


def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
