"""Asynchronous multi-worker training over a shared parameter store.

Two scheduling modes:

* ``serialized``: workers are generators stepped round-robin on the calling
  thread, so runs are deterministic.
* ``lock-free``: one thread per worker. Snapshots are taken without locking
  and may mix elementwise states from concurrent writes (stale reads, as in
  Hogwild). Each additive update is applied as a single atomic add under a
  short write lock, so no update is lost and the update counter is exact.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol

import numpy as np

from .policy_grad import PolicyParams
from .rollout import TabularEnv, Trajectory, evaluate_policy, policy_steps
from .tabular import (
    AlternatingSchedule,
    CurveTracker,
    RegularizationConfig,
    accumulate_visitations,
    distill_ml,
    soft_q_rollout_update,
    task_policy_from_q,
    uniform_policy,
)

log = logging.getLogger(__name__)

MODES = ("serialized", "lock-free")


@dataclass(frozen=True)
class WorkerConfig:
    workers_per_task: int = 4
    batch_len: int = 20
    staleness_mode: str = "lock-free"
    barrier_timeout: float = 60.0

    def __post_init__(self):
        if self.workers_per_task < 1:
            raise ValueError("workers_per_task must be at least 1")
        if self.batch_len < 1:
            raise ValueError("batch_len must be at least 1")
        if self.staleness_mode not in MODES:
            raise ValueError(f"staleness_mode must be one of {MODES}")


class SharedParams:
    """Shared PolicyParams with snapshot reads and additive applies."""

    def __init__(self, params: PolicyParams, mode: str = "lock-free"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.params = params
        self.mode = mode
        self._write = threading.Lock()
        self.updates = 0
        self.staleness: list[int] = []

    def snapshot(self) -> tuple[PolicyParams, int]:
        if self.mode == "serialized":
            with self._write:
                return self.params.copy(), self.updates
        version = self.updates
        return self.params.copy(), version

    def apply(self, delta: PolicyParams, version: int | None = None) -> int:
        with self._write:
            np.add(self.params.h, delta.h, out=self.params.h)
            np.add(self.params.f, delta.f, out=self.params.f)
            np.add(self.params.v, delta.v, out=self.params.v)
            if version is not None:
                self.staleness.append(self.updates - version)
            self.updates += 1
            return self.updates


class StepBudget:
    """Thread-safe per-task counter of environment steps still available."""

    def __init__(self, total: int):
        self.remaining = int(total)
        self._lock = threading.Lock()

    def claim(self, n: int) -> int:
        with self._lock:
            got = min(n, self.remaining)
            self.remaining -= got
            return got


class JointLearner(Protocol):
    def task_policy(self, task: int, params: PolicyParams) -> np.ndarray: ...
    def compute_gradient(self, params: PolicyParams, task: int, traj: Trajectory): ...
    def delta(self, params: PolicyParams, grads) -> PolicyParams: ...


def worker_loop(env: TabularEnv, task: int, shared: SharedParams, learner: JointLearner,
                cfg: WorkerConfig, stop: threading.Event, budget: StepBudget,
                rng: np.random.Generator, backend: str | None = None) -> Iterator[tuple[Trajectory, PolicyParams]]:
    """Snapshot, roll out ``batch_len`` steps, compute and apply the gradient; repeat."""
    while not stop.is_set():
        n = budget.claim(cfg.batch_len)
        if n == 0:
            return
        snap, version = shared.snapshot()
        traj = policy_steps(env, learner.task_policy(task, snap), n, rng, backend=backend)
        grads = learner.compute_gradient(snap, task, traj)
        delta = learner.delta(snap, grads)
        shared.apply(delta, version)
        yield traj, delta


@dataclass
class HarnessResult:
    curves: list = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    pi0: np.ndarray | None = None  # alternating runs only
    q: list | None = None


def _summarize(shared_updates: int, staleness: list[int], steps: int, elapsed: float) -> dict:
    st = np.asarray(staleness, dtype=float)
    return {
        "updates": int(shared_updates),
        "mean_staleness": float(st.mean()) if st.size else 0.0,
        "max_staleness": int(st.max()) if st.size else 0,
        "env_steps": int(steps),
        "wall_seconds": elapsed,
        "steps_per_second": steps / elapsed if elapsed > 0 else 0.0,
    }


def run_joint(learner, envs: list[TabularEnv], shared: SharedParams, wcfg: WorkerConfig,
              budget: int, rng: np.random.Generator, eval_every: int = 1000, eval_episodes: int = 10,
              distilled_policy: Callable[[PolicyParams], np.ndarray] | None = None,
              stop: threading.Event | None = None, backend: str | None = None) -> HarnessResult:
    """Trains ``learner`` on every task with ``workers_per_task`` workers each.

    Worker ``k`` of task ``i`` draws from its own child generator; worker 0
    uses the same streams as the single-threaded path so that one serialized
    worker reproduces it exactly.
    """
    n, W = len(envs), wcfg.workers_per_task
    stop = stop or threading.Event()
    task_rngs, eval_rngs = _spawn_streams(rng, n)
    worker_rngs = [[task_rngs[i]] + list(task_rngs[i].spawn(W - 1)) for i in range(n)]
    budgets = [StepBudget(budget) for _ in range(n)]
    trackers = [CurveTracker(i, eval_every, eval_episodes, eval_rngs[i]) for i in range(n)]
    locks = [threading.Lock() for _ in range(n)]

    def evaluator(i):
        def evaluate(r):
            snap, _ = shared.snapshot()
            ev = evaluate_policy(envs[i], learner.task_policy(i, snap), eval_episodes, r, backend)
            pi0 = distilled_policy(snap) if distilled_policy else None
            dist = evaluate_policy(envs[i], pi0, eval_episodes, r, backend) if pi0 is not None else float("nan")
            return ev, dist
        return evaluate

    if eval_every > 0:
        for i in range(n):
            trackers[i].record(evaluator(i))
    result = HarnessResult()
    loops = {(i, k): worker_loop(envs[i] if k == 0 else envs[i].fork(), i, shared, learner, wcfg,
                                 stop, budgets[i], worker_rngs[i][k], backend)
             for i in range(n) for k in range(W)}
    t0 = time.perf_counter()
    total_steps = [0]

    def consume(key, traj):
        i = key[0]
        with locks[i]:
            trackers[i].observe(traj, evaluator(i))
            total_steps[0] += len(traj)

    if wcfg.staleness_mode == "serialized":
        active = list(loops)
        while active:
            for key in list(active):
                try:
                    traj, _ = next(loops[key])
                except StopIteration:
                    active.remove(key)
                    continue
                except Exception as exc:  # noqa: BLE001 - isolate worker failures
                    result.errors.append(f"worker {key}: {exc!r}")
                    active.remove(key)
                    continue
                consume(key, traj)
    else:
        def run(key):
            try:
                for traj, _ in loops[key]:
                    consume(key, traj)
            except Exception as exc:  # noqa: BLE001
                log.exception("worker %s failed", key)
                result.errors.append(f"worker {key}: {exc!r}")

        threads = [threading.Thread(target=run, args=(key,), daemon=True) for key in loops]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    result.curves = [tr.curve for tr in trackers]
    result.metrics = _summarize(shared.updates, shared.staleness, total_steps[0],
                                time.perf_counter() - t0)
    return result


def _spawn_streams(rng: np.random.Generator, n: int):
    child = rng.spawn(2 * n)
    return child[:n], child[n:]


class SharedTabular:
    """Per-task Q tables and the distilled policy shared by alternating workers."""

    def __init__(self, n_tasks: int, n_states: int, n_actions: int):
        self.q = [np.zeros((n_states, n_actions)) for _ in range(n_tasks)]
        self.pi0 = uniform_policy(n_states, n_actions)
        self.refreshes = 0


def synchronize_distill(shared: SharedTabular, counts_per_task, pseudocount: float = 1.0,
                        barrier: threading.Barrier | None = None, timeout: float | None = None) -> np.ndarray:
    """Merges visitation counts (each task may hold several worker tables) and
    replaces pi0 with their smoothed ML fit.

    With ``barrier`` the caller first waits for all parties; a broken or
    timed-out barrier raises :class:`TimeoutError`.
    """
    if barrier is not None:
        try:
            barrier.wait(timeout)
        except threading.BrokenBarrierError as exc:
            raise TimeoutError("distillation barrier timed out") from exc
    merged = []
    for c in counts_per_task:
        merged.append(np.sum(c, axis=0) if isinstance(c, (list, tuple)) else np.asarray(c))
    shared.pi0 = distill_ml(merged, pseudocount)
    shared.refreshes += 1
    return shared.pi0


def run_alternating(envs: list[TabularEnv], cfg: RegularizationConfig, schedule: AlternatingSchedule,
                    wcfg: WorkerConfig, rng: np.random.Generator, backend: str | None = None) -> HarnessResult:
    """Alternating soft Q-learning + distillation with several workers per task.

    Each iteration, every worker runs ``rollouts_per_iteration`` rollouts into
    its task's shared Q table; then all workers meet at a barrier where pi0 is
    refreshed from the merged counts.
    """
    n, W = len(envs), wcfg.workers_per_task
    S, A = envs[0].n_states, envs[0].n_actions
    shared = SharedTabular(n, S, A)
    task_rngs, eval_rngs = _spawn_streams(rng, n)
    worker_rngs = [[task_rngs[i]] + list(task_rngs[i].spawn(W - 1)) for i in range(n)]
    worker_envs = [[envs[i]] + [envs[i].fork() for _ in range(W - 1)] for i in range(n)]
    counts = [[np.zeros((S, A)) for _ in range(W)] for _ in range(n)]
    trackers = [CurveTracker(i, schedule.eval_every, schedule.eval_episodes, eval_rngs[i]) for i in range(n)]
    locks = [threading.Lock() for _ in range(n)]
    result = HarnessResult()

    def evaluator(i):
        def evaluate(r):
            pi0 = shared.pi0
            pi_i = task_policy_from_q(shared.q[i], pi0, cfg)
            return (evaluate_policy(envs[i], pi_i, schedule.eval_episodes, r, backend),
                    evaluate_policy(envs[i], pi0, schedule.eval_episodes, r, backend))
        return evaluate

    def refresh():
        if schedule.distill:
            if schedule.count_decay != 1.0:
                for per_task in counts:
                    for c in per_task:
                        c *= schedule.count_decay
            synchronize_distill(shared, counts, schedule.pseudocount)

    def do_rollouts(i, k, it):
        lr = schedule.learn_rate_at(it)
        for _ in range(schedule.rollouts_per_iteration):
            _, traj = soft_q_rollout_update(worker_envs[i][k], shared.q[i], shared.pi0, cfg,
                                            schedule.rollout_len, lr, worker_rngs[i][k], backend)
            accumulate_visitations(counts[i][k], traj, envs[i].gamma)
            with locks[i]:
                trackers[i].observe(traj, evaluator(i))

    if schedule.eval_every > 0:
        for i in range(n):
            trackers[i].record(evaluator(i))
    t0 = time.perf_counter()
    if wcfg.staleness_mode == "serialized":
        for it in range(schedule.iterations):
            for i in range(n):
                for k in range(W):
                    do_rollouts(i, k, it)
            refresh()
    else:
        barrier = threading.Barrier(n * W, action=refresh, timeout=wcfg.barrier_timeout)

        def run(i, k):
            try:
                for it in range(schedule.iterations):
                    do_rollouts(i, k, it)
                    barrier.wait()
            except threading.BrokenBarrierError:
                result.errors.append(f"worker {(i, k)}: distillation barrier timed out or broken")
            except Exception as exc:  # noqa: BLE001
                log.exception("worker %s failed", (i, k))
                result.errors.append(f"worker {(i, k)}: {exc!r}")
                barrier.abort()

        threads = [threading.Thread(target=run, args=(i, k), daemon=True) for i in range(n) for k in range(W)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    elapsed = time.perf_counter() - t0
    steps = schedule.iterations * n * W * schedule.steps_per_iteration
    result.curves = [tr.curve for tr in trackers]
    result.metrics = _summarize(shared.refreshes, [], steps, elapsed)
    result.metrics["distill_refreshes"] = shared.refreshes
    result.pi0 = shared.pi0
    result.q = shared.q
    return result
