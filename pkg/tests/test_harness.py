import threading

import numpy as np
import pytest

from distral.envsuite import make_task_suite
from distral.harness import (
    SharedParams, SharedTabular, StepBudget, WorkerConfig, run_alternating, run_joint,
    synchronize_distill, worker_loop,
)
from distral.orchestrator import JointTrainer, make_spec, train_joint_serial
from distral.policy_grad import GradientAccumulator, PolicyParams, softmax
from distral.rollout import GridEnv
from distral.tabular import AlternatingSchedule, RegularizationConfig, alternate_optimize, distill_ml


@pytest.fixture(scope="module")
def envs():
    return [GridEnv(t) for t in make_task_suite(2, 0)]


class ConstantLearner:
    """Uniform policy and a fixed gradient, so every delta is the same array."""

    def __init__(self, params, g=0.125):
        self.g = g

    def task_policy(self, task, params):
        return np.full(params.h.shape, 1 / params.h.shape[1])

    def compute_gradient(self, params, task, traj):
        out = GradientAccumulator.zeros_like(params)
        out.d_h += self.g
        out.d_f[task] += self.g
        return out

    def delta(self, params, grads):
        return PolicyParams(0.5 * grads.d_h, 0.5 * grads.d_f, grads.d_v)


def test_worker_config_validation():
    with pytest.raises(ValueError):
        WorkerConfig(workers_per_task=0)
    with pytest.raises(ValueError):
        WorkerConfig(staleness_mode="eventual")
    assert WorkerConfig().batch_len == 20


def test_stop_before_first_batch(envs):
    p = PolicyParams.zeros(2, envs[0].n_states, 5)
    shared = SharedParams(p)
    stop = threading.Event()
    stop.set()
    loop = worker_loop(envs[0].fork(), 0, shared, ConstantLearner(p), WorkerConfig(), stop,
                       StepBudget(1000), np.random.default_rng(0))
    assert list(loop) == [] and shared.updates == 0 and not p.h.any()


def test_budget_claims():
    b = StepBudget(45)
    assert [b.claim(20), b.claim(20), b.claim(20), b.claim(20)] == [20, 20, 5, 0]


def _constant_run(envs, mode, workers):
    p = PolicyParams.zeros(2, envs[0].n_states, 5)
    shared = SharedParams(p, mode)
    res = run_joint(ConstantLearner(p), envs, shared, WorkerConfig(workers, 20, mode), 2000,
                    np.random.default_rng(0), eval_every=0)
    return p, shared, res


def test_additive_commutativity_and_no_lost_updates(envs):
    p_ser, sh_ser, _ = _constant_run(envs, "serialized", 4)
    for _ in range(3):
        p_lf, sh_lf, res = _constant_run(envs, "lock-free", 4)
        assert not res.errors
        batches = 2 * 2000 // 20
        assert sh_lf.updates == batches == res.metrics["updates"]
        assert np.array_equal(p_lf.h, p_ser.h) and np.array_equal(p_lf.f, p_ser.f)
        # total change is (batches) * step * g
        assert np.allclose(p_lf.h, batches * 0.5 * 0.125, rtol=0, atol=1e-12)
        assert np.allclose(p_lf.f, (batches / 2) * 0.5 * 0.125, rtol=0, atol=1e-12)


def test_staleness_metrics_recorded(envs):
    _, sh, res = _constant_run(envs, "lock-free", 4)
    m = res.metrics
    assert len(sh.staleness) == m["updates"]
    assert m["max_staleness"] >= 0 and m["env_steps"] == 4000 and m["steps_per_second"] > 0


def test_single_serialized_worker_matches_serial_path(envs):
    spec = make_spec("KL+ent_2col", 0.05)
    S = envs[0].n_states
    a = JointTrainer(spec, 2, S, 5, 0.95, step_size=0.3, value_step=0.02)
    curves_a = train_joint_serial(a, [e.fork() for e in envs], 3000, 20, np.random.default_rng(4), 500, 3)
    b = JointTrainer(spec, 2, S, 5, 0.95, step_size=0.3, value_step=0.02)
    res = run_joint(b, [e.fork() for e in envs], SharedParams(b.params, "serialized"),
                    WorkerConfig(1, 20, "serialized"), 3000, np.random.default_rng(4), 500, 3,
                    b.distilled_policy)
    assert np.array_equal(a.params.h, b.params.h) and np.array_equal(a.params.f, b.params.f)
    assert np.array_equal(a.params.v, b.params.v)
    for ca, cb in zip(curves_a, res.curves):
        assert ca == cb


def test_worker_failure_isolated(envs):
    class Flaky(ConstantLearner):
        def compute_gradient(self, params, task, traj):
            if task == 1:
                raise RuntimeError("boom")
            return super().compute_gradient(params, task, traj)

    for mode in ("serialized", "lock-free"):
        p = PolicyParams.zeros(2, envs[0].n_states, 5)
        res = run_joint(Flaky(p), envs, SharedParams(p, mode), WorkerConfig(2, 20, mode), 400,
                        np.random.default_rng(0), eval_every=0)
        assert len(res.errors) == 2 and all("boom" in e for e in res.errors)
        assert res.metrics["updates"] == 400 // 20  # task 0 used its whole budget


def test_synchronize_single_worker_inline(rng):
    counts = [rng.random((6, 5)) for _ in range(3)]
    shared = SharedTabular(3, 6, 5)
    out = synchronize_distill(shared, counts, 1.0)
    assert np.array_equal(out, distill_ml(counts, 1.0)) and shared.refreshes == 1
    again = synchronize_distill(shared, counts, 1.0)
    assert np.array_equal(again, out)


def test_synchronize_merges_worker_counts(rng):
    a = np.zeros((4, 3))
    b = np.zeros((4, 3))
    a[:2] = rng.random((2, 3))
    b[2:] = rng.random((2, 3))
    shared = SharedTabular(1, 4, 3)
    out = synchronize_distill(shared, [[a, b]], 0.5)
    assert np.array_equal(out, distill_ml([a + b], 0.5))


def test_synchronize_barrier_timeout():
    barrier = threading.Barrier(2)
    with pytest.raises(TimeoutError):
        synchronize_distill(SharedTabular(1, 2, 2), [np.zeros((2, 2))], 1.0, barrier, timeout=0.05)


def test_single_serialized_alternating_matches_inline(envs):
    c = RegularizationConfig.from_alpha_beta(1.0, 5.0)
    sched = AlternatingSchedule(iterations=150, rollouts_per_iteration=2, eval_every=500, eval_episodes=3)
    pi0, qs, curves = alternate_optimize([e.fork() for e in envs], c, sched, np.random.default_rng(1))
    res = run_alternating([e.fork() for e in envs], c, sched, WorkerConfig(1, 20, "serialized"),
                          np.random.default_rng(1))
    assert np.array_equal(pi0, res.pi0)
    assert all(np.array_equal(a, b) for a, b in zip(qs, res.q))
    assert curves == res.curves


def test_lock_free_alternating(envs):
    c = RegularizationConfig.from_alpha_beta(1.0, 5.0)
    sched = AlternatingSchedule(iterations=100, eval_every=1000, eval_episodes=2)
    res = run_alternating(envs, c, sched, WorkerConfig(4, 20, "lock-free"), np.random.default_rng(2))
    assert not res.errors
    assert res.metrics["distill_refreshes"] == 100
    assert np.allclose(res.pi0.sum(axis=1), 1.0, atol=1e-12)
    assert res.curves[0].env_steps[-1] == 100 * 4 * 10
