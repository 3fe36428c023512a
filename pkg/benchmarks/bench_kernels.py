"""Throughput of the compiled rollout kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--steps N] [--repeats R]

Each backend replays the same uniforms, so the benchmark also checks that the
outputs agree bit for bit.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from distral.envsuite import make_two_room_task
from distral.rollout import GridEnv, get_backend, policy_steps, soft_q_steps
from distral.tabular import RegularizationConfig, prior_logits, uniform_policy


def _time(fn, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(steps: int, repeats: int, chunk: int) -> list[dict]:
    env = GridEnv(make_two_room_task(0))
    S, A = env.n_states, env.n_actions
    cfg = RegularizationConfig.from_alpha_beta(1.0, 5.0)
    prior = prior_logits(uniform_policy(S, A), cfg.alpha)
    probs = uniform_policy(S, A)
    try:
        get_backend("cython")
        backends = ["cython", "python"]
    except ValueError:
        backends = ["python"]

    def soft_q(backend):
        e = env.fork()
        q = np.zeros((S, A))
        rng = np.random.default_rng(0)
        for _ in range(steps // chunk):
            soft_q_steps(e, q, prior, cfg.beta, 0.1, chunk, rng, backend)
        return q

    def rollout(backend):
        e = env.fork()
        rng = np.random.default_rng(0)
        return policy_steps(e, probs, steps, rng, backend=backend).rewards

    rows, ref = [], {}
    for name, fn in (("soft_q_rollout", soft_q), ("policy_rollout", rollout)):
        for b in backends:
            t, out = _time(lambda: fn(b), repeats)
            same = bool(np.array_equal(ref.setdefault(name, out), out))
            rows.append({"kernel": name, "backend": b, "seconds": t, "steps_per_s": steps / t,
                         "matches_reference": same})
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--chunk", type=int, default=10, help="soft-Q rollout length per kernel call")
    args = p.parse_args(argv)
    rows = bench(args.steps, args.repeats, args.chunk)
    base = {r["kernel"]: r["seconds"] for r in rows if r["backend"] == "python"}
    print(f"{'kernel':<16}{'backend':<9}{'seconds':>9}{'steps/s':>12}{'speedup':>9}  match")
    for r in rows:
        print(f"{r['kernel']:<16}{r['backend']:<9}{r['seconds']:>9.3f}{r['steps_per_s']:>12.0f}"
              f"{base[r['kernel']] / r['seconds']:>8.1f}x  {r['matches_reference']}")
    return rows


if __name__ == "__main__":
    main()
