import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distral.envsuite import DOWN, LEFT, RIGHT, UP, N_ACTIONS, corridor_states, make_two_room_task
from distral.experiments import (
    CurvePoint, aggregate_curves, arrow_bucket, compute_auc, corridor_policy_rows, final_score,
    load_curves_csv, load_robustness_csv, normalize_by_baseline, render_corridor_policy, robustness_table,
    write_corridor_csv, write_curves_csv, write_robustness_csv,
)
from distral.records import RunRecord, TaskCurve


def pts(xs, ys):
    return [CurvePoint(int(x), float(y)) for x, y in zip(xs, ys)]


def test_auc_constant_and_linear():
    assert compute_auc(pts([0, 10, 30], [2.5] * 3)) == pytest.approx(2.5, abs=1e-15)
    assert compute_auc(pts(range(0, 101, 10), np.linspace(0, 1, 11))) == pytest.approx(0.5, abs=1e-15)


def test_auc_quadratic():
    x = np.linspace(0, 1000, 100).round().astype(int)
    x = np.unique(x)
    y = (x / 1000.0) ** 2
    assert compute_auc((x, y)) == pytest.approx(1 / 3, abs=1e-3)


def test_auc_errors():
    with pytest.raises(ValueError):
        compute_auc(pts([0], [1]))
    with pytest.raises(ValueError):
        compute_auc(pts([0, 0], [1, 1]))


@settings(max_examples=200, deadline=None)
@given(ys=st.lists(st.floats(-10, 10), min_size=2, max_size=8), k=st.integers(2, 5))
def test_auc_subdivision_invariant(ys, k):
    x = np.arange(len(ys)) * k * 10
    fine_x = np.arange(x[-1] + 1, step=10)
    fine_y = np.interp(fine_x, x, ys)
    assert compute_auc((fine_x, fine_y)) == pytest.approx(compute_auc((x, ys)), abs=1e-9)


def make_record(algo, hid, seed, rng, n_tasks=2, n_points=6, step=100):
    curves = []
    for t in range(n_tasks):
        c = TaskCurve(t)
        for k in range(n_points):
            c.append(k * step, float(rng.normal()), float(rng.normal()), float(rng.normal()))
        curves.append(c)
    r = RunRecord(algo, hid, {"entropy_cost": 0.1, "step_size": 0.2}, seed, curves)
    r.final_score = final_score(r, (n_points - 1) * step)
    return r


def test_curves_csv_round_trip(tmp_path, rng):
    recs = [make_record(a, h, s, rng) for a in ("A3C", "KL_1col") for h in (0, 1) for s in (0, 3)]
    recs[0].curves[0].train_return[0] = math.nan
    path = tmp_path / "curves.csv"
    write_curves_csv(path, recs)
    with open(path) as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == ("algo", "task_id", "hyper_id", "seed", "env_steps", "train_return",
                             "eval_return", "distilled_eval_return")
    back = load_curves_csv(path)
    for r in recs:
        got = back[(r.algo, r.hyper_id, r.seed)]
        assert repr(got) == repr(r.curves)


def test_robustness_regenerated_from_csv(tmp_path, rng):
    recs = [make_record(a, h, s, rng) for a in ("A3C", "KL_2col") for h in range(3) for s in range(2)]
    table = robustness_table(recs)
    assert all(len(v) == 6 for v in table.values())
    assert all(v == sorted(v, reverse=True) for v in table.values())
    write_curves_csv(tmp_path / "c.csv", recs)
    write_robustness_csv(tmp_path / "r.csv", table)
    regen = []
    for (algo, hid, seed), curves in load_curves_csv(tmp_path / "c.csv").items():
        r = RunRecord(algo, hid, {}, seed, curves)
        r.final_score = final_score(r, 500)
        regen.append(r)
    assert robustness_table(regen) == table == load_robustness_csv(tmp_path / "r.csv")


def test_final_score_window():
    c = TaskCurve(0)
    for k, v in enumerate([0, 0, 0, 1, 3]):
        c.append(k * 25, v, v, v)
    r = RunRecord("X", 0, {}, 0, [c])
    assert final_score(r, 100, window=0.05) == 3.0
    assert final_score(r, 100, window=0.3) == 2.0


def test_aggregate_curves():
    a, b = TaskCurve(0), TaskCurve(1)
    for k in range(3):
        a.append(k, 0, 1.0 * k, 0)
        b.append(k, 0, 3.0 * k, 0)
    agg = aggregate_curves([a, b])
    assert [p.mean_return for p in agg] == [0, 2, 4] and [p.std_over_tasks for p in agg] == [0, 1, 2]


def test_normalize_by_baseline(rng):
    base = make_record("A3C", 0, 0, rng)
    other = make_record("KL_1col", 0, 0, rng)
    out = normalize_by_baseline([base, other], 500)
    assert set(out) == {"A3C", "KL_1col"} and len(out["A3C"]) == 1
    assert normalize_by_baseline([other], 500) == {}


def test_arrow_buckets():
    assert [arrow_bucket(p) for p in (0.0, 0.19, 0.2, 0.5, 0.99, 1.0)] == [0, 0, 1, 2, 4, 4]


def test_render_uniform_equal_arrows():
    t = make_two_room_task(0)
    from distral.rollout import GridEnv
    S = GridEnv(t).n_states
    text = render_corridor_policy(np.full((S, N_ACTIONS), 0.2), t)
    lines = [l for l in text.splitlines() if "cell" in l]
    assert len(lines) == 6
    for l in lines:
        arrows = l.split(": ")[1].split()
        assert len({a.count(".") for a in arrows}) == 1


def test_render_continuation_single_arrow():
    t = make_two_room_task(0)
    from distral.rollout import GridEnv
    S = GridEnv(t).n_states
    pi0 = np.full((S, N_ACTIONS), 0.2)
    for cell, pa, s in corridor_states(t):
        pi0[s] = 0.0
        pi0[s, pa] = 1.0
    text = render_corridor_policy(pi0, t)
    for l in (l for l in text.splitlines() if "cell" in l):
        arrows = [a for a in l.split(": ")[1].split() if a.strip(".")]
        assert len(arrows) == 1 and arrows[0] in (">>>>", "<<<<")


def test_corridor_csv(tmp_path):
    t = make_two_room_task(0)
    from distral.rollout import GridEnv
    S = GridEnv(t).n_states
    pi0 = np.random.default_rng(0).dirichlet(np.ones(5), size=S)
    write_corridor_csv(tmp_path / "c.csv", pi0, t)
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert len(rows) == 6 * 5 == len(corridor_policy_rows(pi0, t))
    assert {r["prev_action"] for r in rows} == {"left", "right"}
    s = corridor_states(t)[0][2]
    assert [float(r["prob"]) for r in rows[:5]] == pytest.approx(pi0[s].tolist(), abs=0)
