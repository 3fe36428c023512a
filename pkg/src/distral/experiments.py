"""Evaluation kit: AUC, robustness tables, normalization, curve CSV I/O, and the
text rendering of the distilled policy in the corridor."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .envsuite import ACTION_NAMES, DOWN, LEFT, N_ACTIONS, RIGHT, STAY, UP, GridTask, corridor_states
from .records import RunRecord, TaskCurve

CURVE_COLUMNS = ("algo", "task_id", "hyper_id", "seed", "env_steps", "train_return",
                 "eval_return", "distilled_eval_return")


@dataclass(frozen=True)
class CurvePoint:
    env_steps: int
    mean_return: float
    std_over_tasks: float = 0.0


def compute_auc(curve) -> float:
    """Trapezoidal area under mean_return over env_steps, divided by the step span.

    ``curve`` is a sequence of CurvePoint or a (steps, values) pair.
    """
    if isinstance(curve, tuple) and len(curve) == 2 and not isinstance(curve[0], CurvePoint):
        x, y = (np.asarray(c, dtype=float) for c in curve)
    else:
        x = np.array([p.env_steps for p in curve], dtype=float)
        y = np.array([p.mean_return for p in curve], dtype=float)
    if len(x) < 2:
        raise ValueError("AUC needs at least two curve points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("env_steps must be strictly increasing")
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0 / (x[-1] - x[0]))


def task_curve_points(curve: TaskCurve, field: str = "eval_return") -> list[CurvePoint]:
    return [CurvePoint(s, v) for s, v in zip(curve.env_steps, getattr(curve, field))]


def aggregate_curves(curves: Sequence[TaskCurve], field: str = "eval_return") -> list[CurvePoint]:
    """Mean and std over tasks at steps common to all curves."""
    if not curves:
        return []
    common = set(curves[0].env_steps)
    for c in curves[1:]:
        common &= set(c.env_steps)
    out = []
    for step in sorted(common):
        vals = [getattr(c, field)[c.env_steps.index(step)] for c in curves]
        out.append(CurvePoint(step, float(np.mean(vals)), float(np.std(vals))))
    return out


def record_auc(record: RunRecord, field: str = "eval_return") -> float:
    """Mean over tasks of each task's AUC; NaN when any curve is too short."""
    aucs = []
    for c in record.curves:
        if len(c) < 2:
            return math.nan
        aucs.append(compute_auc(task_curve_points(c, field)))
    return float(np.mean(aucs)) if aucs else math.nan


def final_score(record: RunRecord, budget: int, window: float = 0.05, field: str = "eval_return") -> float:
    """Mean return over evaluation points in the last ``window`` fraction of the budget."""
    per_task = []
    for c in record.curves:
        if not len(c):
            continue
        steps = np.asarray(c.env_steps)
        vals = np.asarray(getattr(c, field))
        sel = steps >= (1.0 - window) * budget
        per_task.append(float(vals[sel].mean()) if sel.any() else float(vals[-1]))
    return float(np.mean(per_task)) if per_task else math.nan


def robustness_table(records: Iterable[RunRecord]) -> dict[str, list[float]]:
    """Per-algorithm final scores of every (hyper, seed) run, best first."""
    table: dict[str, list[float]] = {}
    for r in records:
        table.setdefault(r.algo, []).append(r.final_score)
    return {k: sorted(v, key=lambda x: (-math.inf if math.isnan(x) else x), reverse=True)
            for k, v in table.items()}


def normalize_by_baseline(records: Sequence[RunRecord], budget: int, baseline: str = "A3C") -> dict:
    """Per-task final scores divided by the best baseline run's magnitude on that task.

    Returns {algo: [normalized mean per run]}; empty when the baseline is absent.
    """
    base = [r for r in records if r.algo == baseline and r.curves]
    if not base:
        return {}
    n_tasks = len(base[0].curves)

    def per_task(r):
        return [final_score(RunRecord(r.algo, r.hyper_id, r.hyper, r.seed, [c]), budget)
                for c in r.curves]

    best = np.max([per_task(r) for r in base], axis=0)
    scale = np.where(np.abs(best) > 0, np.abs(best), 1.0)
    out: dict[str, list[float]] = {}
    for r in records:
        if len(r.curves) != n_tasks:
            continue
        out.setdefault(r.algo, []).append(float(np.mean(np.asarray(per_task(r)) / scale)))
    return out


def write_curves_csv(path, records: Iterable[RunRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in records:
            for c in r.curves:
                for k in range(len(c)):
                    w.writerow([r.algo, c.task_id, r.hyper_id, r.seed, c.env_steps[k],
                                repr(c.train_return[k]), repr(c.eval_return[k]),
                                repr(c.distilled_eval_return[k])])


def load_curves_csv(path) -> dict[tuple[str, int, int], list[TaskCurve]]:
    """Curves keyed by (algo, hyper_id, seed), tasks in id order."""
    runs: dict[tuple[str, int, int], dict[int, TaskCurve]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["algo"], int(row["hyper_id"]), int(row["seed"]))
            tid = int(row["task_id"])
            curve = runs.setdefault(key, {}).setdefault(tid, TaskCurve(tid))
            curve.append(int(row["env_steps"]), float(row["train_return"]),
                         float(row["eval_return"]), float(row["distilled_eval_return"]))
    return {k: [v[t] for t in sorted(v)] for k, v in runs.items()}


def write_robustness_csv(path, table: dict[str, list[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("algo", "rank", "final_score"))
        for algo in sorted(table):
            for rank, score in enumerate(table[algo]):
                w.writerow((algo, rank, repr(score)))


def load_robustness_csv(path) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["algo"], []).append(float(row["final_score"]))
    return out


_GLYPHS = {STAY: "o", UP: "^", DOWN: "v", LEFT: "<", RIGHT: ">"}
N_BUCKETS = 5


def arrow_bucket(p: float) -> int:
    """Probability to one of five sizes, 0 (negligible) to 4 (dominant)."""
    return min(N_BUCKETS - 1, int(p * N_BUCKETS))


def corridor_policy_rows(pi0: np.ndarray, task: GridTask) -> list[dict]:
    """Raw probabilities behind the corridor rendering, one row per (cell, prev_action, action)."""
    rows = []
    for cell, pa, s in corridor_states(task):
        for a in range(N_ACTIONS):
            rows.append({"x": cell[0], "y": cell[1], "prev_action": ACTION_NAMES[pa],
                         "action": ACTION_NAMES[a], "prob": float(pi0[s, a])})
    return rows


def render_corridor_policy(pi0: np.ndarray, task: GridTask) -> str:
    """Text diagram: per corridor cell and previous direction, each action's glyph
    repeated by its size bucket (so a uniform policy shows equal-length arrows)."""
    lines = []
    for pa in (LEFT, RIGHT):
        lines.append(f"prev_action={ACTION_NAMES[pa]}, prev_reward=-0.1")
        for cell, p, s in corridor_states(task, (pa,)):
            parts = []
            for a in range(N_ACTIONS):
                size = arrow_bucket(float(pi0[s, a]))
                parts.append((_GLYPHS[a] * size).ljust(N_BUCKETS - 1, "."))
            lines.append(f"  cell {cell}: " + " ".join(parts))
    return "\n".join(lines)


def write_corridor_csv(path, pi0: np.ndarray, task: GridTask) -> None:
    rows = corridor_policy_rows(pi0, task)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
