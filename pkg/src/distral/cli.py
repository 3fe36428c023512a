"""Command-line front end: ``distral run --config plan.json --out results/``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    normalize_by_baseline,
    render_corridor_policy,
    robustness_table,
    write_corridor_csv,
    write_curves_csv,
    write_robustness_csv,
)
from .orchestrator import ALGORITHMS, load_config, plan_from_config, run_plan, select_best_hypers
from .rollout import BACKEND

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ENV = "DISTRAL_OUTPUT_DIR"

log = logging.getLogger("distral")


def _finite(x):
    return x if isinstance(x, (int, str)) or (isinstance(x, float) and math.isfinite(x)) else None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distral", description="Multitask distilled-policy experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute an experiment plan")
    run.add_argument("--config", required=True, help="JSON plan file")
    run.add_argument("--out", default="results", help="output directory (DISTRAL_OUTPUT_DIR overrides)")
    run.add_argument("--seed", type=int, action="append", help="seed override (repeatable)")
    run.add_argument("--algos", help="comma-separated algorithm filter")
    run.add_argument("--workers", type=int, help="workers per task")
    run.add_argument("--serialized", action="store_true", help="deterministic round-robin workers")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def _plans(args):
    cfg = load_config(args.config)
    if not isinstance(cfg, dict) or "budget" not in cfg:
        raise ValueError("config must be a JSON object with a 'budget'")
    if args.seed:
        cfg["seeds"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.serialized:
        cfg["serialized"] = True
    elif args.workers is not None and args.workers > 1:
        cfg.setdefault("serialized", False)
    algos = cfg.get("algorithms", ["tabular_distral", "soft_q"])
    if args.algos:
        keep = [a.strip() for a in args.algos.split(",") if a.strip()]
        unknown = [a for a in keep if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms: {unknown}")
        algos = [a for a in algos if a in keep] or keep
    return cfg, [plan_from_config(cfg, a) for a in algos]


def _run_dir(out: Path, rec) -> Path:
    return out / "runs" / f"{rec.algo}_h{rec.hyper_id}_s{rec.seed}.csv"


def cmd_run(args) -> int:
    try:
        cfg, plans = _plans(args)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(os.environ.get(OUTPUT_ENV) or args.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    records, summary = [], {"version": __version__, "backend": BACKEND, "config": cfg, "algorithms": {}}
    failed = False
    for plan in plans:
        log.info("running %s: %d settings x %d seeds", plan.algorithm, len(plan.hyper_grid), len(plan.seeds))
        recs = run_plan(plan)
        records.extend(recs)
        entry: dict = {"runs": []}
        for r in recs:
            write_curves_csv(_run_dir(out, r), [r])
            entry["runs"].append({"hyper_id": r.hyper_id, "hyper": r.hyper, "seed": r.seed,
                                  "status": r.status, "error": r.error,
                                  "final_score": _finite(r.final_score), "auc": _finite(r.auc),
                                  "metrics": r.metrics})
            failed |= r.status != "ok"
        try:
            best, curve = select_best_hypers(recs)
            entry["best_hyper"] = best
            entry["best_curve"] = [[p.env_steps, p.mean_return, p.std_over_tasks] for p in curve]
        except ValueError:
            entry["best_hyper"] = None
        pi0 = next((r.artifacts.get("pi0") for r in recs if r.artifacts.get("pi0") is not None), None)
        if pi0 is not None and plan.algorithm == "tabular_distral":
            text = render_corridor_policy(pi0, plan.tasks[0])
            (out / "corridor_policy.txt").write_text(text + "\n")
            write_corridor_csv(out / "corridor_policy.csv", pi0, plan.tasks[0])
            np.save(out / "pi0.npy", pi0)
        summary["algorithms"][plan.algorithm] = entry

    write_curves_csv(out / "curves.csv", records)
    write_robustness_csv(out / "robustness.csv", robustness_table(records))
    budget = plans[0].budget
    summary["normalized"] = normalize_by_baseline(records, budget)
    summary["status"] = "partial" if failed else "ok"
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, default=str)
    if failed:
        print(f"some runs failed; partial outputs in {out}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return cmd_run(args)
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
