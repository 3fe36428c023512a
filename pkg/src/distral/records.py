"""Learning-curve containers shared by trainers, the orchestrator and the CLI."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field


@dataclass
class TaskCurve:
    """Per-task learning curve; all lists are aligned with ``env_steps``."""

    task_id: int
    env_steps: list[int] = field(default_factory=list)
    train_return: list[float] = field(default_factory=list)
    eval_return: list[float] = field(default_factory=list)
    distilled_eval_return: list[float] = field(default_factory=list)

    def append(self, steps: int, train: float, evaluation: float, distilled: float) -> None:
        if self.env_steps and steps <= self.env_steps[-1]:
            raise ValueError(f"env_steps must increase: {steps} after {self.env_steps[-1]}")
        self.env_steps.append(int(steps))
        self.train_return.append(float(train))
        self.eval_return.append(float(evaluation))
        self.distilled_eval_return.append(float(distilled))

    def __len__(self) -> int:
        return len(self.env_steps)


@dataclass
class RunRecord:
    algo: str
    hyper_id: int
    hyper: dict
    seed: int
    curves: list[TaskCurve]
    final_score: float = math.nan
    auc: float = math.nan
    status: str = "ok"  # ok | partial | failed
    error: str = ""
    metrics: dict = field(default_factory=dict)
    # learned tables / parameters, kept in memory only
    artifacts: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("artifacts")
        return d
