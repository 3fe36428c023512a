"""Multitask reinforcement learning with a distilled shared policy, on tabular tasks."""

from .rollout import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
