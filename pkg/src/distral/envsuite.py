"""Tabular environments: the two-room grid world and a generic finite MDP container.

The grid world state is (position, previous action, previous reward). Both
previous-step fields take a "none-yet" value at the start of an episode, so
the state space is finite and can be enumerated exactly by :func:`grid_to_mdp`.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Cell = tuple[int, int]  # (x, y); x is the column, y the row

# Actions. NONE_YET is only a prev_action value, never an action id.
STAY, UP, DOWN, LEFT, RIGHT = range(5)
N_ACTIONS = 5
NONE_YET = 5
ACTION_NAMES = ("stay", "up", "down", "left", "right", "none")
MOVES = {STAY: (0, 0), UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}
N_PREV_ACTIONS = 6

STEP_PENALTY = -0.1
WALL_PENALTY = -0.5
GOAL_REWARD = 1.0
# Finite set of previous-reward values. Index 0 is none-yet.
REWARD_VALUES = (None, STEP_PENALTY, STEP_PENALTY + WALL_PENALTY, GOAL_REWARD)
R_NONE, R_STEP, R_WALL, R_GOAL = range(4)
N_PREV_REWARDS = 4

DEFAULT_MAX_STATES = 200_000


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int
    walls: frozenset[Cell]
    corridor_cells: tuple[Cell, ...]
    room_cells: tuple[frozenset[Cell], frozenset[Cell]]

    def is_open(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and cell not in self.walls

    @property
    def open_cells(self) -> list[Cell]:
        """Non-wall cells in row-major order."""
        return [
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if (x, y) not in self.walls
        ]

    def validate(self) -> None:
        cells = self.open_cells
        if not cells:
            raise LayoutError("layout has no open cells")
        a, b = self.room_cells
        if a & b:
            raise LayoutError("rooms overlap")
        if len(set(self.corridor_cells)) != len(self.corridor_cells):
            raise LayoutError("duplicate corridor cells")
        seen = {cells[0]}
        frontier = deque([cells[0]])
        while frontier:
            x, y = frontier.popleft()
            for dx, dy in MOVES.values():
                nxt = (x + dx, y + dy)
                if nxt not in seen and self.is_open(nxt):
                    seen.add(nxt)
                    frontier.append(nxt)
        if len(seen) != len(cells):
            raise LayoutError("open cells are not connected")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "walls": sorted([list(c) for c in self.walls]),
            "corridor_cells": [list(c) for c in self.corridor_cells],
            "room_cells": [sorted([list(c) for c in room]) for room in self.room_cells],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridLayout":
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            walls=frozenset(tuple(c) for c in d["walls"]),
            corridor_cells=tuple(tuple(c) for c in d["corridor_cells"]),
            room_cells=tuple(frozenset(tuple(c) for c in room) for room in d["room_cells"]),
        )


def two_room_layout(room_width: int = 5, room_height: int = 5, corridor_length: int = 3) -> GridLayout:
    """Two rooms side by side joined by a one-cell-wide horizontal corridor.

    The corridor runs along the middle row; every other cell in the corridor
    columns is a wall. Grid edges act as walls.
    """
    if room_width < 2 or room_height < 3 or corridor_length < 1:
        raise LayoutError(
            f"dims too small for two rooms and a corridor: room {room_width}x{room_height}, "
            f"corridor {corridor_length}"
        )
    width = 2 * room_width + corridor_length
    mid = room_height // 2
    left = frozenset((x, y) for x in range(room_width) for y in range(room_height))
    right = frozenset(
        (x, y) for x in range(room_width + corridor_length, width) for y in range(room_height)
    )
    corridor = tuple((x, mid) for x in range(room_width, room_width + corridor_length))
    walls = frozenset(
        (x, y)
        for x in range(room_width, room_width + corridor_length)
        for y in range(room_height)
        if y != mid
    )
    layout = GridLayout(width, room_height, walls, corridor, (left, right))
    layout.validate()
    return layout


@dataclass(frozen=True)
class GridTask:
    layout: GridLayout
    goal: Cell
    discount: float = 0.95
    max_episode_steps: int = 100

    def __post_init__(self):
        if not self.layout.is_open(self.goal):
            raise LayoutError(f"goal {self.goal} is not an open cell")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be positive")

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "goal": list(self.goal),
            "discount": self.discount,
            "max_episode_steps": self.max_episode_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridTask":
        return cls(
            layout=GridLayout.from_dict(d["layout"]),
            goal=tuple(d["goal"]),
            discount=float(d["discount"]),
            max_episode_steps=int(d["max_episode_steps"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GridTask":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GridState:
    position: Cell
    prev_action: int = NONE_YET
    prev_reward: int = R_NONE  # index into REWARD_VALUES
    elapsed: int = field(default=0, compare=False)

    def __post_init__(self):
        if (self.prev_action == NONE_YET) != (self.prev_reward == R_NONE):
            raise ValueError("prev_action and prev_reward must both be none-yet or both set")


def make_two_room_task(
    seed: int,
    room_width: int = 5,
    room_height: int = 5,
    corridor_length: int = 3,
    discount: float = 0.95,
    max_episode_steps: int = 100,
) -> GridTask:
    """Two-room task with a goal drawn uniformly over open cells."""
    layout = two_room_layout(room_width, room_height, corridor_length)
    cells = layout.open_cells
    rng = np.random.default_rng(seed)
    goal = cells[int(rng.integers(len(cells)))]
    return GridTask(layout, goal, discount, max_episode_steps)


def make_task_suite(
    n_tasks: int, seed: int, **layout_kw
) -> list[GridTask]:
    """``n_tasks`` goal-randomized tasks sharing one layout."""
    seeds = np.random.SeedSequence(seed).generate_state(n_tasks)
    return [make_two_room_task(int(s), **layout_kw) for s in seeds]


def start_cells(task: GridTask) -> list[Cell]:
    return [c for c in task.layout.open_cells if c != task.goal]


def grid_reset(task: GridTask, rng: np.random.Generator) -> GridState:
    cells = start_cells(task)
    return GridState(cells[int(rng.integers(len(cells)))])


def grid_step(
    task: GridTask, state: GridState, action: int, rng: np.random.Generator | None = None
) -> tuple[GridState, float, bool]:
    """One deterministic transition. ``rng`` is accepted for interface symmetry only."""
    if action not in MOVES:
        raise ValueError(f"invalid action id {action!r}")
    dx, dy = MOVES[action]
    x, y = state.position
    target = (x + dx, y + dy)
    if task.layout.is_open(target):
        position = target
        r_idx = R_GOAL if position == task.goal else R_STEP
    else:
        position = state.position
        r_idx = R_GOAL if position == task.goal else R_WALL
    elapsed = state.elapsed + 1
    done = r_idx == R_GOAL or elapsed >= task.max_episode_steps
    return GridState(position, action, r_idx, elapsed), REWARD_VALUES[r_idx], done


@dataclass
class TabularMdp:
    """Finite MDP with dense ``transition[s, a, s']`` and ``reward[s, a]``.

    Terminal states are absorbing with zero reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    terminal: frozenset[int] = frozenset()

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        s, a, s2 = self.transition.shape
        if s != s2 or self.reward.shape != (s, a):
            raise ValueError(
                f"shape mismatch: transition {self.transition.shape}, reward {self.reward.shape}"
            )
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("rewards must be finite")
        if np.any(self.transition < 0) or not np.allclose(
            self.transition.sum(axis=2), 1.0, rtol=0, atol=1e-12
        ):
            raise ValueError("transition rows must be distributions")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        self.terminal = frozenset(int(t) for t in self.terminal)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.terminal)] = True
        return mask

    def nonterminal_start(self) -> np.ndarray:
        """Uniform distribution over non-terminal states."""
        start = (~self.terminal_mask).astype(float)
        return start / start.sum()


def state_index(cell_idx: int, prev_action: int, prev_reward: int) -> int:
    return (cell_idx * N_PREV_ACTIONS + prev_action) * N_PREV_REWARDS + prev_reward


class GridEncoding:
    """Bijection between grid states and integer MDP states for one task."""

    def __init__(self, task: GridTask):
        self.task = task
        self.cells = task.layout.open_cells
        self.cell_index = {c: i for i, c in enumerate(self.cells)}
        self.n_states = len(self.cells) * N_PREV_ACTIONS * N_PREV_REWARDS + 1
        self.absorbing = self.n_states - 1

    def encode(self, state: GridState) -> int:
        return state_index(self.cell_index[state.position], state.prev_action, state.prev_reward)

    def decode(self, s: int) -> GridState:
        if s == self.absorbing:
            raise ValueError("the absorbing state has no grid counterpart")
        r = s % N_PREV_REWARDS
        rest = s // N_PREV_REWARDS
        return GridState(self.cells[rest // N_PREV_ACTIONS], rest % N_PREV_ACTIONS, r)

    def states(self) -> Iterable[GridState]:
        """All grid states admitted by the invariants, in index order."""
        for s in range(self.n_states - 1):
            r = s % N_PREV_REWARDS
            a = (s // N_PREV_REWARDS) % N_PREV_ACTIONS
            if (a == NONE_YET) == (r == R_NONE):
                yield self.decode(s)

    def start_states(self) -> np.ndarray:
        return np.array(
            [state_index(self.cell_index[c], NONE_YET, R_NONE) for c in start_cells(self.task)],
            dtype=np.int64,
        )


def grid_to_mdp(task: GridTask, max_states: int = DEFAULT_MAX_STATES) -> TabularMdp:
    """Exact tabular encoding of ``task``; reaching the goal leads to an absorbing state.

    Index combinations that violate the GridState invariant (only one of
    prev_action / prev_reward none-yet) are unreachable; they are given the
    same dynamics as their position so every row is a valid distribution.
    The step cap is not part of the state and so is not encoded.
    """
    enc = GridEncoding(task)
    n = enc.n_states
    if n > max_states:
        raise ValueError(f"state space of {n} states exceeds cap {max_states}")
    transition = np.zeros((n, N_ACTIONS, n))
    reward = np.zeros((n, N_ACTIONS))
    for ci, cell in enumerate(enc.cells):
        for a in range(N_ACTIONS):
            nxt, r, _ = grid_step(task, GridState(cell), a)
            if nxt.prev_reward == R_GOAL:
                s_next = enc.absorbing
            else:
                s_next = enc.encode(nxt)
            for pa in range(N_PREV_ACTIONS):
                for pr in range(N_PREV_REWARDS):
                    s = state_index(ci, pa, pr)
                    transition[s, a, s_next] = 1.0
                    reward[s, a] = r
    transition[enc.absorbing, :, enc.absorbing] = 1.0
    return TabularMdp(transition, reward, task.discount, frozenset({enc.absorbing}))


def corridor_states(task: GridTask, prev_actions: Sequence[int] = (LEFT, RIGHT)) -> list[tuple[Cell, int, int]]:
    """(cell, prev_action, state index) for corridor cells with prev_reward equal to the step penalty."""
    enc = GridEncoding(task)
    out = []
    for cell in task.layout.corridor_cells:
        for pa in prev_actions:
            out.append((cell, pa, state_index(enc.cell_index[cell], pa, R_STEP)))
    return out
