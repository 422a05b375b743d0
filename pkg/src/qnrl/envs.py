"""Deterministic grid worlds with an exact value-iteration oracle.

Cells are ``(x, y)`` with ``x`` the column and ``y`` the row, row 0 on top.
Actions are indices into ``ACTIONS``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qnrl.errors import InvalidInputError, InvalidTransitionError

ACTIONS = ("up", "down", "left", "right")
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))
N_ACTIONS = len(ACTIONS)

DEFAULT_LAYOUT = """\
S.....
..#...
..#.#.
....#.
......
.....G
"""


@dataclass(frozen=True)
class GridWorld:
    width: int
    height: int
    start: tuple[int, int]
    goal: tuple[int, int]
    obstacles: frozenset = frozenset()
    step_reward: float = -0.01
    goal_reward: float = 1.0
    max_episode_steps: int = 200

    def __post_init__(self):
        object.__setattr__(self, "obstacles", frozenset(tuple(c) for c in self.obstacles))
        if self.width < 1 or self.height < 1 or self.max_episode_steps < 1:
            raise InvalidInputError("grid dimensions and episode length must be positive")
        for name, cell in (("start", self.start), ("goal", self.goal)):
            if not self.in_bounds(cell):
                raise InvalidInputError(f"{name} cell {cell} is outside the grid")
            if cell in self.obstacles:
                raise InvalidInputError(f"{name} cell {cell} is an obstacle")
        if self.start == self.goal:
            raise InvalidInputError("start and goal must differ")

    def in_bounds(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def index(self, cell) -> int:
        return cell[1] * self.width + cell[0]

    def cells(self):
        """Every non-obstacle cell in row-major order."""
        return [(x, y) for y in range(self.height) for x in range(self.width)
                if (x, y) not in self.obstacles]

    def move(self, cell, action: int):
        dx, dy = MOVES[action]
        nxt = (cell[0] + dx, cell[1] + dy)
        if not self.in_bounds(nxt) or nxt in self.obstacles:
            return cell
        return nxt


@dataclass(frozen=True)
class GridState:
    cell: tuple[int, int]
    t: int = 0
    terminal: bool = False


def parse_grid(text: str, **kwargs) -> GridWorld:
    """Build a grid from rows of '.', '#', 'S' and 'G'."""
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows:
        raise InvalidInputError("grid text is empty")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InvalidInputError("grid rows have unequal lengths")
    start = goal = None
    obstacles = set()
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == "#":
                obstacles.add((x, y))
            elif ch in "SG":
                if (start if ch == "S" else goal) is not None:
                    raise InvalidInputError(f"grid has more than one {ch!r}")
                if ch == "S":
                    start = (x, y)
                else:
                    goal = (x, y)
            elif ch != ".":
                raise InvalidInputError(f"unexpected grid character {ch!r}")
    if start is None or goal is None:
        raise InvalidInputError("grid needs exactly one 'S' and one 'G'")
    return GridWorld(width, len(rows), start, goal, frozenset(obstacles), **kwargs)


def load_grid(path, **kwargs) -> GridWorld:
    return parse_grid(Path(path).read_text(), **kwargs)


def default_gridworld(**kwargs) -> GridWorld:
    return parse_grid(DEFAULT_LAYOUT, **kwargs)


def env_reset(env: GridWorld) -> GridState:
    return GridState(env.start, 0, False)


def env_step(env: GridWorld, state: GridState, action: int) -> tuple[GridState, float, bool]:
    if state.terminal:
        raise InvalidTransitionError("cannot step from a terminal state")
    if not 0 <= action < N_ACTIONS:
        raise InvalidInputError(f"action {action} out of range")
    nxt = env.move(state.cell, action)
    t = state.t + 1
    reached = nxt == env.goal
    reward = env.goal_reward if reached else env.step_reward
    terminal = reached or t >= env.max_episode_steps
    return GridState(nxt, t, terminal), reward, terminal


def features(env: GridWorld, state) -> np.ndarray:
    """One-hot encoding of the agent's cell; accepts a GridState or a cell."""
    cell = state.cell if isinstance(state, GridState) else state
    x = np.zeros(env.n_cells)
    x[env.index(cell)] = 1.0
    return x


@dataclass(frozen=True)
class TabularQ:
    """Q-table with one row per cell index; obstacle and goal rows are zero."""

    values: np.ndarray

    def __getitem__(self, key):
        return self.values[key]


def value_iteration(env: GridWorld, discount: float, tol: float = 1e-10,
                    max_iter: int = 100_000) -> TabularQ:
    """Optimal Q by synchronous Bellman backups.

    Stops once successive sweeps differ by at most ``tol * (1 - discount) / 2``,
    which puts the result within ``discount * tol / 2`` of the fixed point.
    """
    if not 0.0 <= discount < 1.0:
        raise InvalidInputError(f"discount must lie in [0, 1), got {discount}")
    if tol <= 0.0:
        raise InvalidInputError("tol must be positive")
    cells = [c for c in env.cells() if c != env.goal]
    idx = np.array([env.index(c) for c in cells], dtype=np.intp)
    nxt = np.array([[env.index(env.move(c, a)) for a in range(N_ACTIONS)] for c in cells],
                   dtype=np.intp)
    goal_idx = env.index(env.goal)
    reward = np.where(nxt == goal_idx, env.goal_reward, env.step_reward)
    Q = np.zeros((env.n_cells, N_ACTIONS))
    stop = tol * (1.0 - discount) / 2.0
    for _ in range(max_iter):
        v = Q.max(axis=1)
        v[goal_idx] = 0.0
        new = reward + discount * v[nxt]
        delta = float(np.max(np.abs(new - Q[idx]))) if len(idx) else 0.0
        Q[idx] = new
        if delta <= stop:
            break
    return TabularQ(Q)


def bfs_distances(env: GridWorld) -> dict:
    """Fewest moves from each cell to the goal; unreachable cells are absent."""
    dist = {env.goal: 0}
    frontier = deque([env.goal])
    while frontier:
        cell = frontier.popleft()
        for dx, dy in MOVES:
            prev = (cell[0] - dx, cell[1] - dy)
            if env.in_bounds(prev) and prev not in env.obstacles and prev not in dist:
                if env.move(prev, MOVES.index((dx, dy))) == cell:
                    dist[prev] = dist[cell] + 1
                    frontier.append(prev)
    return dist


def reachable_cells(env: GridWorld) -> list:
    """Non-terminal cells reachable from the start, in row-major order."""
    seen = {env.start}
    frontier = deque([env.start])
    while frontier:
        cell = frontier.popleft()
        if cell == env.goal:
            continue
        for a in range(N_ACTIONS):
            nxt = env.move(cell, a)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return [c for c in env.cells() if c in seen and c != env.goal]
