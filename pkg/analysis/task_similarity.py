"""Tabular ground truth for the maze: optimal values, successor representations and
the dot-product similarity between tasks that orders the transfer goals.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from envs.gridworld import NUM_ACTIONS, move
from models.maze import Cell, MazeMap
from models.records import SuccessorProfile
from utils.errors import ConfigurationError, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TabularMDP:
    states: Tuple[Cell, ...]
    transitions: np.ndarray  # S x A next-state indices
    gamma: float = 0.99

    def __repr__(self):
        return f'<TabularMDP states={len(self.states)} gamma={self.gamma}>'

    @classmethod
    def from_maze(cls, maze: MazeMap, gamma: float = 0.99) -> 'TabularMDP':
        index = maze.cell_index
        table = np.array(
            [[index[move(maze, cell, a)] for a in range(NUM_ACTIONS)] for cell in maze.free_cells],
            dtype=np.int64,
        )
        return cls(states=tuple(maze.free_cells), transitions=table, gamma=gamma)

    def index_of(self, cell: Cell) -> int:
        try:
            return self.states.index(tuple(cell))
        except ValueError:
            raise ConfigurationError(f"{tuple(cell)} is not a state of {self!r}")


@dataclass
class RankedTask:
    rank: int
    goal: Cell
    similarity: float

    def to_row(self) -> Dict[str, object]:
        return {'rank': self.rank, 'goal_row': self.goal[0], 'goal_col': self.goal[1], 'similarity': self.similarity}


def value_iteration(mdp: TabularMDP, goal: Cell, tol: float = 1e-10,
                    max_iterations: int = 100000) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal V* for reward 1 on entering ``goal``; the goal is absorbing with V*=0

    The greedy policy breaks ties toward the lowest action index.
    """
    g = mdp.index_of(goal)
    entering = (mdp.transitions == g).astype(np.float64)
    v = np.zeros(len(mdp.states))
    for iteration in range(max_iterations):
        q = entering + mdp.gamma * (1.0 - entering) * v[mdp.transitions]
        new_v = q.max(axis=1)
        new_v[g] = 0.0
        delta = np.max(np.abs(new_v - v))
        v = new_v
        if delta < tol:
            break
    else:
        logger.warning(f"Value iteration for goal {goal} stopped at {max_iterations} sweeps")

    unreachable = [mdp.states[s] for s in range(len(v)) if s != g and v[s] <= 0.0]
    if unreachable:
        raise ConfigurationError(f"Goal {tuple(goal)} is unreachable from {unreachable[:5]}")
    q = entering + mdp.gamma * (1.0 - entering) * v[mdp.transitions]
    return v, np.argmax(q, axis=1)


def successor_representation(mdp: TabularMDP, policy: np.ndarray, goal: Cell) -> np.ndarray:
    """S x S table; row s is the discounted visitation vector of the trajectory from s to the goal"""
    g = mdp.index_of(goal)
    n = len(mdp.states)
    psi = np.zeros((n, n))
    for start in range(n):
        s, discount, visited = start, 1.0, set()
        while True:
            if s in visited:
                raise ConfigurationError(f"Policy cycles from {mdp.states[start]} without reaching {tuple(goal)}")
            visited.add(s)
            psi[start, s] += discount
            if s == g:
                break
            s = mdp.transitions[s, policy[s]]
            discount *= mdp.gamma
    return psi


def sr_closed_form(mdp: TabularMDP, policy: np.ndarray, goal: Cell) -> np.ndarray:
    """(I - gamma P_pi)^-1 with the goal row of P_pi zeroed (absorption ends the sum)"""
    g = mdp.index_of(goal)
    n = len(mdp.states)
    p = np.zeros((n, n))
    p[np.arange(n), mdp.transitions[np.arange(n), policy]] = 1.0
    p[g] = 0.0
    return np.linalg.solve(np.eye(n) - mdp.gamma * p, np.eye(n))


def successor_profile(mdp: TabularMDP, goal: Cell) -> SuccessorProfile:
    _, policy = value_iteration(mdp, goal)
    return SuccessorProfile(goal=tuple(goal), psi=successor_representation(mdp, policy, goal), states=mdp.states)


def task_similarity(a: SuccessorProfile, b: SuccessorProfile) -> float:
    if a.states != b.states:
        raise UsageError(f"Profiles {a!r} and {b!r} use different state orderings")
    return float(a.flat @ b.flat)


def rank_tasks(maze: MazeMap, training_goal: Cell, gamma: float = 0.99,
               goals: Optional[Sequence[Cell]] = None) -> List[RankedTask]:
    """Tasks by descending similarity to the training task, ties in (row, col) order; training task first"""
    mdp = TabularMDP.from_maze(maze, gamma)
    goals = [tuple(g) for g in (goals or maze.free_cells)]
    training_goal = tuple(training_goal)
    reference = successor_profile(mdp, training_goal)
    scored = [(task_similarity(reference, successor_profile(mdp, goal)), goal) for goal in goals]

    ordered = sorted(
        scored,
        key=lambda item: (item[1] != training_goal, -item[0], item[1]),
    )
    logger.info(f"Ranked {len(ordered)} tasks against training goal {training_goal}")
    return [RankedTask(rank=i + 1, goal=goal, similarity=sim) for i, (sim, goal) in enumerate(ordered)]


def stratified_tasks(ranking: Sequence[RankedTask], count: int) -> List[RankedTask]:
    """``count`` tasks at evenly spaced ranks, always the first and the last"""
    if count >= len(ranking):
        return list(ranking)
    positions = np.unique(np.rint(np.linspace(0, len(ranking) - 1, count)).astype(int))
    return [ranking[i] for i in positions]


def rank_map(maze: MazeMap, ranking: Sequence[RankedTask]) -> str:
    """ASCII grid of ranks, walls drawn as ###"""
    ranks = {task.goal: task.rank for task in ranking}
    width = max(3, len(str(len(ranking))))
    lines = []
    for row in range(maze.height):
        cells = []
        for col in range(maze.width):
            if (row, col) in maze.walls:
                cells.append('#' * width)
            else:
                rank = ranks.get((row, col))
                cells.append(f'{rank:>{width}}' if rank is not None else '.' * width)
        lines.append(' '.join(cells))
    return '\n'.join(lines) + '\n'
