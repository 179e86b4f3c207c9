"""Deterministic pixel-observation maze.

The pure operations (``reset``, ``step``, ``render``, ``enumerate_tasks``) work on
immutable ``EnvState`` values; ``MazeEnv`` wraps them behind the gymnasium interface for
the training loops.
"""
import logging
import os
from collections import deque
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from models.maze import (
    Cell, DEFAULT_PALETTE, EnvConfig, EnvState, MazeMap, Transition, normalize_pixels,
)
from utils.errors import ConfigurationError, UsageError

logger = logging.getLogger(__name__)

# (d_row, d_col) for up, down, left, right
ACTIONS: Tuple[Tuple[int, int], ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))
NUM_ACTIONS = len(ACTIONS)

WALL, FREE, TRAINING_GOAL = '#', '.', 'T'


def parse_map(text: str, palette: Optional[Dict[str, Tuple[int, int, int]]] = None) -> MazeMap:
    """Build a MazeMap from ASCII rows ('#' wall, '.' free, 'T' training goal)"""
    rows = [line.rstrip('\n\r') for line in text.splitlines() if line.strip()]
    if not rows:
        raise ConfigurationError("Map text is empty")
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise ConfigurationError(f"Map rows must all have width {width}")

    walls, free, goal = set(), [], None
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == WALL:
                walls.add((r, c))
            elif ch in (FREE, TRAINING_GOAL):
                free.append((r, c))
                if ch == TRAINING_GOAL:
                    if goal is not None:
                        raise ConfigurationError(f"Map has more than one training goal: {goal} and {(r, c)}")
                    goal = (r, c)
            else:
                raise ConfigurationError(f"Unknown map character {ch!r} at {(r, c)}")

    colors = dict(DEFAULT_PALETTE)
    if palette:
        colors.update({role: tuple(rgb) for role, rgb in palette.items()})
    maze = MazeMap(
        width=width,
        height=len(rows),
        walls=frozenset(walls),
        free_cells=tuple(free),
        palette=colors,
        training_goal=goal,
    )
    _check_connected(maze)
    return maze


def load_map(path: str, palette: Optional[Dict[str, Tuple[int, int, int]]] = None) -> MazeMap:
    if not os.path.exists(path):
        raise ConfigurationError(f"Map file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        maze = parse_map(f.read(), palette)
    logger.debug(f"Loaded {maze!r} from {path}")
    return maze


def _check_connected(maze: MazeMap) -> None:
    if not maze.free_cells:
        raise ConfigurationError("Map has no free cells")
    seen = {maze.free_cells[0]}
    queue = deque(seen)
    while queue:
        cell = queue.popleft()
        for a in range(NUM_ACTIONS):
            nxt = move(maze, cell, a)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if len(seen) != len(maze.free_cells):
        unreachable = sorted(set(maze.free_cells) - seen)
        raise ConfigurationError(f"Free region is not connected; unreachable cells include {unreachable[:5]}")


def move(maze: MazeMap, cell: Cell, action: int) -> Cell:
    """Deterministic dynamics: one cell in the action's direction unless blocked"""
    d_row, d_col = ACTIONS[action]
    target = (cell[0] + d_row, cell[1] + d_col)
    if maze.in_bounds(target) and maze.is_free(target):
        return target
    return tuple(cell)


def _start_cells(maze: MazeMap, goal: Cell) -> List[Cell]:
    return [cell for cell in maze.free_cells if cell != tuple(goal)]


def reset(maze: MazeMap, cfg: EnvConfig, rng: np.random.Generator) -> EnvState:
    cfg.validate_against(maze)
    candidates = _start_cells(maze, cfg.goal)
    if not candidates:
        raise ConfigurationError(f"No free cell other than the goal {cfg.goal} to start from")
    position = candidates[int(rng.integers(len(candidates)))]
    return EnvState(maze=maze, cfg=cfg, rng=rng, position=position, steps=0, terminated=False)


def render_rgb(maze: MazeMap, position: Cell) -> np.ndarray:
    image = maze.background_rgb.copy()
    image[position[0], position[1]] = maze.palette['agent']
    return image


def render(state: EnvState, maze: Optional[MazeMap] = None) -> np.ndarray:
    """15x15x3 observation in [-1, 1]; the goal is drawn as floor"""
    maze = maze or state.maze
    return normalize_pixels(render_rgb(maze, state.position))


def render_position(maze: MazeMap, position: Cell) -> np.ndarray:
    return normalize_pixels(render_rgb(maze, position))


def step(state: EnvState, action: int) -> Tuple[Transition, EnvState]:
    if state.terminated:
        raise UsageError("step() called on a terminated episode; call reset() first")
    if not 0 <= int(action) < NUM_ACTIONS:
        raise UsageError(f"Action must be in 0..{NUM_ACTIONS - 1}, got {action}")

    maze, cfg = state.maze, state.cfg
    next_position = move(maze, state.position, int(action))
    steps = state.steps + 1
    reached = next_position == tuple(cfg.goal)
    truncated = not reached and steps >= cfg.episode_cutoff

    transition = Transition(
        s=render(state),
        a=int(action),
        s_next=render_position(maze, next_position),
        r=cfg.reward_goal if reached else 0.0,
        discount=0.0 if reached else cfg.gamma,
        truncated=truncated,
        position=tuple(state.position),
        next_position=next_position,
    )

    if reached:
        next_state = replace(state, position=next_position, steps=steps, terminated=True)
    elif truncated:
        # teleport to a fresh start; the transition itself is discarded by the caller
        next_state = reset(maze, cfg, state.rng)
    else:
        next_state = replace(state, position=next_position, steps=steps)
    return transition, next_state


def enumerate_tasks(maze: MazeMap, base: Optional[EnvConfig] = None) -> List[EnvConfig]:
    """One task per free cell, the training goal included"""
    base = base or EnvConfig(goal=maze.free_cells[0])
    return [base.with_goal(cell) for cell in maze.free_cells]


def optimal_return(maze: MazeMap, cfg: EnvConfig, start: Cell) -> float:
    """gamma^(k-1) for a start k steps from the goal (BFS distance)"""
    distance = shortest_distances(maze, cfg.goal)[tuple(start)]
    if distance == 0:
        return 0.0
    return cfg.reward_goal * cfg.gamma ** (distance - 1)


def shortest_distances(maze: MazeMap, goal: Cell) -> Dict[Cell, int]:
    distances = {tuple(goal): 0}
    queue = deque([tuple(goal)])
    while queue:
        cell = queue.popleft()
        for a in range(NUM_ACTIONS):
            nxt = move(maze, cell, a)
            if nxt not in distances:
                distances[nxt] = distances[cell] + 1
                queue.append(nxt)
    return distances


class MazeEnv(gym.Env):
    """gymnasium view of the maze; truncation teleports and reports truncated=True"""

    metadata = {'render_modes': ['rgb_array']}

    def __init__(self, maze: MazeMap, cfg: EnvConfig, rng: Optional[np.random.Generator] = None):
        super().__init__()
        cfg.validate_against(maze)
        self.maze = maze
        self.cfg = cfg
        self.observation_space = spaces.Box(-1.0, 1.0, shape=(maze.height, maze.width, 3), dtype=np.float32)
        self.action_space = spaces.Discrete(NUM_ACTIONS)
        self._rng = rng
        self.state: Optional[EnvState] = None

    def reset(self, *, seed: Optional[int] = None, options: Optional[dict] = None):
        super().reset(seed=seed)
        if self._rng is None or seed is not None:
            self._rng = self.np_random
        self.state = reset(self.maze, self.cfg, self._rng)
        return render(self.state), {'position': self.state.position}

    def step(self, action):
        if self.state is None:
            raise UsageError("MazeEnv.step() called before reset()")
        transition, self.state = step(self.state, int(action))
        obs = transition.s_next if not transition.truncated else render(self.state)
        info = {'transition': transition, 'position': self.state.position}
        return obs, transition.r, transition.terminal, transition.truncated, info

    def render(self):
        return render_rgb(self.maze, self.state.position) if self.state else None
