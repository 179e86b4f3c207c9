from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, FrozenSet, Optional, Tuple

import numpy as np

from utils.errors import ConfigurationError

Cell = Tuple[int, int]
RGB = Tuple[int, int, int]

DEFAULT_PALETTE: Dict[str, RGB] = {
    'wall': (128, 128, 128),
    'floor': (0, 0, 0),
    'agent': (255, 0, 0),
}
PALETTE_ROLES = ('wall', 'floor', 'agent')


def normalize_pixels(rgb: np.ndarray) -> np.ndarray:
    """Affine map of 0..255 channel values onto [-1, 1] in float32"""
    return rgb.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


@dataclass(frozen=True)
class MazeMap:
    """Grid layout of the maze: walls, free cells (row-major order) and palette"""

    width: int
    height: int
    walls: FrozenSet[Cell]
    free_cells: Tuple[Cell, ...]
    palette: Dict[str, RGB] = field(default_factory=lambda: dict(DEFAULT_PALETTE), compare=False)
    training_goal: Optional[Cell] = None  # the 'T' cell of the map file, if any

    def __post_init__(self):
        overlap = self.walls.intersection(self.free_cells)
        if overlap:
            raise ConfigurationError(f"Cells are both wall and free: {sorted(overlap)[:5]}")
        if len(self.walls) + len(set(self.free_cells)) != self.width * self.height:
            raise ConfigurationError(
                f"Walls ({len(self.walls)}) and free cells ({len(self.free_cells)}) "
                f"do not cover the {self.height}x{self.width} grid"
            )
        missing = [role for role in PALETTE_ROLES if role not in self.palette]
        if missing:
            raise ConfigurationError(f"Palette is missing roles: {missing}")
        colors = [tuple(self.palette[role]) for role in PALETTE_ROLES]
        if len(set(colors)) != len(colors):
            raise ConfigurationError(f"Palette colors must be distinct, got {colors}")
        if self.training_goal is not None and not self.is_free(self.training_goal):
            raise ConfigurationError(f"Training goal {self.training_goal} is not a free cell")

    def __repr__(self):
        return f'<MazeMap {self.height}x{self.width} free={len(self.free_cells)}>'

    @cached_property
    def cell_index(self) -> Dict[Cell, int]:
        return {cell: i for i, cell in enumerate(self.free_cells)}

    def is_free(self, cell: Cell) -> bool:
        return tuple(cell) in self.cell_index

    def in_bounds(self, cell: Cell) -> bool:
        row, col = cell
        return 0 <= row < self.height and 0 <= col < self.width

    @cached_property
    def background_rgb(self) -> np.ndarray:
        """Raw 0..255 image of walls and floor; the goal is painted as floor"""
        image = np.empty((self.height, self.width, 3), dtype=np.uint8)
        image[:, :] = self.palette['floor']
        for row, col in self.walls:
            image[row, col] = self.palette['wall']
        image.setflags(write=False)
        return image

    @cached_property
    def background(self) -> np.ndarray:
        image = normalize_pixels(self.background_rgb)
        image.setflags(write=False)
        return image

    def to_dict(self) -> Dict[str, Any]:
        return {
            'width': self.width,
            'height': self.height,
            'walls': sorted(self.walls),
            'free_cells': list(self.free_cells),
            'palette': {role: list(rgb) for role, rgb in self.palette.items()},
            'training_goal': list(self.training_goal) if self.training_goal else None,
        }


@dataclass(frozen=True)
class EnvConfig:
    """One task of the maze: where the goal is and how episodes are scored"""

    goal: Cell
    gamma: float = 0.99
    episode_cutoff: int = 100  # steps
    reward_goal: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.episode_cutoff < 1:
            raise ConfigurationError(f"episode_cutoff must be >= 1, got {self.episode_cutoff}")

    def validate_against(self, maze: MazeMap) -> None:
        if not maze.is_free(self.goal):
            raise ConfigurationError(f"Goal {tuple(self.goal)} is not a free cell of {maze!r}")

    def with_goal(self, goal: Cell) -> 'EnvConfig':
        return replace(self, goal=tuple(goal))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'goal': list(self.goal),
            'gamma': self.gamma,
            'episode_cutoff': self.episode_cutoff,
            'reward_goal': self.reward_goal,
        }


@dataclass(frozen=True)
class Transition:
    """One environment step; positions are kept so auxiliary targets can be derived"""

    s: np.ndarray
    a: int
    s_next: np.ndarray
    r: float
    discount: float  # gamma if non-terminal, 0 at the goal
    truncated: bool
    position: Cell
    next_position: Cell

    @property
    def terminal(self) -> bool:
        return self.discount == 0.0 and not self.truncated

    @property
    def storable(self) -> bool:
        return not self.truncated

    def __repr__(self):
        return (f'<Transition {self.position}-{self.a}->{self.next_position} '
                f'r={self.r} discount={self.discount} truncated={self.truncated}>')


@dataclass(frozen=True)
class EnvState:
    """Agent position plus the episode bookkeeping a step needs"""

    maze: MazeMap
    cfg: EnvConfig
    rng: np.random.Generator = field(compare=False, repr=False)
    position: Cell = (0, 0)
    steps: int = 0
    terminated: bool = False
