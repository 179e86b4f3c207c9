import os

import numpy as np
import pytest

from envs.gridworld import load_map, parse_map

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_MAP = os.path.join(ROOT, 'maps', 'default_maze.txt')

TINY_MAP = """
....
.#..
...T
"""

OPEN_GRID = """
.....
.....
.....
.....
.....
"""


@pytest.fixture
def tiny_maze():
    return parse_map(TINY_MAP)


@pytest.fixture
def open_grid():
    return parse_map(OPEN_GRID)


@pytest.fixture(scope='session')
def default_maze():
    return load_map(DEFAULT_MAP)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (modified in place and restored)"""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        plus = f()
        flat[i] = old - eps
        minus = f()
        flat[i] = old
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def sample_indices(x: np.ndarray, count: int, rng: np.random.Generator):
    return rng.choice(x.size, size=min(count, x.size), replace=False)


def finite_difference_at(f, x: np.ndarray, indices, eps: float = 1e-6) -> np.ndarray:
    """Central differences at selected flat indices of ``x``"""
    flat = x.reshape(-1)
    out = []
    for i in indices:
        old = flat[i]
        flat[i] = old + eps
        plus = f()
        flat[i] = old - eps
        minus = f()
        flat[i] = old
        out.append((plus - minus) / (2 * eps))
    return np.array(out)
