import numpy as np
import pytest

from agents.replay import ReplayBuffer, encode_pixels
from envs.gridworld import render_position
from models.maze import Transition, normalize_pixels
from utils.errors import UsageError


def _transition(maze, position, next_position, truncated=False, goal=False):
    return Transition(
        s=render_position(maze, position),
        a=3,
        s_next=render_position(maze, next_position),
        r=1.0 if goal else 0.0,
        discount=0.0 if goal else 0.99,
        truncated=truncated,
        position=position,
        next_position=next_position,
    )


def test_pixel_codec_is_lossless(tiny_maze):
    obs = render_position(tiny_maze, (0, 2))
    np.testing.assert_array_equal(normalize_pixels(encode_pixels(obs)), obs)


def test_add_and_sample(tiny_maze, rng):
    buffer = ReplayBuffer(capacity=10, obs_shape=(3, 4, 3))
    buffer.add(_transition(tiny_maze, (0, 0), (0, 1)), next_action=2)
    buffer.add(_transition(tiny_maze, (1, 3), (2, 3), goal=True), next_action=0)
    batch = buffer.sample(16, rng)
    assert len(batch) == 16
    assert batch.obs.shape == (16, 3, 4, 3)
    assert set(batch.indices.tolist()) <= {0, 1}
    np.testing.assert_array_equal(batch.nonterminal, (batch.discounts > 0).astype(np.float32))


def test_truncated_transitions_rejected(tiny_maze):
    buffer = ReplayBuffer(capacity=4, obs_shape=(3, 4, 3))
    with pytest.raises(UsageError):
        buffer.add(_transition(tiny_maze, (0, 0), (0, 0), truncated=True))
    assert len(buffer) == 0


def test_ring_overwrites_oldest(tiny_maze):
    buffer = ReplayBuffer(capacity=3, obs_shape=(3, 4, 3))
    cells = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]
    for cell in cells:
        buffer.add(_transition(tiny_maze, cell, cell))
    assert len(buffer) == 3
    stored = {tuple(p) for p in buffer.positions.tolist()}
    assert stored == {(0, 2), (0, 3), (1, 0)}


def test_empty_sample_raises(rng):
    with pytest.raises(UsageError):
        ReplayBuffer(capacity=2).sample(1, rng)


def test_offset_pairs_stay_in_episode(tiny_maze, rng):
    buffer = ReplayBuffer(capacity=20, obs_shape=(3, 4, 3))
    assert buffer.size == 0
    path = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 3)]
    for i in range(len(path) - 1):
        buffer.add(_transition(tiny_maze, path[i], path[i + 1]), episode=0)
    buffer.add(_transition(tiny_maze, (2, 0), (2, 1)), episode=1)
    pairs = buffer.sample_offset_pairs(8, offset=3, rng=rng)
    assert pairs is not None
    anchors, partners = pairs
    # only anchor 0 has a partner three steps later in the same episode
    np.testing.assert_array_equal(anchors, np.repeat(render_position(tiny_maze, (0, 0))[None], 8, axis=0))
    np.testing.assert_array_equal(partners, np.repeat(render_position(tiny_maze, (0, 3))[None], 8, axis=0))


def test_offset_pairs_absent(tiny_maze, rng):
    buffer = ReplayBuffer(capacity=20, obs_shape=(3, 4, 3))
    buffer.add(_transition(tiny_maze, (0, 0), (0, 1)), episode=0)
    assert buffer.sample_offset_pairs(4, offset=3, rng=rng, max_rounds=5) is None
