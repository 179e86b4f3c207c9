"""Uniform experience replay.

Observations are kept as uint8 pixels when they come from the maze renderer (the
decoded value is bit-identical to the rendered one) and as float32 otherwise.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from models.maze import Transition, normalize_pixels
from utils.errors import UsageError

logger = logging.getLogger(__name__)


def encode_pixels(obs: np.ndarray) -> np.ndarray:
    return np.rint((obs.astype(np.float64) + 1.0) * 127.5).astype(np.uint8)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    discounts: np.ndarray
    next_obs: np.ndarray
    next_actions: np.ndarray
    positions: np.ndarray
    next_positions: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.actions)

    @property
    def nonterminal(self) -> np.ndarray:
        return (self.discounts > 0).astype(self.obs.dtype)


class ReplayBuffer:
    """Ring buffer of storable transitions, sampled uniformly with replacement"""

    def __init__(self, capacity: int, obs_shape: Tuple[int, ...] = (15, 15, 3), pixel_codec: bool = True):
        if capacity < 1:
            raise UsageError(f"Replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.pixel_codec = pixel_codec
        obs_dtype = np.uint8 if pixel_codec else np.float32
        self.obs = np.zeros((capacity,) + tuple(obs_shape), dtype=obs_dtype)
        self.next_obs = np.zeros_like(self.obs)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.next_actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.discounts = np.zeros(capacity, dtype=np.float32)
        self.positions = np.zeros((capacity, 2), dtype=np.int64)
        self.next_positions = np.zeros((capacity, 2), dtype=np.int64)
        self.episodes = np.full(capacity, -1, dtype=np.int64)
        self.serials = np.full(capacity, -1, dtype=np.int64)
        self.cursor = 0
        self.size = 0
        self.added = 0

    def __len__(self):
        return self.size

    def __repr__(self):
        return f'<ReplayBuffer {self.size}/{self.capacity} codec={self.pixel_codec}>'

    def _encode(self, obs: np.ndarray) -> np.ndarray:
        return encode_pixels(obs) if self.pixel_codec else obs

    def _decode(self, stored: np.ndarray) -> np.ndarray:
        return normalize_pixels(stored) if self.pixel_codec else stored

    def add(self, transition: Transition, next_action: int = 0, episode: int = 0) -> None:
        if not transition.storable:
            raise UsageError(f"Truncated transitions are never stored: {transition!r}")
        i = self.cursor
        self.obs[i] = self._encode(transition.s)
        self.next_obs[i] = self._encode(transition.s_next)
        self.actions[i] = transition.a
        self.next_actions[i] = next_action
        self.rewards[i] = transition.r
        self.discounts[i] = transition.discount
        self.positions[i] = transition.position
        self.next_positions[i] = transition.next_position
        self.episodes[i] = episode
        self.serials[i] = self.added
        self.added += 1
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def gather(self, indices: np.ndarray) -> Batch:
        return Batch(
            obs=self._decode(self.obs[indices]),
            actions=self.actions[indices],
            rewards=self.rewards[indices],
            discounts=self.discounts[indices],
            next_obs=self._decode(self.next_obs[indices]),
            next_actions=self.next_actions[indices],
            positions=self.positions[indices],
            next_positions=self.next_positions[indices],
            indices=indices,
        )

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise UsageError("Cannot sample from an empty replay buffer")
        return self.gather(rng.integers(0, self.size, size=batch_size))

    def sample_offset_pairs(self, batch_size: int, offset: int, rng: np.random.Generator,
                            max_rounds: int = 100) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Observation pairs (s_t, s_{t+offset}) taken from the same episode

        Returns None while no such pair is stored yet.
        """
        chosen = []
        needed = batch_size
        for _ in range(max_rounds):
            anchors = rng.integers(0, self.size, size=needed)
            partners = (anchors + offset) % self.capacity
            valid = (
                (self.serials[partners] == self.serials[anchors] + offset)
                & (self.episodes[partners] == self.episodes[anchors])
            )
            chosen.extend(anchors[valid].tolist())
            needed = batch_size - len(chosen)
            if needed <= 0:
                break
        if len(chosen) < batch_size:
            return None
        anchors = np.asarray(chosen[:batch_size], dtype=np.int64)
        partners = (anchors + offset) % self.capacity
        return self._decode(self.obs[anchors]), self._decode(self.obs[partners])
