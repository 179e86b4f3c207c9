from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from models.maze import Cell

METRIC_NAMES = ('L_rep', 'dynamics_awareness', 'diversity', 'orthogonality', 'sparsity', 'interference')
NORMALIZED_NAMES = ('complexity_reduction', 'non_interference')


@dataclass
class ReturnRecord:
    step: int
    mean_return: float  # mean over the last (up to) 100 completed episodes
    episodes: int


@dataclass
class InterferenceRecord:
    sync_index: int
    step: int
    value: float


@dataclass
class TrainingTrace:
    """Everything a single training run records while it learns"""

    returns: List[ReturnRecord] = field(default_factory=list)
    episode_lengths: List[int] = field(default_factory=list)
    episode_returns: List[float] = field(default_factory=list)
    interference: List[InterferenceRecord] = field(default_factory=list)
    property_snapshots: List['PropertyReport'] = field(default_factory=list)
    freeze_step: Optional[int] = None
    converged: bool = False
    steps: int = 0

    def __repr__(self):
        return (f'<TrainingTrace steps={self.steps} records={len(self.returns)} '
                f'episodes={len(self.episode_lengths)} converged={self.converged}>')

    def checkpoint_values(self) -> List[float]:
        return [record.mean_return for record in self.returns]

    def interference_values(self, until_step: Optional[int] = None) -> List[float]:
        return [r.value for r in self.interference if until_step is None or r.step <= until_step]

    def to_rows(self) -> List[Dict[str, Any]]:
        return [{'step': r.step, 'mean_return': r.mean_return, 'episodes': r.episodes} for r in self.returns]


@dataclass(frozen=True)
class DistancePair:
    d_v: float  # |V(phi_i) - V(phi_j)|
    d_s: float  # ||phi_i - phi_j||_2


@dataclass
class ProbeSet:
    """Fixed measurement transitions shared by every representation being compared"""

    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    rewards: np.ndarray
    discounts: np.ndarray
    positions: np.ndarray
    next_positions: np.ndarray
    seed: int = 0
    pairing: Optional[np.ndarray] = None  # j(i) for dynamics awareness, fixed per probe
    phi: Optional[np.ndarray] = None  # cached N x d representation
    phi_next: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None  # cached max_a Q(phi_i, a)

    def __len__(self):
        return len(self.actions)

    def __repr__(self):
        return f'<ProbeSet N={len(self)} seed={self.seed} cached={self.phi is not None}>'

    def unique_observations(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct images among obs and next_obs plus the inverse index of each"""
        stacked = np.concatenate([self.obs, self.next_obs])
        flat = stacked.reshape(len(stacked), -1)
        _, first, inverse = np.unique(flat, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        n = len(self.obs)
        return stacked[first], inverse[:n], inverse[n:]

    def cache(self, phi: np.ndarray, phi_next: np.ndarray, values: np.ndarray) -> 'ProbeSet':
        self.phi = np.asarray(phi)
        self.phi_next = np.asarray(phi_next)
        self.values = np.asarray(values)
        return self

    def distance_pair(self, i: int, j: int) -> DistancePair:
        if self.phi is None or self.values is None:
            raise ValueError("Representation and values must be cached before measuring distances")
        return DistancePair(
            d_v=float(abs(self.values[i] - self.values[j])),
            d_s=float(np.linalg.norm(self.phi[i] - self.phi[j])),
        )


@dataclass
class ComplexityRecord:
    L_rep: float
    L_max: Optional[float] = None  # filled in by the population pass


@dataclass
class PropertyReport:
    """Raw and population-normalized properties of one representation at one time step"""

    representation_id: str
    time_step: int
    raw: Dict[str, Optional[float]] = field(default_factory=dict)
    normalized: Dict[str, Optional[float]] = field(default_factory=dict)
    frozen: bool = False  # measured at freeze time rather than during training
    low_confidence: bool = False  # fewer than 10 sync events behind the interference value

    def __repr__(self):
        return f'<PropertyReport {self.representation_id} t={self.time_step}>'

    def to_rows(self, kind: str = 'raw') -> List[Dict[str, Any]]:
        values = self.raw if kind == 'raw' else self.normalized
        names = METRIC_NAMES if kind == 'raw' else NORMALIZED_NAMES
        return [
            {
                'representation_id': self.representation_id,
                'time_step': self.time_step,
                'frozen': int(self.frozen),
                'metric': name,
                'value': '' if values.get(name) is None else values[name],
            }
            for name in names
        ]


@dataclass(frozen=True)
class SuccessorProfile:
    goal: Cell
    psi: np.ndarray  # |S| x |S|, row s is psi(s)
    states: Tuple[Cell, ...]

    @property
    def flat(self) -> np.ndarray:
        return self.psi.reshape(-1)

    def __repr__(self):
        return f'<SuccessorProfile goal={self.goal} states={len(self.states)}>'
