"""Typed configuration records for agents, auxiliary tasks and experiments.

Each record validates its own invariants in ``__post_init__`` and round-trips through
plain dicts (``from_dict`` / ``to_dict``) so the JSON config file, the checkpoint
manifest and the config hash all see the same canonical form.
"""
from dataclasses import dataclass, field, fields, asdict
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from utils.errors import ConfigurationError


class Activation(Enum):
    """Representation-layer activation; the value is the config spelling"""
    RELU32 = 'relu32'
    RELU640 = 'relu640'
    FTA = 'fta'

    @property
    def pre_activation_width(self) -> int:
        return 640 if self is Activation.RELU640 else 32

    def feature_width(self, fta_bins: int) -> int:
        if self is Activation.FTA:
            return self.pre_activation_width * fta_bins
        return self.pre_activation_width


class ValueHeadKind(Enum):
    NONLINEAR = 'nonlinear'  # two hidden layers of 64
    LINEAR = 'linear'


class AuxKind(Enum):
    NONE = 'none'
    IR = 'IR'
    NAS = 'NAS'
    SF = 'SF'
    REWARD = 'Reward'
    XY = 'XY'
    VIRTUAL_VF1 = 'VirtualVF1'
    VIRTUAL_VF5 = 'VirtualVF5'
    ATC = 'ATC'


class Baseline(Enum):
    SCRATCH = 'scratch'
    RANDOM = 'random'
    INPUT = 'input'


DEFAULT_AUX_WEIGHTS: Dict[AuxKind, float] = {
    AuxKind.NONE: 0.0,
    AuxKind.IR: 0.0001,
    AuxKind.NAS: 0.001,
    AuxKind.SF: 1.0,
    AuxKind.REWARD: 1.0,
    AuxKind.XY: 0.0001,
    AuxKind.VIRTUAL_VF1: 1.0,
    AuxKind.VIRTUAL_VF5: 1.0,
    AuxKind.ATC: 1.0,
}

VIRTUAL_GOALS: Dict[AuxKind, Tuple[Tuple[int, int], ...]] = {
    AuxKind.VIRTUAL_VF1: ((7, 7),),
    AuxKind.VIRTUAL_VF5: ((0, 0), (0, 14), (14, 0), (14, 14), (7, 7)),
}


def known_fields(cls, data: Dict[str, Any]) -> Dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"Unknown {cls.__name__} keys: {unknown}")
    return dict(data)


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass(frozen=True)
class FTAConfig:
    k: int = 20
    eta: float = 0.2

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"FTA bin count must be >= 1, got {self.k}")
        if self.eta <= 0:
            raise ConfigurationError(f"FTA eta must be > 0, got {self.eta}")

    @property
    def upper(self) -> float:
        return self.eta * self.k / 2.0

    @property
    def lower(self) -> float:
        return -self.upper

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FTAConfig':
        return cls(**known_fields(cls, data))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ATCConfig:
    temporal_offset: int = 3
    shift_prob: float = 0.1
    shift_pad: int = 4
    embed_dim: int = 32
    predictor_hidden: int = 64
    tau: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError(f"ATC tau must be in (0, 1], got {self.tau}")
        if self.temporal_offset < 1:
            raise ConfigurationError(f"ATC temporal offset must be >= 1, got {self.temporal_offset}")
        if not 0.0 <= self.shift_prob <= 1.0:
            raise ConfigurationError(f"ATC shift probability must be in [0, 1], got {self.shift_prob}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ATCConfig':
        return cls(**known_fields(cls, data))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class AuxConfig:
    kind: AuxKind = AuxKind.NONE
    weight: Optional[float] = None  # None -> per-kind default
    aux_gamma: float = 0.9  # VirtualVF discount
    sf_lambda: float = 0.99
    hidden: int = 64
    virtual_goals: Optional[Tuple[Tuple[int, int], ...]] = None
    atc: ATCConfig = field(default_factory=ATCConfig)

    def __post_init__(self):
        if self.weight is None:
            object.__setattr__(self, 'weight', DEFAULT_AUX_WEIGHTS[self.kind])
        if self.kind is not AuxKind.NONE and self.weight <= 0:
            raise ConfigurationError(f"Auxiliary weight must be > 0 for {self.kind.value}, got {self.weight}")
        if self.virtual_goals is None and self.kind in VIRTUAL_GOALS:
            object.__setattr__(self, 'virtual_goals', VIRTUAL_GOALS[self.kind])
        if self.virtual_goals is not None:
            object.__setattr__(self, 'virtual_goals', tuple(tuple(g) for g in self.virtual_goals))

    @property
    def enabled(self) -> bool:
        return self.kind is not AuxKind.NONE

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AuxConfig':
        data = known_fields(cls, data)
        try:
            data['kind'] = AuxKind(data.get('kind', 'none'))
        except ValueError:
            raise ConfigurationError(
                f"Unknown auxiliary kind {data.get('kind')!r}; expected one of {[k.value for k in AuxKind]}"
            )
        if 'atc' in data:
            data['atc'] = ATCConfig.from_dict(data['atc'])
        if data.get('virtual_goals') is not None:
            data['virtual_goals'] = tuple(tuple(g) for g in data['virtual_goals'])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return _plain({
            'kind': self.kind,
            'weight': self.weight,
            'aux_gamma': self.aux_gamma,
            'sf_lambda': self.sf_lambda,
            'hidden': self.hidden,
            'virtual_goals': self.virtual_goals,
            'atc': self.atc.to_dict(),
        })


@dataclass(frozen=True)
class AgentConfig:
    """DQN agent settings; defaults follow the maze experiments"""

    epsilon: float = 0.1
    epsilon_decay: bool = False  # linear 1 -> epsilon over epsilon_decay_steps
    epsilon_start: float = 1.0
    epsilon_decay_steps: int = 100000
    batch_size: int = 32
    buffer_capacity: int = 100000
    target_sync_period: int = 64
    learning_rate: float = 0.0001
    activation: Activation = Activation.RELU32
    value_head: ValueHeadKind = ValueHeadKind.NONLINEAR
    value_hidden: int = 64
    aux: AuxConfig = field(default_factory=AuxConfig)
    fta: FTAConfig = field(default_factory=FTAConfig)
    augment: bool = False  # random shift on training inputs without a contrastive loss
    train_steps: int = 300000
    transfer_steps: int = 100000
    record_interval: int = 10000
    property_interval: int = 10000
    return_window: int = 100
    early_save_window: int = 100
    early_save_max_length: int = 100
    continue_after_freeze: bool = True

    def __post_init__(self):
        for name in ('epsilon', 'epsilon_start'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {value}")
        if self.target_sync_period < 1:
            raise ConfigurationError(f"target_sync_period must be >= 1, got {self.target_sync_period}")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigurationError(
                f"Need 1 <= batch_size <= buffer_capacity, got {self.batch_size} and {self.buffer_capacity}"
            )
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.record_interval < 1 or self.property_interval < 1:
            raise ConfigurationError("record_interval and property_interval must be >= 1")
        if self.record_interval > min(self.train_steps, self.transfer_steps):
            raise ConfigurationError(
                f"record_interval {self.record_interval} leaves no return record within "
                f"train_steps={self.train_steps} / transfer_steps={self.transfer_steps}"
            )

    @property
    def feature_width(self) -> int:
        return self.activation.feature_width(self.fta.k)

    def epsilon_at(self, step: int) -> float:
        if not self.epsilon_decay:
            return self.epsilon
        frac = min(1.0, step / float(self.epsilon_decay_steps))
        return self.epsilon_start + frac * (self.epsilon - self.epsilon_start)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AgentConfig':
        data = known_fields(cls, data)
        try:
            if 'activation' in data:
                data['activation'] = Activation(data['activation'])
            if 'value_head' in data:
                data['value_head'] = ValueHeadKind(data['value_head'])
        except ValueError as e:
            raise ConfigurationError(f"Invalid agent setting: {e}")
        if 'aux' in data:
            data['aux'] = AuxConfig.from_dict(data['aux'])
        if 'fta' in data:
            data['fta'] = FTAConfig.from_dict(data['fta'])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_dict() if hasattr(value, 'to_dict') else _plain(value)
        return out


@dataclass(frozen=True)
class AgentSpec:
    """A named (activation x auxiliary task) combination swept by the harness"""

    name: str
    overrides: Dict[str, Any] = field(default_factory=dict)  # AgentConfig keys

    def build(self, base: AgentConfig, learning_rate: Optional[float] = None) -> AgentConfig:
        merged = base.to_dict()
        for key, value in self.overrides.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                base_section = dict(merged[key])
                if key == 'aux' and value.get('kind', base_section['kind']) != base_section['kind']:
                    # per-kind defaults follow the new kind
                    base_section.update(weight=None, virtual_goals=None)
                merged[key] = {**base_section, **value}
            else:
                merged[key] = value
        if learning_rate is not None:
            merged['learning_rate'] = learning_rate
        return AgentConfig.from_dict(merged)

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, **self.overrides}


@dataclass(frozen=True)
class TaskSelection:
    mode: str = 'stratified'  # 'all' | 'stratified' | 'list'
    count: int = 10
    goals: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.mode not in ('all', 'stratified', 'list'):
            raise ConfigurationError(f"Task selection mode must be all|stratified|list, got {self.mode!r}")
        if self.mode == 'stratified' and self.count < 1:
            raise ConfigurationError(f"Stratified task count must be >= 1, got {self.count}")
        if self.mode == 'list' and not self.goals:
            raise ConfigurationError("Task selection mode 'list' needs at least one goal")


@dataclass(frozen=True)
class ExperimentConfig:
    map_path: str
    training_goal: Tuple[int, int] = (9, 9)
    palette: Optional[Dict[str, Tuple[int, int, int]]] = None
    gamma: float = 0.99
    episode_cutoff: int = 100
    reward_goal: float = 1.0
    agent: AgentConfig = field(default_factory=AgentConfig)
    agent_specs: Tuple[AgentSpec, ...] = ()
    stage1_stepsizes: Tuple[float, ...] = (1e-3, 3e-4, 1e-4, 3e-5, 1e-5)
    stage2_stepsizes_small: Tuple[float, ...] = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)
    stage2_stepsizes_large: Tuple[float, ...] = (1e-3, 3e-4, 1e-4, 3e-5, 1e-5)
    atc_stepsizes: Tuple[float, ...] = (3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5)
    fta_eta_grid: Tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    seeds: int = 5
    master_seed: int = 0
    tasks: TaskSelection = field(default_factory=TaskSelection)
    baselines: Tuple[Baseline, ...] = (Baseline.SCRATCH, Baseline.RANDOM, Baseline.INPUT)
    probe_size: int = 1000
    probe_seed: int = 0
    interference_percentile: float = 0.9
    output_dir: str = 'results'

    def __post_init__(self):
        grids = ('stage1_stepsizes', 'stage2_stepsizes_small', 'stage2_stepsizes_large', 'fta_eta_grid')
        for name in grids:
            if not getattr(self, name):
                raise ConfigurationError(f"{name} must not be empty")
        if self.seeds < 1:
            raise ConfigurationError(f"seeds must be >= 1, got {self.seeds}")
        if self.probe_size < 2:
            raise ConfigurationError(f"probe_size must be >= 2, got {self.probe_size}")
        if not 0.0 < self.interference_percentile < 1.0:
            raise ConfigurationError(
                f"interference_percentile must be in (0, 1), got {self.interference_percentile}"
            )

    def stage2_grid(self, feature_width: int) -> Tuple[float, ...]:
        return self.stage2_stepsizes_small if feature_width <= 32 else self.stage2_stepsizes_large

    def stage1_grid(self, agent: AgentConfig) -> Tuple[float, ...]:
        return self.atc_stepsizes if agent.aux.kind is AuxKind.ATC else self.stage1_stepsizes
