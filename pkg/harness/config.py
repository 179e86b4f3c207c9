"""Experiment configuration: JSON file, dotted overrides, .env settings and config hashing."""
import copy
import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

from dotenv import load_dotenv

from models.configs import (
    AgentConfig, AgentSpec, Baseline, ExperimentConfig, TaskSelection, known_fields,
)
from models.maze import Cell, EnvConfig
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_AGENT_SPECS = (
    {'name': 'relu', 'activation': 'relu32'},
    {'name': 'fta', 'activation': 'fta'},
    {'name': 'relu+vvf5', 'activation': 'relu32', 'aux': {'kind': 'VirtualVF5'}},
)
ETA_GRID = 'grid'


def parse_override(text: str) -> Any:
    key, sep, raw = text.partition('=')
    if not sep or not key:
        raise ConfigurationError(f"Override must look like dotted.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    data = copy.deepcopy(data)
    for text in overrides:
        key, value = parse_override(text)
        node = data
        parts = key.split('.')
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"Cannot override {key}: {part} is not a section")
            node = child
        node[parts[-1]] = value
        logger.debug(f"Config override {key}={value!r}")
    return data


def expand_agent_specs(specs: Sequence[Dict[str, Any]], eta_grid: Sequence[float]) -> List[AgentSpec]:
    """One AgentSpec per entry; an FTA entry with ``"eta": "grid"`` becomes one spec per eta"""
    out = []
    for raw in specs:
        raw = dict(raw)
        name = raw.pop('name', None)
        if not name:
            raise ConfigurationError(f"Agent spec needs a name: {raw}")
        fta = raw.get('fta') or {}
        if fta.get('eta') == ETA_GRID:
            for eta in eta_grid:
                overrides = copy.deepcopy(raw)
                overrides['fta'] = {**fta, 'eta': eta}
                out.append(AgentSpec(name=f'{name}[eta={eta}]', overrides=overrides))
        else:
            out.append(AgentSpec(name=name, overrides=raw))
    names = [spec.name for spec in out]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"Agent spec names must be unique, got {names}")
    return out


def _goal(value: Any, what: str) -> Cell:
    try:
        row, col = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{what} must be a [row, col] pair, got {value!r}")
    return row, col


def _resolve_path(path: str, base_dir: Optional[str]) -> str:
    if os.path.isabs(path) or os.path.exists(path) or base_dir is None:
        return path
    candidate = os.path.join(base_dir, path)
    return candidate if os.path.exists(candidate) else path


def build_experiment(data: Dict[str, Any], base_dir: Optional[str] = None) -> ExperimentConfig:
    data = known_fields(ExperimentConfig, data)
    if 'map_path' not in data:
        raise ConfigurationError("Config needs a map_path")
    data['map_path'] = _resolve_path(data['map_path'], base_dir)

    agent = AgentConfig.from_dict(data.get('agent', {}))
    data['agent'] = agent
    eta_grid = tuple(data.get('fta_eta_grid', ExperimentConfig.__dataclass_fields__['fta_eta_grid'].default))
    specs = expand_agent_specs(data.get('agent_specs') or DEFAULT_AGENT_SPECS, eta_grid)
    for spec in specs:
        spec.build(agent)  # validates every override up front
    data['agent_specs'] = tuple(specs)

    if 'training_goal' in data:
        data['training_goal'] = _goal(data['training_goal'], 'training_goal')
    if 'palette' in data and data['palette'] is not None:
        data['palette'] = {role: tuple(rgb) for role, rgb in data['palette'].items()}
    if 'tasks' in data:
        tasks = data['tasks']
        if tasks == 'all':
            tasks = {'mode': 'all'}
        tasks = known_fields(TaskSelection, tasks)
        tasks['goals'] = tuple(_goal(g, 'tasks.goals entry') for g in tasks.get('goals', ()))
        data['tasks'] = TaskSelection(**tasks)
    if 'baselines' in data:
        try:
            data['baselines'] = tuple(Baseline(b) for b in data['baselines'])
        except ValueError as e:
            raise ConfigurationError(f"Invalid baseline: {e}")
    for key in ('stage1_stepsizes', 'stage2_stepsizes_small', 'stage2_stepsizes_large', 'atc_stepsizes',
                'fta_eta_grid'):
        if key in data:
            data[key] = tuple(float(v) for v in data[key])
    return ExperimentConfig(**data)


def load_config_data(path: str, overrides: Iterable[str] = ()) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")
    return apply_overrides(data, overrides)


def load_config(path: str, overrides: Iterable[str] = ()) -> ExperimentConfig:
    data = load_config_data(path, overrides)
    cfg = build_experiment(data, base_dir=os.path.dirname(os.path.abspath(path)))
    logger.info(f"Loaded config {path} with {len(cfg.agent_specs)} agent specs, hash {config_hash(data)[:10]}")
    return cfg


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=True)


def config_hash(data: Any) -> str:
    """git-style object hash: SHA-1 of 'blob <len>\\0' + canonical JSON"""
    body = canonical_json(data).encode('utf-8')
    return hashlib.sha1(b'blob ' + str(len(body)).encode('ascii') + b'\0' + body).hexdigest()


def env_config(cfg: ExperimentConfig, goal: Optional[Cell] = None) -> EnvConfig:
    return EnvConfig(
        goal=tuple(goal or cfg.training_goal),
        gamma=cfg.gamma,
        episode_cutoff=cfg.episode_cutoff,
        reward_goal=cfg.reward_goal,
    )


def worker_count() -> int:
    load_dotenv()
    raw = os.getenv('REPLAB_WORKERS', '1')
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigurationError(f"REPLAB_WORKERS must be an integer, got {raw!r}")
    if workers < 1:
        raise ConfigurationError(f"REPLAB_WORKERS must be >= 1, got {workers}")
    return workers
