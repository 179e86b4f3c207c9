import json

import pytest

from conftest import DEFAULT_MAP, ROOT
from harness.config import (
    apply_overrides, build_experiment, config_hash, env_config, expand_agent_specs, load_config, parse_override,
    worker_count,
)
from models.configs import Activation, AuxKind, Baseline
from utils.errors import ConfigurationError


def test_parse_override_decodes_json_values():
    assert parse_override('agent.batch_size=64') == ('agent.batch_size', 64)
    assert parse_override('agent.activation=fta') == ('agent.activation', 'fta')
    assert parse_override('baselines=["scratch"]') == ('baselines', ['scratch'])
    with pytest.raises(ConfigurationError):
        parse_override('no-equals-sign')


def test_apply_overrides_builds_sections_and_copies():
    data = {'agent': {'batch_size': 32}}
    out = apply_overrides(data, ['agent.fta.eta=0.4', 'seeds=2'])
    assert out == {'agent': {'batch_size': 32, 'fta': {'eta': 0.4}}, 'seeds': 2}
    assert data == {'agent': {'batch_size': 32}}
    with pytest.raises(ConfigurationError):
        apply_overrides({'seeds': 2}, ['seeds.value=3'])


def test_eta_grid_expands_to_one_spec_per_eta():
    specs = expand_agent_specs([{'name': 'fta', 'activation': 'fta', 'fta': {'eta': 'grid'}}], (0.2, 0.4))
    assert [s.name for s in specs] == ['fta[eta=0.2]', 'fta[eta=0.4]']
    assert specs[1].overrides['fta'] == {'eta': 0.4}


def test_duplicate_and_nameless_specs_rejected():
    with pytest.raises(ConfigurationError):
        expand_agent_specs([{'name': 'a'}, {'name': 'a'}], (0.2,))
    with pytest.raises(ConfigurationError):
        expand_agent_specs([{'activation': 'fta'}], (0.2,))


def test_build_experiment_from_dict():
    cfg = build_experiment({
        'map_path': DEFAULT_MAP,
        'training_goal': [9, 9],
        'agent_specs': [{'name': 'relu+xy', 'activation': 'relu32', 'aux': {'kind': 'XY'}}],
        'tasks': 'all',
        'baselines': ['scratch'],
        'seeds': 2,
    })
    assert cfg.training_goal == (9, 9)
    assert cfg.tasks.mode == 'all'
    assert cfg.baselines == (Baseline.SCRATCH,)
    agent = cfg.agent_specs[0].build(cfg.agent)
    assert agent.activation is Activation.RELU32
    assert agent.aux.kind is AuxKind.XY
    assert agent.aux.weight == pytest.approx(0.0001)


@pytest.mark.parametrize('data', [
    {'map_path': DEFAULT_MAP, 'unknown_key': 1},
    {'map_path': DEFAULT_MAP, 'agent': {'activation': 'tanh'}},
    {'map_path': DEFAULT_MAP, 'agent_specs': [{'name': 'x', 'aux': {'kind': 'Telepathy'}}]},
    {'map_path': DEFAULT_MAP, 'baselines': ['oracle']},
    {'map_path': DEFAULT_MAP, 'seeds': 0},
    {'training_goal': [9, 9]},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigurationError):
        build_experiment(data)


def test_shipped_config_resolves_map_path():
    cfg = load_config(f'{ROOT}/configs/default.json', ['seeds=1'])
    assert cfg.map_path.endswith('default_maze.txt')
    assert cfg.seeds == 1
    assert env_config(cfg).goal == (9, 9)
    assert env_config(cfg, (0, 0)).goal == (0, 0)


def test_missing_and_malformed_config_files(tmp_path):
    with pytest.raises(ConfigurationError, match='not found'):
        load_config(str(tmp_path / 'nope.json'))
    bad = tmp_path / 'bad.json'
    bad.write_text('{not json')
    with pytest.raises(ConfigurationError, match='not valid JSON'):
        load_config(str(bad))


def test_config_hash_is_order_independent():
    a = {'seeds': 2, 'agent': {'batch_size': 32, 'gamma': 0.99}}
    b = json.loads('{"agent": {"gamma": 0.99, "batch_size": 32}, "seeds": 2}')
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, 'seeds': 3})
    assert len(config_hash(a)) == 40


def test_config_hash_matches_git_blob_hash():
    # `printf '{}' | git hash-object --stdin`
    assert config_hash({}) == '9e26dfeeb6e641a33dae4961196235bdb965b21b'


def test_worker_count(monkeypatch):
    monkeypatch.setenv('REPLAB_WORKERS', '3')
    assert worker_count() == 3
    for bad in ('zero', '0'):
        monkeypatch.setenv('REPLAB_WORKERS', bad)
        with pytest.raises(ConfigurationError):
            worker_count()
