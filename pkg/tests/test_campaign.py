import pytest

from analysis.task_similarity import rank_tasks
from conftest import DEFAULT_MAP
from harness.campaign import activation_tag, run_campaign, select_tasks, task_label
from harness.config import build_experiment
from models.configs import Activation, AgentConfig, FTAConfig, TaskSelection
from result_store import ResultStore, TableKind, write_rows
from utils.errors import ConfigurationError

GOALS = [[9, 10], [0, 0], [14, 14]]


@pytest.fixture
def cfg():
    return build_experiment({
        'map_path': DEFAULT_MAP,
        'agent': {
            'train_steps': 200, 'transfer_steps': 100, 'record_interval': 100, 'property_interval': 100,
            'batch_size': 8, 'buffer_capacity': 200, 'target_sync_period': 16,
        },
        'agent_specs': [{'name': 'relu', 'activation': 'relu32'}, {'name': 'fta', 'activation': 'fta'}],
        'stage1_stepsizes': [0.001],
        'stage2_stepsizes_small': [0.001],
        'stage2_stepsizes_large': [0.0003],
        'seeds': 2,
        'tasks': {'mode': 'list', 'goals': GOALS},
        'baselines': [],
        'probe_size': 20,
    })


@pytest.fixture
def store(tmp_path):
    return ResultStore(str(tmp_path / 'results'))


def _drop_row(store, kind, predicate):
    rows = store.read(kind)
    kept = [row for row in rows if not predicate(row)]
    assert len(kept) == len(rows) - 1
    write_rows(store.path(kind), kind.columns, kept)
    return ResultStore(store.root)


def test_campaign_rows_and_idempotent_resume(cfg, store):
    summary = run_campaign(cfg, store)
    assert summary.stage1_trained == 4
    assert summary.stage2_trained == 12
    assert summary.transfer_rows == 12
    assert len(store.read(TableKind.TASK_RANKS)) == 173
    transfer = store.read(TableKind.TRANSFER_AUC)
    assert {(r['spec'], r['task']) for r in transfer} == {
        (spec, task_label(tuple(goal))) for spec in ('relu', 'fta') for goal in GOALS
    }
    assert {r['lr'] for r in transfer if r['spec'] == 'fta'} == {'0.0003'}
    assert len(store.read(TableKind.STAGE1_SELECTION)) == 2
    assert summary.normalized_rows > 0

    again = run_campaign(cfg, ResultStore(store.root))
    assert again.trained == 0
    assert len(ResultStore(store.root).read(TableKind.TRANSFER_AUC)) == 12

    target = transfer[0]
    reopened = _drop_row(store, TableKind.STAGE2_RUNS,
                         lambda r: (r['config_hash'], r['seed'], r['task']) ==
                                   (target['config_hash'], target['seed'], target['task']))
    resumed = run_campaign(cfg, reopened)
    assert resumed.stage1_trained == 0
    assert resumed.stage2_trained == 1
    rebuilt = {(r['spec'], r['seed'], r['task']): r['auc'] for r in reopened.read(TableKind.TRANSFER_AUC)}
    assert rebuilt[(target['spec'], target['seed'], target['task'])] == target['auc']


def _flip_payload_tail(raw):
    return raw[:-4] + b'\xff\xff\xff\xff'


def _shift_first_offset(raw):
    return raw.replace(b'"offset":0', b'"offset":8', 1)


@pytest.mark.parametrize('corrupt', [_flip_payload_tail, _shift_first_offset])
def test_corrupted_checkpoint_is_retrained(cfg, store, corrupt):
    run_campaign(cfg, store)
    victim = store.read(TableKind.STAGE2_RUNS)[0]
    path = store.checkpoint_path(victim['representation_id'])
    with open(path, 'rb') as f:
        original = f.read()
    damaged = corrupt(original)
    assert damaged != original
    with open(path, 'wb') as f:
        f.write(damaged)

    reopened = _drop_row(store, TableKind.STAGE2_RUNS,
                         lambda r: (r['config_hash'], r['seed'], r['task']) ==
                                   (victim['config_hash'], victim['seed'], victim['task']))
    summary = run_campaign(cfg, reopened)
    assert summary.stage2_trained == 1
    with open(path, 'rb') as f:
        assert f.read() == original


def test_select_tasks(default_maze):
    ranking = rank_tasks(default_maze, (9, 9))
    assert len(select_tasks(TaskSelection(mode='all'), ranking)) == 173
    assert len(select_tasks(TaskSelection(count=4), ranking)) == 4
    picked = select_tasks(TaskSelection(mode='list', goals=((0, 0), (9, 10))), ranking)
    assert [t.goal for t in picked] == [(0, 0), (9, 10)]
    with pytest.raises(ConfigurationError):
        select_tasks(TaskSelection(mode='list', goals=((20, 20),)), ranking)


def test_activation_tag():
    assert activation_tag(AgentConfig()) == 'relu32'
    assert activation_tag(AgentConfig(activation=Activation.FTA, fta=FTAConfig(eta=0.4))) == 'fta[eta=0.4]'
