import os

import pytest

from result_store import ResultStore, TableKind, format_cell, read_rows
from utils.errors import DuplicateKeyError, UsageError


@pytest.fixture
def store(tmp_path):
    return ResultStore(str(tmp_path / 'results'))


def _rank(rank, row, col, similarity=0.5):
    return {'rank': rank, 'goal_row': row, 'goal_col': col, 'similarity': similarity}


def test_format_cell():
    assert format_cell(None) == ''
    assert format_cell(True) == '1'
    assert format_cell(0.1) == '0.1'
    assert format_cell([1, 2.5]) == '1;2.5'


def test_append_writes_header_once(store):
    assert store.append(TableKind.TASK_RANKS, [_rank(1, 9, 9)]) == 1
    assert store.append(TableKind.TASK_RANKS, [_rank(2, 9, 10)]) == 1
    with open(store.path(TableKind.TASK_RANKS)) as f:
        lines = f.read().splitlines()
    assert lines[0] == 'rank,goal_row,goal_col,similarity'
    assert len(lines) == 3
    assert store.read(TableKind.TASK_RANKS)[1]['goal_col'] == '10'


def test_duplicate_keys(store):
    store.append(TableKind.TASK_RANKS, [_rank(1, 9, 9)])
    with pytest.raises(DuplicateKeyError):
        store.append(TableKind.TASK_RANKS, [_rank(5, 9, 9)])
    with pytest.raises(DuplicateKeyError):
        store.append(TableKind.TASK_RANKS, [_rank(2, 1, 1), _rank(3, 1, 1)])
    assert store.append(TableKind.TASK_RANKS, [_rank(5, 9, 9), _rank(2, 1, 1)], skip_existing=True) == 1
    assert store.has_key(TableKind.TASK_RANKS, (1, 1))
    assert len(store.read(TableKind.TASK_RANKS)) == 2


def test_keys_survive_reopening(store):
    store.append(TableKind.TASK_RANKS, [_rank(1, 9, 9)])
    reopened = ResultStore(store.root)
    with pytest.raises(DuplicateKeyError):
        reopened.append(TableKind.TASK_RANKS, [_rank(1, 9, 9)])


def test_replace_only_derived_tables(store):
    row = {'spec': 'relu', 'task': '0,0', 'lr': 0.001, 'mean_auc': 1.0}
    store.replace(TableKind.STAGE2_SELECTION, [row])
    store.replace(TableKind.STAGE2_SELECTION, [row, {**row, 'task': '1,1'}])
    assert len(store.read(TableKind.STAGE2_SELECTION)) == 2
    with pytest.raises(DuplicateKeyError):
        store.replace(TableKind.STAGE2_SELECTION, [row, row])
    with pytest.raises(UsageError):
        store.replace(TableKind.TASK_RANKS, [_rank(1, 9, 9)])


def test_staged_jobs_merge_in_job_order(store):
    store.stage('job-b', {'TASK_RANKS': [_rank(2, 0, 0)]})
    store.stage('job-a', {'TASK_RANKS': [_rank(1, 9, 9)]})
    store.stage('job-c', {'TASK_RANKS': [_rank(7, 9, 9)]})
    assert store.get_stats()['staged_jobs'] == 3
    assert store.merge_staged() == 3
    rows = store.read(TableKind.TASK_RANKS)
    assert [r['rank'] for r in rows] == ['1', '2']
    assert os.listdir(store.staging_dir) == []
    assert store.merge_staged() == 0


def test_stage_rejects_unknown_tables(store):
    with pytest.raises(UsageError):
        store.stage('job', {'REWARDS': []})


def test_stats_and_emptiness(store):
    assert store.is_empty()
    store.append(TableKind.TASK_RANKS, [_rank(1, 9, 9)])
    open(store.checkpoint_path('abc-s0'), 'wb').close()
    open(store.checkpoint_path('abc-s0.value'), 'wb').close()
    stats = store.get_stats()
    assert stats['tables']['task_ranks'] == 1
    assert stats['checkpoints'] == 1
    assert not store.is_empty()
    assert store.is_empty(TableKind.TRANSFER_AUC)


def test_lookup():
    assert TableKind.lookup('transfer_auc') is TableKind.TRANSFER_AUC
    assert TableKind.lookup('PROPERTIES_RAW') is TableKind.PROPERTIES_RAW
    with pytest.raises(UsageError):
        TableKind.lookup('rewards')


def test_read_missing_file(tmp_path):
    assert read_rows(str(tmp_path / 'none.csv')) == []
