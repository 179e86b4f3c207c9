import os

import pandas as pd
import pytest

from harness.report import (
    PROPERTY_NAMES, box_stats, build_report, load_table, property_correlations, relative_transfer, transfer_summary,
)
from result_store import ResultStore, TableKind
from utils.errors import UsageError

# representation -> per-task transfer AUCs on tasks 9,10 and 0,0
AUCS = {
    ('relu', 'relu32', 'relu-0', 0): (4.0, 2.0),
    ('relu', 'relu32', 'relu-1', 1): (6.0, 4.0),
    ('fta', 'fta[eta=0.2]', 'fta-0', 0): (8.0, 6.0),
    ('fta', 'fta[eta=0.2]', 'fta-1', 1): (7.0, 5.0),
}
TASKS = (('9,10', 9, 10, 2), ('0,0', 0, 0, 173))


@pytest.fixture
def store(tmp_path):
    store = ResultStore(str(tmp_path / 'results'))
    runs, traces, raw, normalized, transfer = [], [], [], [], []
    for i, ((spec, tag, rid, seed), aucs) in enumerate(AUCS.items()):
        runs.append({'config_hash': f'h-{spec}', 'run_id': rid, 'spec': spec, 'activation': tag, 'lr': 0.001,
                     'seed': seed, 'auc': 1.0, 'converged': True, 'freeze_step': 200 if seed == 0 else None,
                     'steps': 200, 'checkpoint': f'{rid}.ckpt'})
        for step in (100, 200):
            traces.append({'config_hash': f'h-{spec}', 'stage': 'stage1', 'spec': spec, 'lr': 0.001, 'seed': seed,
                           'task': '9,9', 'step': step, 'mean_return': step / 400, 'episodes': 10})
        for time_step, frozen in ((100, False), (200, True)):
            for j, metric in enumerate(('dynamics_awareness', 'diversity', 'orthogonality', 'sparsity')):
                raw.append({'representation_id': rid, 'time_step': time_step, 'frozen': frozen, 'metric': metric,
                            'value': 0.1 * (i + j) + time_step / 1000})
            for metric in ('complexity_reduction', 'non_interference'):
                normalized.append({'representation_id': rid, 'time_step': time_step, 'frozen': frozen,
                                   'metric': metric, 'value': 0.2 * i + 0.05})
        for (task, row, col, rank), value in zip(TASKS, aucs):
            transfer.append({'spec': spec, 'baseline': '', 'activation': tag, 'representation_id': rid,
                             'task': task, 'goal_row': row, 'goal_col': col, 'rank': rank, 'similarity': 1.0 / rank,
                             'seed': seed, 'lr': 0.001, 'auc': value, 'config_hash': f'h2-{rid}-{task}'})
    for task, row, col, rank in TASKS:
        for seed in (0, 1):
            transfer.append({'spec': 'scratch:relu32', 'baseline': 'scratch', 'activation': 'relu32',
                             'representation_id': '', 'task': task, 'goal_row': row, 'goal_col': col, 'rank': rank,
                             'similarity': 1.0 / rank, 'seed': seed, 'lr': 0.01, 'auc': 2.0,
                             'config_hash': f'hs-{task}-{seed}'})

    store.append(TableKind.STAGE1_RUNS, runs)
    store.append(TableKind.TRAINING_TRACES, traces)
    store.append(TableKind.PROPERTIES_RAW, raw)
    store.replace(TableKind.PROPERTIES_NORMALIZED, normalized)
    store.replace(TableKind.TRANSFER_AUC, transfer)
    store.replace(TableKind.STAGE1_SELECTION, [
        {'spec': 'relu', 'activation': 'relu32', 'lr': 0.001, 'mean_auc': 1.0, 'runs': 2, 'converged_runs': 2,
         'run_ids': ['relu-0', 'relu-1']},
        {'spec': 'fta', 'activation': 'fta[eta=0.2]', 'lr': 0.001, 'mean_auc': 1.0, 'runs': 2, 'converged_runs': 2,
         'run_ids': ['fta-0', 'fta-1']},
    ])
    return store


def test_empty_store_is_a_usage_error(tmp_path):
    with pytest.raises(UsageError):
        build_report(ResultStore(str(tmp_path / 'empty')))


def test_transfer_summary(store):
    summary = transfer_summary(load_table(store, TableKind.TRANSFER_AUC)).set_index('spec')
    assert summary.loc['relu', 'mean_auc'] == pytest.approx(4.0)
    assert summary.loc['fta', 'mean_auc'] == pytest.approx(6.5)
    assert summary.loc['scratch:relu32', 'ci95'] == 0.0
    assert summary.loc['relu', 'samples'] == 4


def test_relative_transfer_uses_matching_scratch(store):
    relative = relative_transfer(load_table(store, TableKind.TRANSFER_AUC))
    assert set(relative['spec']) == {'relu'}
    assert relative['relative_auc'].mean() == pytest.approx(2.0)


def test_box_stats(store):
    box = box_stats(load_table(store, TableKind.TRANSFER_AUC)).set_index('spec')
    assert box.loc['relu', 'median'] == pytest.approx(4.0)
    assert box.loc['fta', 'whisker_high'] == 8.0


def test_build_report_writes_tables_and_plots(store, tmp_path):
    written = build_report(store, str(tmp_path / 'report'))
    for path in written.values():
        assert os.path.getsize(path) > 0
    assert {'transfer_summary', 'property_scatter', 'property_correlations',
            'learning_curves_svg', 'property_scatter_svg', 'property_over_time_svg'} <= set(written)

    scatter = pd.read_csv(written['property_scatter'])
    assert len(scatter) == 4 * len(PROPERTY_NAMES)
    top = scatter[scatter['top3'] == 1]
    assert set(top['representation_id']) == {'fta-0', 'fta-1', 'relu-1'}
    frozen_sparsity = scatter[(scatter['property'] == 'sparsity') & (scatter['representation_id'] == 'relu-0')]
    assert frozen_sparsity['value'].iloc[0] == pytest.approx(0.3 + 0.2)

    over_time = pd.read_csv(written['property_over_time'])
    assert set(over_time['time_step']) == {100, 200}

    with open(written['learning_curves_svg']) as f:
        assert f.read().lstrip().startswith('<?xml')


def test_report_is_reproducible(store, tmp_path):
    first = build_report(store, str(tmp_path / 'a'))
    second = build_report(store, str(tmp_path / 'b'))
    for name in first:
        with open(first[name], 'rb') as fa, open(second[name], 'rb') as fb:
            assert fa.read() == fb.read(), name


def test_property_correlations_cover_every_pair():
    frame = pd.DataFrame({'representation_id': ['a', 'b', 'c'],
                          **{name: [0.1, 0.5, 0.9] for name in PROPERTY_NAMES}})
    frame['sparsity'] = [0.9, 0.5, 0.1]
    corr = property_correlations(frame)
    assert len(corr) == 15
    pair = corr[(corr['property_a'] == 'diversity') & (corr['property_b'] == 'sparsity')]
    assert pair['pearson'].iloc[0] == pytest.approx(-1.0)
    assert set(corr['representations']) == {3}
