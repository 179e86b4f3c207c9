import pytest

from harness.sweeps import RunResult, auc, select_best, select_stage1, select_stage2, sweep_stage1
from models.records import ReturnRecord, TrainingTrace
from utils.errors import UsageError


def _trace(values):
    return TrainingTrace(returns=[ReturnRecord(step=(i + 1) * 10000, mean_return=v, episodes=100)
                                  for i, v in enumerate(values)])


class TestAUC:
    def test_ten_checkpoints(self):
        assert auc(_trace([0.8] * 10)) == pytest.approx(8.0)

    def test_all_zero(self):
        assert auc(_trace([0.0] * 5)) == 0.0

    def test_three_checkpoints(self):
        assert auc([0.1, 0.5, 0.9]) == pytest.approx(1.5)

    def test_empty_trace(self):
        with pytest.raises(UsageError):
            auc(TrainingTrace())


class TestSelectBest:
    def test_single_element_grid(self):
        assert select_best({1e-3: [2.0, 4.0]}) == (1e-3, 3.0)

    def test_highest_mean_wins(self):
        assert select_best({1e-3: [1.0, 1.0], 1e-4: [3.0, 1.0]})[0] == 1e-4

    def test_ties_go_to_lower_stepsize(self):
        assert select_best({1e-3: [2.0], 3e-4: [2.0], 1e-2: [2.0]}) == (3e-4, 2.0)

    def test_empty(self):
        with pytest.raises(UsageError):
            select_best({})
        with pytest.raises(UsageError):
            select_best({1e-3: []})


def _results(spec, table, converged=True):
    return [RunResult(spec=spec, lr=lr, seed=seed, auc=value, converged=converged)
            for lr, values in table.items() for seed, value in enumerate(values)]


def test_stage1_keeps_every_seed_at_best_stepsize():
    results = _results('relu', {1e-3: [5.0, 3.0, 4.0], 1e-4: [1.0, 9.0, 1.0]})
    selection = select_stage1('relu', list(reversed(results)))
    assert selection.lr == 1e-3
    assert selection.mean_auc == pytest.approx(4.0)
    assert [r.seed for r in selection.chosen] == [0, 1, 2]
    assert selection.converged_runs == 3


def test_stage1_flags_unconverged_but_keeps_best(caplog):
    selection = select_stage1('fta', _results('fta', {1e-3: [0.0, 0.0], 1e-5: [0.5, 0.5]}, converged=False))
    assert selection.lr == 1e-5
    assert selection.unconverged
    assert 'early-saving' in caplog.text


def test_stage2_selection_is_per_task():
    selection = select_stage2('fta', '3,4', _results('fta', {1e-2: [1.0, 2.0], 1e-3: [2.0, 2.0]}))
    assert selection.task == '3,4'
    assert selection.lr == 1e-3
    assert len(selection.chosen) == 2


def test_sweep_is_reproducible():
    def run(lr, seed):
        return RunResult(spec='relu', lr=lr, seed=seed, auc=lr * 1000 + seed)

    first = sweep_stage1('relu', (1e-3, 1e-4), 3, run)
    second = sweep_stage1('relu', (1e-3, 1e-4), 3, run)
    assert (first.lr, first.mean_auc) == (second.lr, second.mean_auc) == (1e-3, pytest.approx(2.0))
