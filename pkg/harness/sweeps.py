"""Stepsize sweeps: AUC per run, best stepsize per agent spec (stage 1) and per task (stage 2)."""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from models.records import TrainingTrace
from utils.errors import UsageError

logger = logging.getLogger(__name__)


def auc(trace: Union[TrainingTrace, Sequence[float]]) -> float:
    """Sum of the recorded mean returns"""
    values = trace.checkpoint_values() if isinstance(trace, TrainingTrace) else list(trace)
    if not values:
        raise UsageError("AUC needs at least one recorded return")
    return float(np.sum(np.asarray(values, dtype=np.float64)))


def select_best(grid_aucs: Mapping[float, Sequence[float]]) -> Tuple[float, float]:
    """(stepsize, mean AUC) with the highest mean; ties go to the lower stepsize"""
    if not grid_aucs:
        raise UsageError("Cannot select a stepsize from an empty sweep")
    means = {float(lr): float(np.mean(values)) for lr, values in grid_aucs.items() if len(values)}
    if not means:
        raise UsageError("Every stepsize in the sweep is missing its runs")
    best = max(means.items(), key=lambda item: (item[1], -item[0]))
    return best


@dataclass
class RunResult:
    """One finished training run inside a sweep"""

    spec: str
    lr: float
    seed: int
    auc: float
    run_id: str = ''
    converged: bool = True
    task: str = ''


@dataclass
class Selection:
    spec: str
    lr: float
    mean_auc: float
    chosen: List[RunResult] = field(default_factory=list)
    task: str = ''

    @property
    def converged_runs(self) -> int:
        return sum(r.converged for r in self.chosen)

    @property
    def unconverged(self) -> bool:
        return self.converged_runs == 0


def _group(results: Sequence[RunResult]) -> Dict[float, List[RunResult]]:
    grid: Dict[float, List[RunResult]] = defaultdict(list)
    for result in results:
        grid[float(result.lr)].append(result)
    return grid


def select_stage1(spec: str, results: Sequence[RunResult]) -> Selection:
    """Best stepsize by mean training AUC; keeps the seed representations trained at it"""
    grid = _group(results)
    lr, mean_auc = select_best({lr: [r.auc for r in runs] for lr, runs in grid.items()})
    chosen = sorted(grid[lr], key=lambda r: r.seed)
    selection = Selection(spec=spec, lr=lr, mean_auc=mean_auc, chosen=chosen)
    if all(not r.converged for r in results):
        logger.warning(f"{spec}: no stage-1 run met the early-saving criterion; keeping lr={lr} anyway")
    logger.info(f"{spec}: stage-1 stepsize {lr} (mean AUC {mean_auc:.4f} over {len(chosen)} seeds)")
    return selection


def select_stage2(spec: str, task: str, results: Sequence[RunResult]) -> Selection:
    """Best stepsize for one (agent spec, task) by mean AUC over the representations"""
    grid = _group(results)
    lr, mean_auc = select_best({lr: [r.auc for r in runs] for lr, runs in grid.items()})
    chosen = sorted(grid[lr], key=lambda r: r.seed)
    logger.debug(f"{spec} on {task}: stage-2 stepsize {lr} (mean AUC {mean_auc:.4f})")
    return Selection(spec=spec, lr=lr, mean_auc=mean_auc, chosen=chosen, task=task)


def sweep_stage1(spec: str, stepsizes: Sequence[float], seeds: int,
                 run: Callable[[float, int], RunResult]) -> Selection:
    """Run every (stepsize, seed) in-process and select"""
    results = [run(lr, seed) for lr in stepsizes for seed in range(seeds)]
    return select_stage1(spec, results)


def sweep_stage2(spec: str, task: str, stepsizes: Sequence[float], seeds: int,
                 run: Callable[[float, int], RunResult]) -> Selection:
    results = [run(lr, seed) for lr in stepsizes for seed in range(seeds)]
    return select_stage2(spec, task, results)
