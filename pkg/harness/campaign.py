"""Two-stage campaign: stage-1 sweeps, freeze, stage-2 sweeps over tasks and baselines,
property normalization. Every sub-run is keyed by (config hash, seed, task) in the result
store, so a re-run only trains what is missing.
"""
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from agents.dqn import RunOutcome, train_stage1, train_stage2
from analysis.properties import collect_probe, normalize_reports, report_from_rows
from analysis.task_similarity import RankedTask, rank_tasks, stratified_tasks
from envs.gridworld import load_map
from harness.checkpoint import check_architecture, checkpoint_meta, load_checkpoint, save_representation
from harness.config import config_hash, env_config
from harness.seeding import RandomStreams
from harness.sweeps import RunResult, Selection, auc, select_stage1, select_stage2
from models.configs import Activation, AgentConfig, AgentSpec, AuxConfig, Baseline, ExperimentConfig, TaskSelection
from models.maze import Cell, MazeMap
from models.records import ProbeSet
from result_store import ResultStore, TableKind
from utils.errors import CheckpointError, ConfigurationError
from utils.rerun import rerun_on_failure

logger = logging.getLogger(__name__)


def activation_tag(agent: AgentConfig) -> str:
    if agent.activation is Activation.FTA:
        return f'fta[eta={agent.fta.eta}]'
    return agent.activation.value


def task_label(goal: Cell) -> str:
    return f'{goal[0]},{goal[1]}'


@dataclass
class CampaignContext:
    """What every job needs; shipped once to each worker process"""

    cfg: ExperimentConfig
    maze: MazeMap
    probe: ProbeSet
    store_root: str


@dataclass(frozen=True)
class Stage1Job:
    spec: str
    agent: AgentConfig
    seed: int
    config_hash: str

    @property
    def lr(self) -> float:
        return self.agent.learning_rate

    @property
    def run_id(self) -> str:
        return f'{self.config_hash[:16]}-s{self.seed}'

    @property
    def job_id(self) -> str:
        return f'stage1-{self.run_id}'


@dataclass(frozen=True)
class Stage2Job:
    spec: str
    agent: AgentConfig
    seed: int
    goal: Cell
    config_hash: str
    activation: str
    baseline: Optional[Baseline] = None
    source: Optional[Stage1Job] = None

    @property
    def task(self) -> str:
        return task_label(self.goal)

    @property
    def job_id(self) -> str:
        return f'stage2-{self.config_hash[:16]}-{self.goal[0]}_{self.goal[1]}-s{self.seed}'


@dataclass
class CampaignSummary:
    tasks: List[RankedTask] = field(default_factory=list)
    stage1_trained: int = 0
    stage2_trained: int = 0
    stage1_selections: Dict[str, Selection] = field(default_factory=dict)
    transfer_rows: int = 0
    normalized_rows: int = 0

    @property
    def trained(self) -> int:
        return self.stage1_trained + self.stage2_trained


def _stage1_hash(cfg: ExperimentConfig, maze: MazeMap, spec: AgentSpec, agent: AgentConfig) -> str:
    return config_hash({
        'stage': 'stage1',
        'spec': spec.name,
        'agent': agent.to_dict(),
        'env': env_config(cfg).to_dict(),
        'maze': maze.to_dict(),
        'master_seed': cfg.master_seed,
        'probe': {'size': cfg.probe_size, 'seed': cfg.probe_seed},
        'interference_percentile': cfg.interference_percentile,
    })


def _stage2_hash(cfg: ExperimentConfig, maze: MazeMap, spec: str, agent: AgentConfig, goal: Cell,
                 baseline: Optional[Baseline], source_hash: Optional[str]) -> str:
    return config_hash({
        'stage': 'stage2',
        'spec': spec,
        'baseline': baseline.value if baseline else None,
        'source': source_hash,
        'agent': agent.to_dict(),
        'env': env_config(cfg, goal).to_dict(),
        'maze': maze.to_dict(),
        'master_seed': cfg.master_seed,
    })


def _train_representation(ctx: CampaignContext, job: Stage1Job) -> Tuple[RunOutcome, str]:
    cfg = ctx.cfg
    streams = RandomStreams(cfg.master_seed).child('stage1', job.seed)
    outcome = train_stage1(ctx.maze, env_config(cfg), job.agent, streams, probe=ctx.probe, label=job.run_id,
                           percentile=cfg.interference_percentile)
    path = ResultStore(ctx.store_root).checkpoint_path(job.run_id)
    meta = checkpoint_meta(job.agent, config_hash=job.config_hash, spec=job.spec, seed=job.seed, lr=job.lr,
                           converged=outcome.converged, freeze_step=outcome.trace.freeze_step)
    save_representation(path, outcome.trunk_state, outcome.value_state, meta)
    return outcome, path


def _retrain_representation(ctx: CampaignContext, job: Stage1Job) -> None:
    logger.warning(f"{job.run_id}: rebuilding the representation checkpoint by re-running stage 1")
    _train_representation(ctx, job)


@rerun_on_failure(max_reruns=1, rerun_exceptions=(CheckpointError,), on_rerun=_retrain_representation)
def load_representation(ctx: CampaignContext, job: Stage1Job) -> Dict[str, np.ndarray]:
    tensors, manifest = load_checkpoint(ResultStore(ctx.store_root).checkpoint_path(job.run_id))
    check_architecture(manifest, job.agent.activation.value, job.agent.fta.to_dict())
    return tensors


def run_stage1_job(ctx: CampaignContext, job: Stage1Job) -> str:
    outcome, path = _train_representation(ctx, job)
    trace = outcome.trace
    task = task_label(ctx.cfg.training_goal)
    payload = {
        TableKind.STAGE1_RUNS.name: [{
            'config_hash': job.config_hash,
            'run_id': job.run_id,
            'spec': job.spec,
            'activation': activation_tag(job.agent),
            'lr': job.lr,
            'seed': job.seed,
            'auc': auc(trace),
            'converged': outcome.converged,
            'freeze_step': trace.freeze_step,
            'steps': trace.steps,
            'checkpoint': path,
        }],
        TableKind.TRAINING_TRACES.name: [
            {'config_hash': job.config_hash, 'stage': 'stage1', 'spec': job.spec, 'lr': job.lr, 'seed': job.seed,
             'task': task, **row}
            for row in trace.to_rows()
        ],
        TableKind.PROPERTIES_RAW.name: [row for report in outcome.reports for row in report.to_rows('raw')],
        TableKind.INTERFERENCE.name: [
            {'representation_id': job.run_id, 'sync_index': r.sync_index, 'step': r.step, 'value': r.value}
            for r in trace.interference
        ],
    }
    return ResultStore(ctx.store_root).stage(job.job_id, payload)


def run_stage2_job(ctx: CampaignContext, job: Stage2Job) -> str:
    trunk_state = load_representation(ctx, job.source) if job.source is not None else None
    streams = RandomStreams(ctx.cfg.master_seed).child('stage2', job.seed, job.task)
    label = f'{job.spec}@{job.task}#s{job.seed}'
    outcome = train_stage2(ctx.maze, env_config(ctx.cfg, job.goal), job.agent, streams, trunk_state=trunk_state,
                           baseline=job.baseline, label=label)
    payload = {
        TableKind.STAGE2_RUNS.name: [{
            'config_hash': job.config_hash,
            'spec': job.spec,
            'baseline': job.baseline.value if job.baseline else '',
            'activation': job.activation,
            'representation_id': job.source.run_id if job.source else '',
            'lr': job.agent.learning_rate,
            'seed': job.seed,
            'task': job.task,
            'auc': auc(outcome.trace),
        }],
        TableKind.TRAINING_TRACES.name: [
            {'config_hash': job.config_hash, 'stage': 'stage2', 'spec': job.spec, 'lr': job.agent.learning_rate,
             'seed': job.seed, 'task': job.task, **row}
            for row in outcome.trace.to_rows()
        ],
    }
    return ResultStore(ctx.store_root).stage(job.job_id, payload)


_WORKER_CONTEXT: Optional[CampaignContext] = None


def _install_context(ctx: CampaignContext) -> None:
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = ctx


def _call_in_worker(fn: Callable[[CampaignContext, Any], str], job: Any) -> str:
    return fn(_WORKER_CONTEXT, job)


def execute(ctx: CampaignContext, fn: Callable[[CampaignContext, Any], str], jobs: Sequence[Any],
            workers: int = 1) -> int:
    """Run jobs in-process (workers=1) or on a process pool; each job stages its own rows"""
    if not jobs:
        return 0
    logger.info(f"Running {len(jobs)} {fn.__name__} jobs on {workers} worker(s)")
    if workers <= 1:
        for job in jobs:
            fn(ctx, job)
        return len(jobs)

    with ProcessPoolExecutor(max_workers=workers, initializer=_install_context, initargs=(ctx,)) as pool:
        futures = {pool.submit(_call_in_worker, fn, job): job for job in jobs}
        for future in as_completed(futures):
            try:
                future.result()
            except Exception as e:
                logger.error(f"Job {futures[future].job_id} failed: {str(e)}")
                raise
    return len(jobs)


def select_tasks(selection: TaskSelection, ranking: Sequence[RankedTask]) -> List[RankedTask]:
    if selection.mode == 'all':
        return list(ranking)
    if selection.mode == 'stratified':
        return stratified_tasks(ranking, selection.count)
    by_goal = {task.goal: task for task in ranking}
    missing = [g for g in selection.goals if tuple(g) not in by_goal]
    if missing:
        raise ConfigurationError(f"Task goals {missing} are not free cells of the map")
    return [by_goal[tuple(g)] for g in selection.goals]


def _stage1_jobs(cfg: ExperimentConfig, maze: MazeMap) -> Dict[str, List[Stage1Job]]:
    jobs = {}
    for spec in cfg.agent_specs:
        base = spec.build(cfg.agent)
        jobs[spec.name] = [
            Stage1Job(spec=spec.name, agent=agent, seed=seed, config_hash=_stage1_hash(cfg, maze, spec, agent))
            for agent in (spec.build(cfg.agent, learning_rate=lr) for lr in cfg.stage1_grid(base))
            for seed in range(cfg.seeds)
        ]
    return jobs


def _baseline_agents(cfg: ExperimentConfig) -> List[Tuple[str, Baseline, AgentConfig, str]]:
    """(name, baseline, agent config, activation tag) for every requested baseline"""
    out = []
    by_tag: Dict[str, AgentConfig] = {}
    for spec in cfg.agent_specs:
        agent = spec.build(cfg.agent)
        by_tag.setdefault(activation_tag(agent), replace(agent, aux=AuxConfig(), augment=False))
    for baseline in cfg.baselines:
        if baseline is Baseline.INPUT:
            out.append(('input', baseline, replace(cfg.agent, aux=AuxConfig(), augment=False), 'input'))
            continue
        for tag, agent in by_tag.items():
            out.append((f'{baseline.value}:{tag}', baseline, agent, tag))
    return out


INPUT_FEATURE_WIDTH = 15 * 15 * 3


def _stage2_grid(cfg: ExperimentConfig, agent: AgentConfig, baseline: Optional[Baseline]) -> Tuple[float, ...]:
    width = INPUT_FEATURE_WIDTH if baseline is Baseline.INPUT else agent.feature_width
    return cfg.stage2_grid(width)


def _stage1_selections(store: ResultStore, jobs: Dict[str, List[Stage1Job]]) -> Dict[str, Selection]:
    rows = {(row['config_hash'], row['seed']): row for row in store.read(TableKind.STAGE1_RUNS)}
    selections = {}
    for spec, spec_jobs in jobs.items():
        results = []
        for job in spec_jobs:
            row = rows[(job.config_hash, str(job.seed))]
            results.append(RunResult(spec=spec, lr=job.lr, seed=job.seed, auc=float(row['auc']), run_id=job.run_id,
                                     converged=row['converged'] == '1'))
        selections[spec] = select_stage1(spec, results)
    return selections


def run_campaign(cfg: ExperimentConfig, store: ResultStore, workers: int = 1) -> CampaignSummary:
    summary = CampaignSummary()
    maze = load_map(cfg.map_path, cfg.palette)
    env_config(cfg).validate_against(maze)

    ranking = rank_tasks(maze, cfg.training_goal, cfg.gamma)
    store.append(TableKind.TASK_RANKS, [task.to_row() for task in ranking], skip_existing=True)
    summary.tasks = select_tasks(cfg.tasks, ranking)
    ranked = {task.goal: task for task in ranking}
    logger.info(f"Campaign over {len(cfg.agent_specs)} agent specs x {len(summary.tasks)} tasks x {cfg.seeds} seeds")

    probe = collect_probe(maze, env_config(cfg), RandomStreams(cfg.probe_seed).get('probe'), n=cfg.probe_size,
                          seed=cfg.probe_seed)
    ctx = CampaignContext(cfg=cfg, maze=maze, probe=probe, store_root=store.root)

    # stage 1
    stage1 = _stage1_jobs(cfg, maze)
    pending = [job for jobs in stage1.values() for job in jobs
               if not store.has_key(TableKind.STAGE1_RUNS, (job.config_hash, job.seed))]
    summary.stage1_trained = execute(ctx, run_stage1_job, pending, workers)
    store.merge_staged()

    selections = _stage1_selections(store, stage1)
    summary.stage1_selections = selections
    store.replace(TableKind.STAGE1_SELECTION, [
        {
            'spec': name,
            'activation': activation_tag(stage1[name][0].agent),
            'lr': sel.lr,
            'mean_auc': sel.mean_auc,
            'runs': len(sel.chosen),
            'converged_runs': sel.converged_runs,
            'run_ids': [r.run_id for r in sel.chosen],
        }
        for name, sel in selections.items()
    ])

    # stage 2
    jobs: List[Stage2Job] = []
    for spec in cfg.agent_specs:
        sel = selections[spec.name]
        sources = {job.seed: job for job in stage1[spec.name] if job.lr == sel.lr}
        frozen = replace(spec.build(cfg.agent, learning_rate=sel.lr), aux=AuxConfig())
        for task in summary.tasks:
            for lr in _stage2_grid(cfg, frozen, None):
                agent = replace(frozen, learning_rate=lr)
                for seed, source in sorted(sources.items()):
                    jobs.append(Stage2Job(
                        spec=spec.name, agent=agent, seed=seed, goal=task.goal, activation=activation_tag(agent),
                        source=source,
                        config_hash=_stage2_hash(cfg, maze, spec.name, agent, task.goal, None, source.config_hash),
                    ))
    for name, baseline, base_agent, tag in _baseline_agents(cfg):
        for task in summary.tasks:
            for lr in _stage2_grid(cfg, base_agent, baseline):
                agent = replace(base_agent, learning_rate=lr)
                for seed in range(cfg.seeds):
                    jobs.append(Stage2Job(
                        spec=name, agent=agent, seed=seed, goal=task.goal, activation=tag, baseline=baseline,
                        config_hash=_stage2_hash(cfg, maze, name, agent, task.goal, baseline, None),
                    ))
    pending2 = [job for job in jobs if not store.has_key(TableKind.STAGE2_RUNS, (job.config_hash, job.seed, job.task))]
    summary.stage2_trained = execute(ctx, run_stage2_job, pending2, workers)
    store.merge_staged()

    summary.transfer_rows = _write_transfer_tables(store, jobs, ranked)
    summary.normalized_rows = normalize_properties(store, [r.run_id for sel in selections.values() for r in sel.chosen])
    logger.info(f"Campaign done: trained {summary.stage1_trained} stage-1 and {summary.stage2_trained} stage-2 runs, "
                f"{summary.transfer_rows} transfer rows")
    return summary


def _write_transfer_tables(store: ResultStore, jobs: Sequence[Stage2Job], ranked: Dict[Cell, RankedTask]) -> int:
    rows = {(row['config_hash'], row['seed'], row['task']): row for row in store.read(TableKind.STAGE2_RUNS)}
    grouped: Dict[Tuple[str, Cell], List[Tuple[Stage2Job, RunResult]]] = {}
    for job in jobs:
        row = rows[(job.config_hash, str(job.seed), job.task)]
        result = RunResult(spec=job.spec, lr=job.agent.learning_rate, seed=job.seed, auc=float(row['auc']),
                           run_id=row['representation_id'], task=job.task)
        grouped.setdefault((job.spec, job.goal), []).append((job, result))

    selection_rows, transfer_rows = [], []
    for (spec, goal), entries in grouped.items():
        sel = select_stage2(spec, task_label(goal), [result for _, result in entries])
        selection_rows.append({'spec': spec, 'task': sel.task, 'lr': sel.lr, 'mean_auc': sel.mean_auc})
        task = ranked[goal]
        for job, result in entries:
            if result.lr != sel.lr:
                continue
            transfer_rows.append({
                'spec': spec,
                'baseline': job.baseline.value if job.baseline else '',
                'activation': job.activation,
                'representation_id': result.run_id,
                'task': sel.task,
                'goal_row': goal[0],
                'goal_col': goal[1],
                'rank': task.rank,
                'similarity': task.similarity,
                'seed': job.seed,
                'lr': result.lr,
                'auc': result.auc,
                'config_hash': job.config_hash,
            })
    store.replace(TableKind.STAGE2_SELECTION, selection_rows)
    return store.replace(TableKind.TRANSFER_AUC, transfer_rows)


def normalize_properties(store: ResultStore, representation_ids: Sequence[str]) -> int:
    """Pass 2 over every snapshot of the given representations"""
    wanted = set(representation_ids)
    rows = [row for row in store.read(TableKind.PROPERTIES_RAW) if row['representation_id'] in wanted]
    if not rows:
        logger.warning("No raw property rows for the selected representations; nothing to normalize")
        return store.replace(TableKind.PROPERTIES_NORMALIZED, [])
    reports = normalize_reports(report_from_rows(rows))
    return store.replace(TableKind.PROPERTIES_NORMALIZED,
                         [row for report in reports for row in report.to_rows('normalized')])
