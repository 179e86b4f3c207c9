"""replab command line: train, transfer, measure, rank-tasks, campaign, report, serve."""
import logging
import os
import re
import sys
from functools import wraps
from typing import Optional, Sequence, Tuple

import click
import numpy as np
from dotenv import load_dotenv

from agents.dqn import train_stage1, train_stage2
from analysis.properties import (
    collect_probe, interference_summary, measure_representation, run_identity_checks,
)
from analysis.task_similarity import rank_map, rank_tasks
from envs.gridworld import load_map
from harness.campaign import run_campaign
from harness.checkpoint import (
    check_architecture, checkpoint_meta, load_checkpoint, restore_representation, save_representation,
    state_digest,
)
from harness.config import config_hash, env_config, load_config, load_config_data, worker_count
from harness.report import build_report
from harness.seeding import RandomStreams
from harness.sweeps import auc
from models.configs import AgentConfig, Baseline, ExperimentConfig
from models.records import METRIC_NAMES
from result_store import ResultStore, TableKind, read_rows, write_rows
from utils.errors import ReplabError, UsageError

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ('step', 'mean_return', 'episodes')
INTERFERENCE_COLUMNS = ('sync_index', 'step', 'value')
MEASURE_COLUMNS = ('representation_id', 'checkpoint', 'probe_seed', 'time_step', *METRIC_NAMES)


def exit_on_error(func):
    """Turn toolkit errors into a one-line message and the class's exit code"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ReplabError as e:
            logger.debug(f"{func.__name__} failed", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)
    return wrapper


def slug(name: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]+', '_', name).strip('_')


def parse_goal(value: Optional[str]) -> Optional[Tuple[int, int]]:
    if value is None:
        return None
    try:
        row, col = (int(part) for part in value.split(','))
    except ValueError:
        raise UsageError(f"--goal must look like ROW,COL, got {value!r}")
    return row, col


def pick_agent(cfg: ExperimentConfig, spec_name: Optional[str], lr: Optional[float]) -> Tuple[str, AgentConfig]:
    specs = {spec.name: spec for spec in cfg.agent_specs}
    if spec_name is None:
        spec = cfg.agent_specs[0]
    elif spec_name in specs:
        spec = specs[spec_name]
    else:
        raise UsageError(f"Unknown agent spec {spec_name!r}; config defines {sorted(specs)}")
    return spec.name, spec.build(cfg.agent, learning_rate=lr)


def config_options(func):
    func = click.option('--set', 'overrides', multiple=True, metavar='KEY=VALUE',
                        help='Override a config key, e.g. --set agent.train_steps=50000')(func)
    func = click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                        help='Experiment config (JSON)')(func)
    return func


def run_options(func):
    func = click.option('--lr', type=float, default=None, help='Stepsize (default: agent.learning_rate)')(func)
    func = click.option('--seed', type=int, default=0, show_default=True, help='Seed index')(func)
    func = click.option('--spec', 'spec_name', default=None, help='Agent spec name (default: the first one)')(func)
    return func


@click.group()
def cli():
    """Train, transfer and measure RL representations in the pixel maze."""
    load_dotenv()
    logging.basicConfig(
        level=os.getenv('REPLAB_LOG_LEVEL', 'INFO').upper(),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )


@cli.command()
@config_options
@run_options
@click.option('--output-dir', default=None, help='Where checkpoint and CSVs go (default: <output_dir>/runs)')
@click.option('--probe/--no-probe', default=True, show_default=True,
              help='Track interference and property snapshots on the probe set')
@exit_on_error
def train(config_path, overrides, spec_name, seed, lr, output_dir, probe):
    """Stage 1: learn a representation and save it at the early-saving point."""
    cfg = load_config(config_path, overrides)
    name, agent = pick_agent(cfg, spec_name, lr)
    maze = load_map(cfg.map_path, cfg.palette)
    probe_set = None
    if probe:
        probe_set = collect_probe(maze, env_config(cfg), RandomStreams(cfg.probe_seed).get('probe'),
                                  n=cfg.probe_size, seed=cfg.probe_seed)
    run_id = f'{slug(name)}-s{seed}'
    streams = RandomStreams(cfg.master_seed).child('stage1', seed)
    outcome = train_stage1(maze, env_config(cfg), agent, streams, probe=probe_set, label=run_id,
                           percentile=cfg.interference_percentile)

    output_dir = output_dir or os.path.join(cfg.output_dir, 'runs')
    base = os.path.join(output_dir, run_id)
    meta = checkpoint_meta(agent, config_hash=config_hash(load_config_data(config_path, overrides)), spec=name,
                           seed=seed, lr=agent.learning_rate, converged=outcome.converged,
                           freeze_step=outcome.trace.freeze_step)
    save_representation(f'{base}.ckpt', outcome.trunk_state, outcome.value_state, meta)
    write_rows(f'{base}-trace.csv', TRACE_COLUMNS, outcome.trace.to_rows())
    write_rows(f'{base}-interference.csv', INTERFERENCE_COLUMNS,
               [{'sync_index': r.sync_index, 'step': r.step, 'value': r.value} for r in outcome.trace.interference])
    if outcome.reports:
        write_rows(f'{base}-properties.csv', TableKind.PROPERTIES_RAW.columns,
                   [row for report in outcome.reports for row in report.to_rows('raw')])

    click.echo(f'checkpoint: {base}.ckpt')
    click.echo(f'auc: {auc(outcome.trace)!r}')
    if outcome.converged:
        click.echo(f'frozen at step {outcome.trace.freeze_step}')
    else:
        click.echo('UNCONVERGED: early-saving criterion never met; saved the final-step representation')


@cli.command()
@config_options
@run_options
@click.option('--checkpoint', default=None, type=click.Path(dir_okay=False), help='Frozen representation')
@click.option('--baseline', type=click.Choice([b.value for b in Baseline]), default=None,
              help='Run a baseline instead of a frozen representation')
@click.option('--goal', default=None, help='Transfer goal as ROW,COL (default: the training goal)')
@click.option('--output-dir', default=None, help='Where the trace CSV goes (default: <output_dir>/runs)')
@exit_on_error
def transfer(config_path, overrides, spec_name, seed, lr, checkpoint, baseline, goal, output_dir):
    """Stage 2: fresh value head on a frozen representation (or a baseline) for one task."""
    cfg = load_config(config_path, overrides)
    name, agent = pick_agent(cfg, spec_name, lr)
    goal = parse_goal(goal) or cfg.training_goal
    maze = load_map(cfg.map_path, cfg.palette)
    env_cfg = env_config(cfg, goal)
    env_cfg.validate_against(maze)
    if baseline is None and checkpoint is None:
        raise UsageError("transfer needs --checkpoint or --baseline")

    trunk_state, digest = None, None
    if baseline is None:
        trunk_state, manifest = load_checkpoint(checkpoint)
        check_architecture(manifest, agent.activation.value, agent.fta.to_dict())
        digest = state_digest(trunk_state)
    streams = RandomStreams(cfg.master_seed).child('stage2', seed, f'{goal[0]},{goal[1]}')
    outcome = train_stage2(maze, env_cfg, agent, streams, trunk_state=trunk_state,
                           baseline=Baseline(baseline) if baseline else None, label=name)

    label = baseline or slug(name)
    output_dir = output_dir or os.path.join(cfg.output_dir, 'runs')
    path = os.path.join(output_dir, f'transfer-{label}-g{goal[0]}_{goal[1]}-s{seed}-trace.csv')
    write_rows(path, TRACE_COLUMNS, outcome.trace.to_rows())
    click.echo(f'trace: {path}')
    click.echo(f'auc: {auc(outcome.trace)!r}')
    if digest is not None:
        after = state_digest(outcome.trunk_state)
        click.echo(f'trunk sha256 before {digest} after {after}')
        if after != digest:
            raise UsageError("Frozen representation changed during transfer")


@cli.command()
@config_options
@click.option('--checkpoint', required=True, type=click.Path(dir_okay=False), help='Frozen representation')
@click.option('--probe-seed', type=int, default=None, help='Probe set seed (default: probe_seed from the config)')
@click.option('--trace', 'trace_path', default=None, type=click.Path(dir_okay=False),
              help='Interference CSV written by train; without it the interference field stays empty')
@click.option('--output', default=None, help='Properties CSV (default: next to the checkpoint)')
@click.option('--appendix-checks', '--identity-checks', 'identity_checks', is_flag=True,
              help='Also run the feature/sample identity checks and report pass/fail')
@exit_on_error
def measure(config_path, overrides, checkpoint, probe_seed, trace_path, output, identity_checks):
    """Raw values of the six representation properties on the probe set."""
    cfg = load_config(config_path, overrides)
    probe_seed = cfg.probe_seed if probe_seed is None else probe_seed
    maze = load_map(cfg.map_path, cfg.palette)
    trunk, value, manifest = restore_representation(checkpoint, np.random.default_rng(0))
    probe = collect_probe(maze, env_config(cfg), RandomStreams(probe_seed).get('probe'), n=cfg.probe_size,
                          seed=probe_seed)

    interference = None
    if trace_path is not None:
        if not os.path.exists(trace_path):
            raise UsageError(f"Interference trace not found: {trace_path}")
        interference = [float(row['value']) for row in read_rows(trace_path)]
    representation_id = os.path.splitext(os.path.basename(checkpoint))[0]
    time_step = manifest.get('freeze_step') or 0
    report = measure_representation(probe, trunk, value, representation_id, time_step,
                                    interference_values=interference, percentile=cfg.interference_percentile,
                                    frozen=True)
    row = {'representation_id': representation_id, 'checkpoint': checkpoint, 'probe_seed': probe_seed,
           'time_step': time_step, **report.raw}
    output = output or f'{os.path.splitext(checkpoint)[0]}-measure.csv'
    write_rows(output, MEASURE_COLUMNS, [row])
    click.echo(f'properties: {output}')
    for name in METRIC_NAMES:
        click.echo(f'  {name}: {"" if report.raw[name] is None else repr(report.raw[name])}')
    if interference and interference_summary(interference, cfg.interference_percentile)[1]:
        click.echo('  interference is low-confidence (fewer than 10 sync events)')

    if identity_checks:
        results = run_identity_checks(probe.phi, np.random.default_rng(probe_seed))
        for check, passed in results.items():
            click.echo(f'identity check {check}: {"pass" if passed else "FAIL"}')


@cli.command('rank-tasks')
@config_options
@click.option('--output', default=None, help='Rank CSV (default: <output_dir>/task_ranks.csv)')
@click.option('--map-output', default=None, help='ASCII rank map (default: next to the CSV)')
@exit_on_error
def rank_tasks_command(config_path, overrides, output, map_output):
    """Rank every goal cell by successor-representation similarity to the training task."""
    cfg = load_config(config_path, overrides)
    maze = load_map(cfg.map_path, cfg.palette)
    env_config(cfg).validate_against(maze)
    ranking = rank_tasks(maze, cfg.training_goal, cfg.gamma)
    output = output or os.path.join(cfg.output_dir, 'task_ranks.csv')
    map_output = map_output or f'{os.path.splitext(output)[0]}_map.txt'
    write_rows(output, TableKind.TASK_RANKS.columns, [task.to_row() for task in ranking])
    text = rank_map(maze, ranking)
    with open(map_output, 'w', encoding='utf-8') as f:
        f.write(text)
    click.echo(text, nl=False)
    click.echo(f'ranks: {output} ({len(ranking)} tasks)')


@cli.command()
@config_options
@click.option('--store', 'store_dir', default=None, help='Result store directory (default: output_dir)')
@click.option('--workers', type=int, default=None, help='Worker processes (default: REPLAB_WORKERS or 1)')
@exit_on_error
def campaign(config_path, overrides, store_dir, workers):
    """Stage-1 sweeps, stage-2 sweeps over tasks and baselines, property normalization."""
    cfg = load_config(config_path, overrides)
    workers = workers if workers is not None else worker_count()
    if workers < 1:
        raise UsageError(f"--workers must be >= 1, got {workers}")
    store = ResultStore(store_dir or cfg.output_dir)
    summary = run_campaign(cfg, store, workers=workers)
    click.echo(f'store: {store.root}')
    click.echo(f'trained {summary.stage1_trained} stage-1 and {summary.stage2_trained} stage-2 runs; '
               f'{summary.transfer_rows} transfer rows')
    unconverged = [name for name, sel in summary.stage1_selections.items() if sel.unconverged]
    if unconverged:
        click.echo(f'UNCONVERGED: {", ".join(unconverged)}')


@cli.command()
@click.option('--store', 'store_dir', required=True, type=click.Path(file_okay=False), help='Result store')
@click.option('--output-dir', default=None, help='Report directory (default: <store>/report)')
@exit_on_error
def report(store_dir, output_dir):
    """Summary tables and plot files from a result store."""
    if not os.path.isdir(store_dir):
        raise UsageError(f"Result store not found: {store_dir}")
    written = build_report(ResultStore(store_dir), output_dir)
    for name, path in written.items():
        click.echo(f'{name}: {path}')


@cli.command()
@click.option('--store', 'store_dir', default=None, help='Result store (default: REPLAB_STORE_DIR or results)')
@click.option('--host', default='127.0.0.1', show_default=True)
@click.option('--port', default=5000, show_default=True, type=int)
def serve(store_dir, host, port):
    """Read-only HTTP view of a result store."""
    from app import create_app

    create_app(store_dir).run(host=host, port=port)


def main(argv: Optional[Sequence[str]] = None):
    cli.main(args=argv, prog_name='replab')


if __name__ == '__main__':
    main()
