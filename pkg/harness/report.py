"""Summary tables and plot files built from a result store.

Every table is a pandas DataFrame written as CSV next to the SVG plots (matplotlib, Agg
backend). Numbers are rounded nowhere; CSV floats keep full precision.
"""
import logging
import os
from typing import Dict, List, Optional

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from result_store import ResultStore, TableKind  # noqa: E402
from utils.errors import UsageError  # noqa: E402

logger = logging.getLogger(__name__)

PROPERTY_NAMES = ('complexity_reduction', 'dynamics_awareness', 'diversity', 'orthogonality', 'sparsity',
                  'non_interference')
Z_95 = 1.959963984540054
TOP_K = 3

plt.rcParams['svg.hashsalt'] = 'replab'


def load_table(store: ResultStore, kind: TableKind) -> pd.DataFrame:
    path = store.path(kind)
    if not os.path.exists(path):
        return pd.DataFrame(columns=list(kind.columns))
    return pd.read_csv(path, keep_default_na=False, na_values=[''])


def _require(frame: pd.DataFrame, kind: TableKind) -> None:
    if frame.empty:
        raise UsageError(f"Result store has no {kind.name} rows; run a campaign first")


def _ci(values: pd.Series) -> float:
    n = len(values)
    return float(Z_95 * values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def transfer_summary(transfer: pd.DataFrame) -> pd.DataFrame:
    """Per agent spec: mean AUC over (representation x task) samples with a 95% CI"""
    grouped = transfer.groupby('spec', sort=True)['auc']
    out = grouped.agg(['mean', 'std', 'count']).reset_index()
    out['ci95'] = grouped.apply(_ci).values
    return out.rename(columns={'mean': 'mean_auc', 'std': 'std_auc', 'count': 'samples'})


def transfer_by_task(transfer: pd.DataFrame) -> pd.DataFrame:
    """Mean transfer AUC per (spec, task) next to the task's similarity rank"""
    out = (transfer.groupby(['spec', 'task', 'goal_row', 'goal_col', 'rank', 'similarity'], sort=False)['auc']
           .agg(['mean', 'std', 'count']).reset_index())
    out = out.rename(columns={'mean': 'mean_auc', 'std': 'std_auc', 'count': 'samples'})
    return out.sort_values(['spec', 'rank'], kind='mergesort').reset_index(drop=True)


def relative_transfer(transfer: pd.DataFrame) -> pd.DataFrame:
    """Transfer AUC over the matching Scratch baseline's mean AUC on the same task

    Values above 1 are positive transfer. Specs without a matching Scratch run are skipped.
    """
    scratch = transfer[transfer['baseline'] == 'scratch']
    reference = scratch.groupby(['activation', 'task'])['auc'].mean().rename('scratch_auc').reset_index()
    frozen = transfer[transfer['baseline'].isna() | (transfer['baseline'] == '')]
    merged = frozen.merge(reference, on=['activation', 'task'], how='inner')
    merged = merged[merged['scratch_auc'] > 0]
    merged['relative_auc'] = merged['auc'] / merged['scratch_auc']
    if merged.empty:
        logger.warning("No Scratch baseline matches the frozen representations; relative transfer table is empty")
    return merged[['spec', 'activation', 'task', 'rank', 'seed', 'auc', 'scratch_auc', 'relative_auc']]


def relative_summary(relative: pd.DataFrame) -> pd.DataFrame:
    grouped = relative.groupby('spec', sort=True)['relative_auc']
    out = grouped.agg(['mean', 'count']).reset_index().rename(columns={'mean': 'mean_relative', 'count': 'samples'})
    half = grouped.apply(_ci).values
    out['ci_low'] = out['mean_relative'] - half
    out['ci_high'] = out['mean_relative'] + half
    return out


def box_stats(transfer: pd.DataFrame) -> pd.DataFrame:
    """Median, quartiles, 1.5 IQR whiskers, mean, std and 95% CI per agent spec"""
    rows = []
    for spec, values in transfer.groupby('spec', sort=True)['auc']:
        v = values.to_numpy(dtype=np.float64)
        q1, median, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
        mean, std = float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0
        half = Z_95 * std / np.sqrt(len(v)) if len(v) > 1 else 0.0
        rows.append({
            'spec': spec, 'median': median, 'q1': q1, 'q3': q3,
            'whisker_low': float(inside.min()), 'whisker_high': float(inside.max()),
            'mean': mean, 'std': std, 'ci_low': mean - half, 'ci_high': mean + half, 'samples': len(v),
        })
    return pd.DataFrame(rows)


def frozen_properties(raw: pd.DataFrame, normalized: pd.DataFrame) -> pd.DataFrame:
    """Wide table of the six headline properties per representation at freeze time"""
    frames = []
    if not raw.empty:
        frames.append(raw[raw['metric'].isin(PROPERTY_NAMES)])
    if not normalized.empty:
        frames.append(normalized[normalized['metric'].isin(PROPERTY_NAMES)])
    if not frames:
        return pd.DataFrame(columns=['representation_id', *PROPERTY_NAMES])
    long = pd.concat(frames, ignore_index=True)
    long = long[long['frozen'] == 1]
    wide = long.pivot_table(index='representation_id', columns='metric', values='value', aggfunc='last')
    return wide.reindex(columns=list(PROPERTY_NAMES)).reset_index()


def property_scatter(transfer: pd.DataFrame, runs: pd.DataFrame, properties: pd.DataFrame) -> pd.DataFrame:
    """One row per representation per property: property value against mean transfer AUC"""
    frozen = transfer[transfer['representation_id'].notna() & (transfer['representation_id'] != '')]
    performance = frozen.groupby('representation_id')['auc'].mean().rename('transfer_auc').reset_index()
    specs = runs[['run_id', 'spec']].rename(columns={'run_id': 'representation_id'})
    merged = performance.merge(specs, on='representation_id', how='left').merge(
        properties, on='representation_id', how='left')
    merged = merged.sort_values(['transfer_auc', 'representation_id'], ascending=[False, True], kind='mergesort')
    top = set(merged['representation_id'].head(TOP_K))
    long = merged.melt(id_vars=['representation_id', 'spec', 'transfer_auc'], value_vars=list(PROPERTY_NAMES),
                       var_name='property', value_name='value')
    long['top3'] = long['representation_id'].isin(top).astype(int)
    return long.sort_values(['property', 'representation_id'], kind='mergesort').reset_index(drop=True)


def property_over_time(raw: pd.DataFrame, normalized: pd.DataFrame, runs: pd.DataFrame) -> pd.DataFrame:
    frames = [f[f['metric'].isin(PROPERTY_NAMES)] for f in (raw, normalized) if not f.empty]
    if not frames:
        return pd.DataFrame(columns=['representation_id', 'spec', 'time_step', 'frozen', 'property', 'value'])
    long = pd.concat(frames, ignore_index=True).rename(columns={'metric': 'property'})
    specs = runs[['run_id', 'spec']].rename(columns={'run_id': 'representation_id'})
    long = long.merge(specs, on='representation_id', how='inner')
    cols = ['representation_id', 'spec', 'time_step', 'frozen', 'property', 'value']
    return long[cols].sort_values(['property', 'representation_id', 'time_step', 'frozen'],
                                  kind='mergesort').reset_index(drop=True)


def property_correlations(properties: pd.DataFrame) -> pd.DataFrame:
    """Pearson correlation between every pair of properties over representations"""
    values = properties.set_index('representation_id')[list(PROPERTY_NAMES)].astype(float)
    corr = values.corr(method='pearson')
    rows = []
    for i, a in enumerate(PROPERTY_NAMES):
        for b in PROPERTY_NAMES[i + 1:]:
            rows.append({'property_a': a, 'property_b': b, 'pearson': corr.loc[a, b],
                         'representations': int(values[[a, b]].dropna().shape[0])})
    return pd.DataFrame(rows)


def _save(fig, path: str) -> str:
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    return path


def plot_learning_curves(traces: pd.DataFrame, runs: pd.DataFrame, selected: List[str], path: str) -> str:
    fig, ax = plt.subplots(figsize=(7, 4))
    stage1 = traces[traces['stage'] == 'stage1']
    for _, run in runs[runs['run_id'].isin(selected)].sort_values('run_id').iterrows():
        curve = stage1[(stage1['config_hash'] == run['config_hash']) & (stage1['seed'] == run['seed'])]
        line, = ax.plot(curve['step'], curve['mean_return'], label=f"{run['spec']} s{run['seed']}")
        if pd.notna(run['freeze_step']) and run['freeze_step'] != '':
            ax.axvline(float(run['freeze_step']), color=line.get_color(), linestyle=':', linewidth=1)
    ax.set_xlabel('step')
    ax.set_ylabel('mean return (last 100 episodes)')
    ax.set_title('Representation training (dotted: freeze point)')
    if selected:
        ax.legend(fontsize=6)
    return _save(fig, path)


def plot_scatter(scatter: pd.DataFrame, path: str) -> str:
    fig, axes = plt.subplots(2, 3, figsize=(10, 6))
    for ax, name in zip(axes.ravel(), PROPERTY_NAMES):
        part = scatter[scatter['property'] == name]
        ax.scatter(part['value'], part['transfer_auc'], s=12)
        best = part[part['top3'] == 1]
        ax.scatter(best['value'], best['transfer_auc'], marker='*', s=60, color='green')
        ax.set_title(name, fontsize=8)
        ax.set_xlim(-0.05, 1.05)
    fig.tight_layout()
    return _save(fig, path)


def plot_over_time(series: pd.DataFrame, path: str) -> str:
    fig, axes = plt.subplots(2, 3, figsize=(10, 6))
    running = series[series['frozen'] == 0]
    for ax, name in zip(axes.ravel(), PROPERTY_NAMES):
        part = running[running['property'] == name]
        for spec, rows in part.groupby('spec', sort=True):
            mean = rows.groupby('time_step')['value'].mean()
            ax.plot(mean.index, mean.values, label=spec)
        ax.set_title(name, fontsize=8)
    axes.ravel()[0].legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def build_report(store: ResultStore, output_dir: Optional[str] = None) -> Dict[str, str]:
    """Write every table and plot; returns name -> path"""
    output_dir = output_dir or os.path.join(store.root, 'report')
    os.makedirs(output_dir, exist_ok=True)

    runs = load_table(store, TableKind.STAGE1_RUNS)
    transfer = load_table(store, TableKind.TRANSFER_AUC)
    _require(runs, TableKind.STAGE1_RUNS)
    _require(transfer, TableKind.TRANSFER_AUC)
    raw = load_table(store, TableKind.PROPERTIES_RAW)
    normalized = load_table(store, TableKind.PROPERTIES_NORMALIZED)
    traces = load_table(store, TableKind.TRAINING_TRACES)
    selection = load_table(store, TableKind.STAGE1_SELECTION)
    selected = [rid for ids in selection['run_ids'].astype(str) for rid in ids.split(';') if rid]

    properties = frozen_properties(raw[raw['representation_id'].isin(selected)],
                                   normalized[normalized['representation_id'].isin(selected)])
    relative = relative_transfer(transfer)
    scatter = property_scatter(transfer, runs, properties)
    tables = {
        'transfer_summary': transfer_summary(transfer),
        'transfer_by_task': transfer_by_task(transfer),
        'relative_transfer': relative,
        'relative_summary': relative_summary(relative),
        'transfer_box': box_stats(transfer),
        'property_scatter': scatter,
        'property_over_time': property_over_time(raw, normalized, runs[runs['run_id'].isin(selected)]),
        'property_correlations': property_correlations(properties),
    }

    written = {}
    for name, frame in tables.items():
        path = os.path.join(output_dir, f'{name}.csv')
        frame.to_csv(path, index=False, lineterminator='\n', float_format=None)
        written[name] = path
    written['learning_curves_svg'] = plot_learning_curves(
        traces, runs, selected, os.path.join(output_dir, 'learning_curves.svg'))
    written['property_scatter_svg'] = plot_scatter(scatter, os.path.join(output_dir, 'property_scatter.svg'))
    written['property_over_time_svg'] = plot_over_time(
        tables['property_over_time'], os.path.join(output_dir, 'property_over_time.svg'))
    logger.info(f"Report written to {output_dir}: {len(written)} files")
    return written
