# CSV result store with one file per table kind, keyed append-only rows and job staging
import csv
import json
import logging
import os
import threading
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from utils.errors import DuplicateKeyError, UsageError

logger = logging.getLogger(__name__)

Row = Dict[str, Any]
Key = Tuple[str, ...]


class TableKind(Enum):
    """Result tables: (file name, columns, key columns, derived)

    Derived tables are recomputed from the raw ones and replaced wholesale; every other
    table only ever grows.
    """
    TASK_RANKS = (
        'task_ranks.csv',
        ('rank', 'goal_row', 'goal_col', 'similarity'),
        ('goal_row', 'goal_col'),
        False,
    )
    STAGE1_RUNS = (
        'stage1_runs.csv',
        ('config_hash', 'run_id', 'spec', 'activation', 'lr', 'seed', 'auc', 'converged', 'freeze_step',
         'steps', 'checkpoint'),
        ('config_hash', 'seed'),
        False,
    )
    STAGE2_RUNS = (
        'stage2_runs.csv',
        ('config_hash', 'spec', 'baseline', 'activation', 'representation_id', 'lr', 'seed', 'task', 'auc'),
        ('config_hash', 'seed', 'task'),
        False,
    )
    TRAINING_TRACES = (
        'training_traces.csv',
        ('config_hash', 'stage', 'spec', 'lr', 'seed', 'task', 'step', 'mean_return', 'episodes'),
        ('config_hash', 'seed', 'task', 'step'),
        False,
    )
    PROPERTIES_RAW = (
        'properties_raw.csv',
        ('representation_id', 'time_step', 'frozen', 'metric', 'value'),
        ('representation_id', 'time_step', 'frozen', 'metric'),
        False,
    )
    INTERFERENCE = (
        'interference.csv',
        ('representation_id', 'sync_index', 'step', 'value'),
        ('representation_id', 'sync_index'),
        False,
    )
    STAGE1_SELECTION = (
        'stage1_selection.csv',
        ('spec', 'activation', 'lr', 'mean_auc', 'runs', 'converged_runs', 'run_ids'),
        ('spec',),
        True,
    )
    STAGE2_SELECTION = (
        'stage2_selection.csv',
        ('spec', 'task', 'lr', 'mean_auc'),
        ('spec', 'task'),
        True,
    )
    TRANSFER_AUC = (
        'transfer_auc.csv',
        ('spec', 'baseline', 'activation', 'representation_id', 'task', 'goal_row', 'goal_col', 'rank',
         'similarity', 'seed', 'lr', 'auc', 'config_hash'),
        ('spec', 'seed', 'task'),
        True,
    )
    PROPERTIES_NORMALIZED = (
        'properties_normalized.csv',
        ('representation_id', 'time_step', 'frozen', 'metric', 'value'),
        ('representation_id', 'time_step', 'frozen', 'metric'),
        True,
    )

    @property
    def file_name(self) -> str:
        return self.value[0]

    @property
    def columns(self) -> Tuple[str, ...]:
        return self.value[1]

    @property
    def key_columns(self) -> Tuple[str, ...]:
        return self.value[2]

    @property
    def derived(self) -> bool:
        return self.value[3]

    @classmethod
    def lookup(cls, name: str) -> 'TableKind':
        for kind in cls:
            if name.lower() in (kind.name.lower(), kind.file_name[:-4]):
                return kind
        raise UsageError(f"Unknown result table {name!r}; expected one of {[k.name.lower() for k in cls]}")


def format_cell(value: Any) -> str:
    """Fixed text form of a CSV cell; floats use repr so values survive a round trip"""
    if value is None:
        return ''
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ';'.join(format_cell(v) for v in value)
    return str(value)


def write_rows(path: str, columns: Sequence[str], rows: Iterable[Row], append: bool = False) -> int:
    """Write rows in a fixed column order; the header is written when the file is new"""
    new_file = not append or not os.path.exists(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    count = 0
    with open(path, 'a' if append else 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        if new_file:
            writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row.get(column)) for column in columns])
            count += 1
    return count


def read_rows(path: str) -> List[Dict[str, str]]:
    if not os.path.exists(path):
        return []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


class ResultStore:
    """Single-writer store rooted at one directory

    Workers never touch the CSV files: they write ``staging/<job_id>.json`` and the
    coordinator folds those in with ``merge_staged``.
    """

    def __init__(self, root: str):
        self.root = root
        self.lock = threading.RLock()
        self._keys: Dict[TableKind, set] = {}
        os.makedirs(self.staging_dir, exist_ok=True)
        os.makedirs(self.checkpoint_dir, exist_ok=True)

    def __repr__(self):
        return f'<ResultStore {self.root}>'

    @property
    def staging_dir(self) -> str:
        return os.path.join(self.root, 'staging')

    @property
    def checkpoint_dir(self) -> str:
        return os.path.join(self.root, 'checkpoints')

    def path(self, kind: TableKind) -> str:
        return os.path.join(self.root, kind.file_name)

    def checkpoint_path(self, run_id: str) -> str:
        return os.path.join(self.checkpoint_dir, f'{run_id}.ckpt')

    @staticmethod
    def key_of(kind: TableKind, row: Row) -> Key:
        return tuple(format_cell(row.get(column)) for column in kind.key_columns)

    def _known_keys(self, kind: TableKind) -> set:
        if kind not in self._keys:
            self._keys[kind] = {self.key_of(kind, row) for row in read_rows(self.path(kind))}
        return self._keys[kind]

    def append(self, kind: TableKind, rows: Iterable[Row], skip_existing: bool = False) -> int:
        """Append rows; a key already present raises DuplicateKeyError unless ``skip_existing``"""
        with self.lock:
            known = self._known_keys(kind)
            fresh, fresh_keys = [], set()
            for row in rows:
                key = self.key_of(kind, row)
                if key in known or key in fresh_keys:
                    if skip_existing:
                        logger.debug(f"Skipping existing {kind.name} row {key}")
                        continue
                    raise DuplicateKeyError(f"{kind.name} already has a row keyed {dict(zip(kind.key_columns, key))}")
                fresh.append(row)
                fresh_keys.add(key)
            if fresh:
                write_rows(self.path(kind), kind.columns, fresh, append=True)
                known.update(fresh_keys)
                logger.debug(f"Appended {len(fresh)} rows to {kind.file_name}")
            return len(fresh)

    def has_key(self, kind: TableKind, key: Sequence[Any]) -> bool:
        with self.lock:
            return tuple(format_cell(v) for v in key) in self._known_keys(kind)

    def read(self, kind: TableKind) -> List[Dict[str, str]]:
        with self.lock:
            return read_rows(self.path(kind))

    def replace(self, kind: TableKind, rows: Iterable[Row]) -> int:
        """Rewrite a derived table"""
        if not kind.derived:
            raise UsageError(f"{kind.name} is append-only and cannot be replaced")
        with self.lock:
            rows = list(rows)
            keys = [self.key_of(kind, row) for row in rows]
            if len(set(keys)) != len(keys):
                raise DuplicateKeyError(f"Replacement rows for {kind.name} repeat a key")
            tmp = f'{self.path(kind)}.tmp'
            count = write_rows(tmp, kind.columns, rows)
            os.replace(tmp, self.path(kind))
            self._keys[kind] = set(keys)
            logger.info(f"Replaced {kind.file_name} with {count} rows")
            return count

    def stage(self, job_id: str, payload: Dict[str, List[Row]]) -> str:
        """Write a job's rows, keyed by table name, to its own staging file"""
        unknown = sorted(set(payload) - set(TableKind.__members__))
        if unknown:
            raise UsageError(f"Staged payload for {job_id} names unknown tables {unknown}")
        path = os.path.join(self.staging_dir, f'{job_id}.json')
        tmp = f'{path}.tmp'
        with open(tmp, 'w', encoding='utf-8') as f:
            json.dump(payload, f, sort_keys=True)
        os.replace(tmp, path)
        return path

    def merge_staged(self) -> int:
        """Fold staging files in sorted job-id order; rows that already exist are skipped"""
        with self.lock:
            names = sorted(n for n in os.listdir(self.staging_dir) if n.endswith('.json'))
            for name in names:
                path = os.path.join(self.staging_dir, name)
                with open(path, 'r', encoding='utf-8') as f:
                    payload = json.load(f)
                for kind in TableKind:
                    if kind.name in payload:
                        self.append(kind, payload[kind.name], skip_existing=True)
                os.remove(path)
            if names:
                logger.info(f"Merged {len(names)} staged jobs into {self.root}")
            return len(names)

    def get_stats(self) -> Dict[str, Any]:
        with self.lock:
            tables = {kind.name.lower(): len(read_rows(self.path(kind))) for kind in TableKind}
            checkpoints = [n for n in os.listdir(self.checkpoint_dir)
                           if n.endswith('.ckpt') and not n.endswith('.value.ckpt')]
            staged = [n for n in os.listdir(self.staging_dir) if n.endswith('.json')]
            return {
                'root': self.root,
                'tables': tables,
                'checkpoints': len(checkpoints),
                'staged_jobs': len(staged),
            }

    def is_empty(self, kind: Optional[TableKind] = None) -> bool:
        kinds = [kind] if kind else list(TableKind)
        return all(not self.read(k) for k in kinds)
