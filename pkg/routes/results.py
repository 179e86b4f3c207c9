from flask import Blueprint, current_app, jsonify, request
import logging

from harness.report import load_table, transfer_summary
from result_store import ResultStore, TableKind
from utils.errors import UsageError

results_bp = Blueprint('results', __name__)

logger = logging.getLogger(__name__)


def _store() -> ResultStore:
    return current_app.config['RESULT_STORE']


@results_bp.route('/results/summary', methods=['GET'])
def results_summary():
    """Per-spec transfer summary, the same numbers the report writes"""
    transfer = load_table(_store(), TableKind.TRANSFER_AUC)
    if transfer.empty:
        return jsonify({'specs': [], 'message': 'No transfer results yet'}), 200
    summary = transfer_summary(transfer)
    rows = summary.astype(object).where(summary.notna(), None).to_dict(orient='records')
    return jsonify({'specs': rows}), 200


@results_bp.route('/results/<table>', methods=['GET'])
def results_table(table):
    """Rows of one result table, optionally filtered by ?spec="""
    try:
        kind = TableKind.lookup(table)
    except UsageError as e:
        logger.debug(f"Unknown table requested: {table}")
        return jsonify({'error': str(e)}), 404

    rows = _store().read(kind)
    spec = request.args.get('spec')
    if spec is not None:
        if 'spec' not in kind.columns:
            return jsonify({'error': f"Table {kind.name.lower()} has no spec column"}), 400
        rows = [row for row in rows if row.get('spec') == spec]
    return jsonify({'table': kind.name.lower(), 'columns': list(kind.columns), 'count': len(rows), 'rows': rows}), 200


@results_bp.route('/tasks/ranks', methods=['GET'])
def task_ranks():
    rows = _store().read(TableKind.TASK_RANKS)
    return jsonify({'count': len(rows), 'tasks': rows}), 200
