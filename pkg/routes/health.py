from flask import Blueprint, current_app, jsonify
import os
import shutil
import time
from datetime import datetime, timezone
import logging

health_bp = Blueprint('health', __name__)

logger = logging.getLogger(__name__)

MIN_FREE_GB = 1.0


@health_bp.route('/health', methods=['GET'])
def health_check():
    """Health of the result store behind the service"""
    start_time = time.time()
    health_status = {
        'status': 'healthy',
        'timestamp': datetime.now(timezone.utc).isoformat(),
        'checks': {},
        'response_time_ms': 0
    }

    store_check = _check_store()
    health_status['checks']['result_store'] = store_check
    disk_check = _check_disk_space()
    health_status['checks']['disk_space'] = disk_check

    health_status['response_time_ms'] = round((time.time() - start_time) * 1000, 2)
    overall_healthy = store_check['healthy'] and disk_check['healthy']
    health_status['status'] = 'healthy' if overall_healthy else 'unhealthy'
    status_code = 200 if overall_healthy else 503

    logger.info(f"Health check completed: {health_status['status']} in {health_status['response_time_ms']}ms")
    return jsonify(health_status), status_code


@health_bp.route('/health/store', methods=['GET'])
def health_check_store():
    """Detailed result store check"""
    return jsonify(_check_store()), 200


def _check_store():
    """Tables present, row counts and checkpoint count"""
    check_result = {
        'healthy': False,
        'message': '',
        'details': {},
    }
    try:
        store = current_app.config['RESULT_STORE']
        stats = store.get_stats()
        check_result['details'] = stats
        check_result['healthy'] = os.path.isdir(store.root)
        total_rows = sum(stats['tables'].values())
        check_result['message'] = 'Result store is empty' if total_rows == 0 else f'{total_rows} rows stored'
    except Exception as e:
        logger.error(f"Result store health check failed: {str(e)}")
        check_result['message'] = f'Result store check failed: {str(e)}'
    return check_result


def _check_disk_space():
    """Check available disk space under the store"""
    check_result = {
        'healthy': True,
        'message': 'Disk space is healthy',
        'details': {},
    }
    try:
        total, used, free = shutil.disk_usage(current_app.config['RESULT_STORE'].root)
        free_gb = round(free / (1024 ** 3), 2)
        check_result['details'] = {
            'total_gb': round(total / (1024 ** 3), 2),
            'free_gb': free_gb,
            'used_percent': round(used / total * 100, 1) if total else 0.0,
        }
        if free_gb < MIN_FREE_GB:
            check_result['healthy'] = False
            check_result['message'] = f'Low disk space: {free_gb} GB free'
    except Exception as e:
        logger.error(f"Disk space check failed: {str(e)}")
        check_result['healthy'] = False
        check_result['message'] = f'Disk space check failed: {str(e)}'
    return check_result
