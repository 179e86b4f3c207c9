import pytest

from app import create_app
from result_store import ResultStore, TableKind


@pytest.fixture
def store(tmp_path):
    return ResultStore(str(tmp_path / 'results'))


@pytest.fixture
def client(store):
    app = create_app(store.root)
    app.config['TESTING'] = True
    return app.test_client()


def _transfer(spec, seed, task, value):
    return {'spec': spec, 'baseline': '', 'activation': 'relu32', 'representation_id': f'{spec}-{seed}',
            'task': task, 'goal_row': 0, 'goal_col': 0, 'rank': 5, 'similarity': 0.2, 'seed': seed, 'lr': 0.001,
            'auc': value, 'config_hash': f'h-{spec}-{seed}-{task}'}


def test_status_and_health(client):
    status = client.get('/api/status').get_json()
    assert status['status'] == 'ok'
    assert status['blueprints_loaded'] == ['health_bp', 'results_bp']

    response = client.get('/api/health')
    assert response.status_code in (200, 503)
    body = response.get_json()
    assert set(body['checks']) == {'result_store', 'disk_space'}

    store_check = client.get('/api/health/store').get_json()
    assert store_check['healthy']
    assert store_check['message'] == 'Result store is empty'


def test_unknown_table_and_route(client):
    response = client.get('/api/results/rewards')
    assert response.status_code == 404
    assert 'Unknown result table' in response.get_json()['error']
    assert client.get('/api/nothing-here').status_code == 404


def test_summary_of_empty_store(client):
    body = client.get('/api/results/summary').get_json()
    assert body['specs'] == []


def test_table_rows_and_spec_filter(client, store):
    store.replace(TableKind.TRANSFER_AUC, [
        _transfer('relu', 0, '0,0', 2.0), _transfer('relu', 1, '0,0', 4.0), _transfer('fta', 0, '0,0', 5.0),
    ])
    body = client.get('/api/results/transfer_auc?spec=relu').get_json()
    assert body['table'] == 'transfer_auc'
    assert body['count'] == 2
    assert {row['auc'] for row in body['rows']} == {'2.0', '4.0'}

    summary = {row['spec']: row for row in client.get('/api/results/summary').get_json()['specs']}
    assert summary['relu']['mean_auc'] == pytest.approx(3.0)
    assert summary['fta']['std_auc'] is None

    response = client.get('/api/results/task_ranks?spec=relu')
    assert response.status_code == 400


def test_task_ranks(client, store):
    store.append(TableKind.TASK_RANKS, [{'rank': 1, 'goal_row': 9, 'goal_col': 9, 'similarity': 3.5}])
    body = client.get('/api/tasks/ranks').get_json()
    assert body['count'] == 1
    assert body['tasks'][0]['goal_row'] == '9'
