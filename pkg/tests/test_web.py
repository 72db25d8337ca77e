"""Tests for the Flask JSON service"""

import pytest

from config import TestingConfig
from web import app as web_app


@pytest.fixture
def client():
    web_app.app.config['SETTINGS'] = TestingConfig
    web_app.app.config['TESTING'] = True
    web_app.request_timestamps.clear()
    with web_app.app.test_client() as client:
        yield client


class TestApi:
    """Test the JSON endpoints"""

    def test_health(self, client):
        """Health check reports the app name"""
        response = client.get('/api/health')
        assert response.status_code == 200
        assert response.get_json()['status'] == 'ok'
        assert response.get_json()['app'] == 'TubeMAV'

    def test_tasks(self, client):
        """All four flight tasks are listed"""
        tasks = client.get('/api/tasks').get_json()['tasks']
        assert [t['name'] for t in tasks] == ['hover', 't1', 't2', 't3']

    def test_unknown_task(self, client):
        """Unknown tasks are a bad request"""
        response = client.post('/api/simulate', json={'task': 't9'})
        assert response.status_code == 400
        assert 'detail' in response.get_json()

    def test_unknown_override(self, client):
        """Unknown config overrides are a bad request"""
        response = client.post('/api/simulate', json={'task': 'hover', 'overrides': {'horizon': 3}})
        assert response.status_code == 400

    @pytest.mark.parametrize("overrides", [
        {'PARAMS_FILE': '/etc/passwd'},
        {'output_folder': '/tmp'},
        {'epochs': 100000},
    ])
    def test_server_side_settings_rejected(self, client, overrides):
        """Paths and training settings cannot be overridden over HTTP"""
        response = client.post('/api/tube', json={'overrides': overrides})
        assert response.status_code == 400
        assert 'not allowed' in response.get_json()['detail']

    @pytest.mark.parametrize("overrides", [
        {'tube_rollouts': 100000},
        {'tube_horizon': 10 ** 7},
        {'N': 0},
    ])
    def test_budgets_capped(self, client, overrides):
        """Monte-Carlo and horizon budgets above the service limits are a bad request"""
        response = client.post('/api/tube', json={'overrides': overrides})
        assert response.status_code == 400
        key = tuple((k.upper(), str(v)) for k, v in overrides.items())
        assert key not in web_app.setup_cache

    def test_tube(self, client):
        """The tube endpoint reports a stable closed loop and every state bound"""
        response = client.post('/api/tube', json={'overrides': {}})
        assert response.status_code == 200
        body = response.get_json()
        assert len(body['tube']) == 10
        assert body['closed_loop_spectral_radius'] < 1.0

    def test_policy_needs_weights(self, client):
        """The policy controller without a weights name is a bad request"""
        response = client.post('/api/simulate', json={'task': 'hover', 'controller': 'policy'})
        assert response.status_code == 400

    def test_not_found(self, client):
        """Unknown routes answer with JSON"""
        response = client.get('/api/missing')
        assert response.status_code == 404
        assert 'error' in response.get_json()

    def test_security_headers(self, client):
        """Every response carries the security headers"""
        response = client.get('/api/health')
        assert response.headers['X-Content-Type-Options'] == 'nosniff'
        assert response.headers['X-Frame-Options'] == 'SAMEORIGIN'

    def test_rate_limit(self, client):
        """The 21st simulation request within the hour is refused"""
        for _ in range(20):
            client.post('/api/simulate', json={'task': 't9'})
        assert client.post('/api/simulate', json={'task': 't9'}).status_code == 429
