import pytest


def test_root_endpoint(client):
    """Test root endpoint returns health status"""
    response = client.get("/")
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "healthy"
    assert data["service"] == "pf-regen API"
    assert data["environment"] == "test"


def test_health_check(client):
    """Test detailed health check endpoint"""
    response = client.get("/api/v1/health")
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "healthy"
    assert data["schema_version"] == 1
    assert data["settings"]["log_level"] == "WARNING"
    assert data["settings"]["tol"] == pytest.approx(1e-12)
    assert "timestamp" in data


def test_health_reflects_environment(client, monkeypatch):
    """Settings are re-read once the cache is cleared"""
    from config import get_settings

    monkeypatch.setenv("PF_N_CYCLES", "5000")
    get_settings.cache_clear()
    data = client.get("/api/v1/health").json()
    assert data["settings"]["n_cycles"] == 5000
