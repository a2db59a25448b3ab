import pytest

ASYM_TEXT = "2\n0 0 0.2\n0 1 0.4\n1 0 0.3\n1 1 0.1\n"


def test_solve_endpoint(client):
    """Test exact solve returns a run report"""
    response = client.post("/api/v1/solve", json={"matrix": ASYM_TEXT})
    assert response.status_code == 200
    data = response.json()
    assert data["schema_version"] == 1
    assert data["command"] == "solve"
    assert data["result"]["lambda_star"] == pytest.approx(0.5, abs=1e-10)
    assert data["result"]["u_star"] == pytest.approx([1.0, 0.75], abs=1e-10)


def test_solve_reducible_conflict(client, reducible_text):
    """Test a matrix that fails irreducibility returns 409 with the witness"""
    response = client.post("/api/v1/solve", json={"matrix": reducible_text})
    assert response.status_code == 409
    detail = response.json()["detail"]
    assert detail["kind"] == "reducible"
    assert detail["details"]["witness"] == [1, 0]


def test_solve_bad_matrix_text(client):
    response = client.post("/api/v1/solve", json={"matrix": "2\n0 0 -1\n"})
    assert response.status_code == 422
    assert response.json()["detail"]["kind"] == "parse"


def test_solve_state_out_of_range(client):
    response = client.post("/api/v1/solve", json={"matrix": ASYM_TEXT, "z": 5})
    assert response.status_code == 422
    assert response.json()["detail"]["kind"] == "domain"


def test_request_validation(client):
    """Test request model bounds are enforced before the solver runs"""
    response = client.post("/api/v1/mc", json={"matrix": ASYM_TEXT, "n_cycles": 0})
    assert response.status_code == 422
    response = client.post("/api/v1/solve", json={})
    assert response.status_code == 422


def test_unknown_fields_are_rejected(client):
    """Test fields a command does not take are refused instead of dropped"""
    response = client.post("/api/v1/solve", json={"matrix": ASYM_TEXT, "threads": 2})
    assert response.status_code == 422
    response = client.post("/api/v1/examples/bd", json={"p": 0.4, "L": 10, "z": 3})
    assert response.status_code == 422


def test_mc_endpoint_reproducible(client):
    payload = {"matrix": ASYM_TEXT, "seed": 11, "n_cycles": 3000}
    first = client.post("/api/v1/mc", json=payload).json()
    second = client.post("/api/v1/mc", json={**payload, "threads": 2}).json()
    assert first["result"] == second["result"]
    assert first["config"]["seed"] == 11


def test_conditions_endpoint(client, periodic_text):
    response = client.post("/api/v1/conditions", json={"matrix": periodic_text, "m_max": 2})
    assert response.status_code == 200
    result = response.json()["result"]
    assert result["period"] == 2
    assert result["minorization"]["certified"] is False


def test_split_endpoint(client):
    response = client.post("/api/v1/split", json={"matrix": ASYM_TEXT})
    assert response.status_code == 200
    result = response.json()["result"]
    assert result["certificate"]["delta"] == pytest.approx(0.15)
    assert result["lambda_star"] == pytest.approx(0.5, abs=1e-8)


def test_birth_death_endpoint(client):
    response = client.post("/api/v1/examples/bd", json={"p": 0.3, "L": 30})
    assert response.status_code == 200
    result = response.json()["result"]
    assert result["lambda_L"] == pytest.approx(result["lambda_truncated_closed_form"], abs=1e-10)


def test_birth_death_endpoint_validates_p(client):
    response = client.post("/api/v1/examples/bd", json={"p": 1.5, "L": 30})
    assert response.status_code == 422


def test_kernel_endpoint(client):
    payload = {"kernel": "uniform_kill", "cycles": 2000, "seed": 5, "grid": 20, "u_cycles": 20}
    response = client.post("/api/v1/examples/kernel", json=payload)
    assert response.status_code == 200
    data = response.json()
    assert data["result"]["lambda_oracle"] == pytest.approx(0.8, abs=1e-10)
    assert data["config"]["kernel"] == "uniform_kill"
