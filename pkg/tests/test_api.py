import pytest
from fastapi.testclient import TestClient

from app.core.errors import NegativeWealthError
from app.main import app
from app.services import pipeline


@pytest.fixture
def client():
    return TestClient(app)


def test_root_and_health(client):
    assert client.get("/health").json() == {"status": "healthy"}
    body = client.get("/").json()
    assert body["docs"] == "/docs"
    assert set(body["pipelines"]) == {"simulate", "donsker", "adjoint", "check", "portfolio"}


def test_presets_registry(client):
    response = client.get("/api/v1/presets")
    assert response.status_code == 200
    assert {entry["name"] for entry in response.json()["model"]} >= {"lq", "log_market"}


def test_sample_configs(client):
    response = client.get("/api/v1/presets/samples/donsker")
    assert response.status_code == 200
    assert response.json()["kind"] == "donsker"
    assert client.get("/api/v1/presets/samples/unknown").status_code == 404


def test_run_experiment(client, small_config):
    response = client.post("/api/v1/experiments/run", json=small_config("donsker"))
    assert response.status_code == 200
    report = response.json()
    assert report["kind"] == "donsker"
    assert all(check["passed"] for check in report["checks"])
    assert report["artifacts"] == {}


def test_run_kind_override(client, small_config):
    response = client.post("/api/v1/experiments/run", params={"kind": "simulate"}, json=small_config("donsker"))
    assert response.status_code == 200
    assert response.json()["kind"] == "simulate"


def test_invalid_configuration_is_422(client, small_config):
    config = small_config("portfolio", market={"sigma0": {"name": "constant", "params": {"value": 0.0}}})
    assert client.post("/api/v1/experiments/run", json=config).status_code == 422
    neutral = small_config("donsker", chaos={"insider": False})
    response = client.post("/api/v1/experiments/run", json=neutral)
    assert response.status_code == 422
    body = response.json()
    assert "ConfigurationError" in body["error"]
    assert body["exit_code"] == 2


def test_validate_endpoint(client):
    response = client.post("/api/v1/experiments/validate", params={"only": [1]})
    assert response.status_code == 200
    body = response.json()
    assert body["passed"]
    assert [c["name"] for c in body["report"]["checks"]] == ["1.donsker_closed_form"]
    unknown = client.post("/api/v1/experiments/validate", params={"only": [42]})
    assert unknown.status_code == 422
    assert unknown.json()["exit_code"] == 2


def test_invariant_violation_is_409(client, small_config, monkeypatch):
    def fail(*args, **kwargs):
        raise NegativeWealthError("X_hat is not positive")

    monkeypatch.setattr(pipeline, "run", fail)
    response = client.post("/api/v1/experiments/run", json=small_config("portfolio"))
    assert response.status_code == 409
    assert response.json() == {"error": "NegativeWealthError: X_hat is not positive", "exit_code": 3}
