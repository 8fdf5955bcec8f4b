from fastapi.testclient import TestClient

from app.main import app
from app.services import presets

client = TestClient(app)


def test_health():
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "healthy", "presets": len(presets.PRESETS)}


def test_list_presets():
    response = client.get("/api/v1/presets/")
    assert response.status_code == 200
    names = [p["name"] for p in response.json()]
    assert names == list(presets.PRESETS)


def test_preset_detail_resolves_aliases():
    response = client.get("/api/v1/presets/A1-S2")
    assert response.status_code == 200
    body = response.json()
    assert body["name"] == "A1-S1"
    assert body["model"]["envs"][0]["kind"] == "finite"


def test_unknown_preset_is_not_found():
    response = client.get("/api/v1/presets/no-such-preset")
    assert response.status_code == 404
