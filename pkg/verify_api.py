import sys
import os
import json

from fastapi.testclient import TestClient

# Add current dir to path
sys.path.append(os.getcwd())

from app.main import app

client = TestClient(app)


def load(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def small_simulation() -> dict:
    return {
        "network": {"n": 3, "M": 2, "cell_radius_m": 100.0, "cluster_std_m": 5.0, "seed": 2},
        "frames": 20,
        "ewma_window": 10,
        "grid_points": 4,
        "burn_in": 10,
    }


def test_health():
    assert client.get("/health").json() == {"status": "healthy"}
    root = client.get("/").json()
    assert root["service"] == "coopsched"


def test_trace_id_is_echoed():
    response = client.get("/health", headers={"x-trace-id": "abc-123"})
    assert response.headers["x-trace-id"] == "abc-123"
    assert client.get("/health").headers["x-trace-id"]


def test_gap_check_explicit_instance():
    payload = {"H": [[[1.0, 0.0], [0.0, 0.0]], [[0.5, 0.5], [0.0, 0.0]]], "g": [2.0, 0.0]}
    response = client.post("/phy/gap-check", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert len(body["rows"]) == 1
    assert body["rows"][0]["M"] == 2
    assert body["within_bound"]
    assert body["rows"][0]["r_mimo"] <= body["rows"][0]["cutset"] + 1e-9


def test_gap_check_batch():
    response = client.post("/phy/gap-check", json={"trials": 3, "seed": 1, "M": [2]})
    assert response.status_code == 200
    body = response.json()
    assert [row["seed"] for row in body["rows"]] == [0, 1, 2]
    assert body["within_bound"]
    assert body["min_gap"] <= body["max_gap"]


def test_gap_check_limits():
    assert client.post("/phy/gap-check", json={"trials": 10_000, "M": [2, 4, 8]}).status_code == 422
    assert client.post("/phy/gap-check", json={"trials": 2, "bogus": 1}).status_code == 422
    assert client.post("/phy/gap-check", json={"H": [[[1.0, 0.0]], [[1.0, 0.0]]]}).status_code == 422


def test_stability_check():
    response = client.post("/conflict/stability-check", json=load("configs/stability_example.json"))
    assert response.status_code == 200
    body = response.json()
    assert body["num_vertices"] == 6
    assert body["chordal"]
    assert body["inner_bound"] == all(c["within"] for c in body["cliques"])
    assert not (body["inner_bound"] and body["brute_force"] is False)


def test_stability_check_unknown_pair():
    payload = {"vertices": [[0, 1], [1, 0]], "loads": [{"pair": [0, 2], "beta": 0.1}]}
    response = client.post("/conflict/stability-check", json=payload)
    assert response.status_code == 400
    assert "outside the conflict graph" in response.json()["detail"]


def test_reference_solve():
    response = client.post("/reference/solve", json={"table": load("configs/tiny_table.json")})
    assert response.status_code == 200
    body = response.json()
    assert body["converged"]
    assert len(body["rates"]) == 2
    assert all(x <= 1 + 1e-8 for x in body["clique_loads"])


def test_simulate_small():
    response = client.post("/simulate", json=small_simulation(), params={"baseline": True})
    assert response.status_code == 200
    body = response.json()
    assert body["cooperative"]["drops"] == 1
    assert body["cooperative"]["users"] == 3
    assert body["baseline"]["relay_fraction"]["mean"] == 0.0
    assert "p5_gain" in body["gains"]


def test_simulate_rejects_oversized_and_unknown_keys():
    big = {"network": {"n": 25}, "frames": 5000, "drops": 20}
    assert client.post("/simulate", json=big).status_code == 422
    bad = small_simulation()
    bad["unknown"] = 1
    assert client.post("/simulate", json=bad).status_code == 422
