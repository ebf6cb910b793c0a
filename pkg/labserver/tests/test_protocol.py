"""Wire-protocol conformance via the in-process test client."""

from __future__ import annotations

import time

import pytest
from fastapi.testclient import TestClient

from labserver.app import create_app


@pytest.fixture()
def client(tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text(
        "".join(f"story {i} begins alpha beta gamma\n" for i in range(10)), encoding="utf-8"
    )
    member = tmp_path / "member.txt"
    member.write_text("".join(f"story {i} begins alpha beta gamma\n" for i in range(5)))
    with TestClient(create_app()) as client:
        client.corpus_path = str(corpus)
        client.member_path = str(member)
        client.distractor_path = str(tmp_path / "distractor.txt")
        (tmp_path / "distractor.txt").write_text(
            "".join(f"noise {i} zig zag zug\n" for i in range(8))
        )
        yield client


def _pretrain(client, epochs=40) -> str:
    resp = client.post(
        "/lab/pretrain",
        json={
            "corpus_paths": [client.corpus_path],
            "member_paths": [client.member_path],
            "epochs": epochs,
            "seed": 0,
        },
    )
    assert resp.status_code == 200, resp.text
    return resp.json()["model_id"]


def _wait_job(client, job_id: str, timeout: float = 60.0) -> dict:
    deadline = time.monotonic() + timeout
    while True:
        body = client.get(f"/v1/finetune/{job_id}").json()
        if body["status"] in ("succeeded", "failed"):
            return body
        assert time.monotonic() < deadline, "job did not finish in time"
        time.sleep(0.05)


def test_pretrain_emits_membership_manifest(client):
    model_id = _pretrain(client)
    manifest = client.get("/lab/membership").json()
    assert manifest["model_id"] == model_id
    assert len(manifest["member_ids"]) == 5
    assert manifest["final_loss"] < manifest["first_loss"]  # loss monotonicity smoke check


def test_complete_is_deterministic_and_label_only(client):
    model_id = _pretrain(client)
    payload = {"model_id": model_id, "prompt": "story 3 begins", "max_new_tokens": 40}
    first = client.post("/v1/complete", json=payload)
    second = client.post("/v1/complete", json=payload)
    assert first.status_code == 200
    assert first.json() == second.json()
    assert set(first.json().keys()) == {"completion"}  # nothing probability-shaped


def test_complete_validation_errors(client):
    model_id = _pretrain(client, epochs=5)
    assert client.post(
        "/v1/complete", json={"model_id": model_id, "prompt": "  ", "max_new_tokens": 8}
    ).status_code == 400
    assert client.post(
        "/v1/complete", json={"model_id": "ghost", "prompt": "x", "max_new_tokens": 8}
    ).status_code == 404
    assert client.post(
        "/v1/complete",
        json={"model_id": model_id, "prompt": "x", "max_new_tokens": 8, "deterministic": False},
    ).status_code == 400


def test_finetune_versions_are_isolated(client):
    model_id = _pretrain(client)
    prompt = {"model_id": model_id, "prompt": "story 2 begins", "max_new_tokens": 40}
    before = client.post("/v1/complete", json=prompt).json()["completion"]

    pairs = [{"prompt": f"legend {i} tells", "completion": "omega psi chi"} for i in range(6)]
    resp = client.post(
        "/v1/finetune",
        json={
            "base_model_id": model_id,
            "pairs": pairs,
            "hyperparams": {"learning_rate": 0.005, "epochs": 30, "checkpoint_every": 5},
        },
    )
    assert resp.status_code == 200
    body = _wait_job(client, resp.json()["job_id"])
    assert body["status"] == "succeeded"
    result_id = body["result_model_id"]
    assert result_id != model_id

    # the base version is untouched
    after = client.post("/v1/complete", json=prompt).json()["completion"]
    assert after == before

    # the fine-tuned version learned the new pattern
    tuned = client.post(
        "/v1/complete",
        json={"model_id": result_id, "prompt": "legend 3 tells", "max_new_tokens": 30},
    ).json()["completion"]
    assert "omega" in tuned

    # checkpoints are strictly increasing and each is queryable
    steps = [c["step"] for c in body["checkpoints"]]
    assert steps == sorted(steps) and len(set(steps)) == len(steps)
    for checkpoint in body["checkpoints"]:
        code = client.post(
            "/v1/complete",
            json={"model_id": checkpoint["model_id"], "prompt": "legend 1 tells", "max_new_tokens": 8},
        ).status_code
        assert code == 200


def test_one_finetune_job_at_a_time(client):
    model_id = _pretrain(client, epochs=5)
    pairs = [{"prompt": f"p{i}", "completion": "c"} for i in range(8)]
    body = {
        "base_model_id": model_id,
        "pairs": pairs,
        "hyperparams": {"learning_rate": 0.005, "epochs": 200},
    }
    first = client.post("/v1/finetune", json=body)
    assert first.status_code == 200
    second = client.post("/v1/finetune", json=body)
    assert second.status_code == 409
    final = _wait_job(client, first.json()["job_id"])
    assert final["status"] == "succeeded"
    # once idle, new submissions are accepted again
    third = client.post("/v1/finetune", json=body)
    assert third.status_code == 200
    _wait_job(client, third.json()["job_id"])


def test_finetune_rejects_bad_requests(client):
    model_id = _pretrain(client, epochs=5)
    assert client.post(
        "/v1/finetune", json={"base_model_id": "ghost", "pairs": [{"prompt": "a", "completion": "b"}]}
    ).status_code == 404
    assert client.post(
        "/v1/finetune", json={"base_model_id": model_id, "pairs": []}
    ).status_code == 400
    assert client.get("/v1/finetune/unknown-job").status_code == 404


def test_forget_mints_new_version(client):
    model_id = _pretrain(client)
    resp = client.post(
        "/lab/forget",
        json={"model_id": model_id, "distractor_paths": [client.distractor_path], "epochs": 20},
    )
    assert resp.status_code == 200
    assert resp.json()["model_id"] != model_id
    # original still answers like before (isolation), new version drifted
    prompt = {"prompt": "story 1 begins", "max_new_tokens": 30}
    base = client.post("/v1/complete", json={"model_id": model_id, **prompt}).json()
    drifted = client.post(
        "/v1/complete", json={"model_id": resp.json()["model_id"], **prompt}
    ).json()
    assert base != drifted
