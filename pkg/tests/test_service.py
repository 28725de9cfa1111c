import numpy as np
import pytest
from fastapi.testclient import TestClient

from sttts.client import ServiceClient, ServiceError
from sttts.inference import SynthesisRequest, Synthesizer
from sttts.service import create_app


@pytest.fixture(scope="module")
def synth(tiny_run):
    return Synthesizer(tiny_run["checkpoint"])


@pytest.fixture(scope="module")
def http(synth):
    return TestClient(create_app(synth))


@pytest.fixture(scope="module")
def client(synth):
    return ServiceClient("http://testserver", http=TestClient(create_app(synth)))


def test_health(http, tiny_run):
    body = http.get("/health").json()
    assert body == {"status": "ok", "step": tiny_run["ckpt"].step, "mel_dim": 4, "style_dim": 3, "vocab_size": 6}


def test_synthesize_matches_local(http, synth, tiny_run):
    tag = tiny_run["families"][1].surface_forms[0]
    body = http.post("/synthesize", json={"text": "abca", "tag": tag}).json()
    local = synth.synthesize(SynthesisRequest(text="abca", tag=tag))
    np.testing.assert_array_equal(np.array(body["mel"], dtype=np.float32), local.mel)
    assert body["durations"] == local.durations.tolist()
    assert body["frames"] == sum(body["durations"])


def test_synthesize_validation(http, tiny_run):
    assert http.post("/synthesize", json={"text": "abc"}).status_code == 422
    ref = tiny_run["test"][0].mel.tolist()
    assert http.post("/synthesize", json={"text": "abc", "tag": "x", "reference_mel": ref}).status_code == 422
    assert http.post("/synthesize", json={"text": "abc", "reference_mel": [[1.0, 2.0]]}).status_code == 422
    assert http.post("/synthesize", json={"text": "abc", "reference_mel": ref}).status_code == 200


def test_embed_and_project(http, tiny_run):
    tags = [f.surface_forms[0] for f in tiny_run["families"]]
    rows = http.post("/embed", json={"tags": tags, "references": {"u": tiny_run["test"][0].mel.tolist()}}).json()["rows"]
    assert [r["source"] for r in rows] == ["tag"] * len(tags) + ["ref"]
    assert all(len(r["values"]) == 3 for r in rows)
    points = http.post("/project", json={"rows": rows}).json()["points"]
    assert [p["label"] for p in points] == tags + ["u"]
    assert http.post("/project", json={"rows": rows[:2]}).status_code == 422


def test_align(http, tiny_run):
    u = tiny_run["test"][0]
    body = http.post("/align", json={"text": u.text, "mel": u.mel.tolist()}).json()
    assert sum(body["durations"]) == u.n_frames
    short = http.post("/align", json={"text": u.text, "mel": u.mel[:1].tolist()})
    assert short.status_code == 422


def test_client_round_trip(client, synth, tiny_run):
    tag = tiny_run["families"][0].surface_forms[0]
    mel, durations = client.synthesize("bad", tag=tag)
    np.testing.assert_array_equal(mel, synth.synthesize(SynthesisRequest(text="bad", tag=tag)).mel)
    assert client.health()["status"] == "ok"
    np.testing.assert_allclose(client.embed_tags([tag]), synth.embed_tags([tag]))
    with pytest.raises(ServiceError, match="422"):
        client.synthesize("bad")


def test_client_unreachable():
    with pytest.raises(ServiceError, match="cannot reach"):
        ServiceClient("http://127.0.0.1:9", timeout=1.0).synthesize("abc", tag="x")
