"""Assignment balance, the HTTP session flow, idempotency, and durability."""

import json
from collections import Counter

import pytest
from fastapi.testclient import TestClient

from speechbench.corpus import SyntheticSpec, generate_synthetic_corpus
from speechbench.errors import AssignmentError
from speechbench.service import (
    ListeningService,
    ResponseStore,
    build_assignment,
    create_app,
    load_assignments,
    save_assignments,
)

ADMIN = "secret-admin-token"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    spec = SyntheticSpec(
        n_train_subjects=16,
        n_test_subjects=16,
        d=8,
        duration_range=(0.5, 1.0),
        with_audio=True,
    )
    out = tmp_path_factory.mktemp("svc_corpus")
    manifest, _ = generate_synthetic_corpus(spec, out, seed=7)
    return manifest, out


def _status_of(manifest):
    return {s.subject_id: s.status for s in manifest.subjects}


class TestBuildAssignment:
    def test_two_participants_balance_and_sharing(self, corpus):
        manifest, _ = corpus
        assignments = build_assignment(manifest, ["p1", "p2"], seed=3)
        status = _status_of(manifest)
        sex = {s.subject_id: s.sex for s in manifest.subjects}
        clip = {c.clip_id: c for c in manifest.clips}

        for a in assignments:
            assert len(a.clip_ids) == 64
            assert len(set(a.clip_ids)) == 64
            statuses = Counter(status[clip[cid].subject_id] for cid in a.clip_ids)
            assert statuses["PD"] == 32 and statuses["HC"] == 32
            sexes = Counter(sex[clip[cid].subject_id] for cid in a.clip_ids)
            assert sexes["male"] == 32 and sexes["female"] == 32
            languages = Counter(clip[cid].language for cid in a.clip_ids)
            assert set(languages.values()) == {32}
            tasks = sorted(Counter(clip[cid].task for cid in a.clip_ids).values())
            assert tasks == [12, 13, 13, 13, 13]
            assert sum(a.shared_flags) == 32

        shared_sets = [set(cid for cid, fl in zip(a.clip_ids, a.shared_flags) if fl) for a in assignments]
        assert shared_sets[0] == shared_sets[1]
        assert len(set(assignments[0].clip_ids) & set(assignments[1].clip_ids)) == 32

    def test_insufficient_clips_rejected(self, corpus):
        manifest, _ = corpus
        from speechbench.corpus import CorpusManifest

        small = CorpusManifest(subjects=manifest.subjects, clips=manifest.clips[:40], split=manifest.split)
        with pytest.raises(AssignmentError):
            build_assignment(small, ["p1", "p2"], seed=1)

    def test_deterministic_per_seed(self, corpus):
        manifest, _ = corpus
        a = build_assignment(manifest, ["p1"], seed=5)
        b = build_assignment(manifest, ["p1"], seed=5)
        assert a[0].clip_ids == b[0].clip_ids
        assert a[0].session_token == b[0].session_token

    def test_save_load_roundtrip(self, corpus, tmp_path):
        manifest, _ = corpus
        assignments = build_assignment(manifest, ["p1", "p2"], seed=9)
        path = tmp_path / "assignments.json"
        save_assignments(path, assignments)
        assert load_assignments(path) == assignments


@pytest.fixture
def app_env(corpus, tmp_path):
    manifest, base = corpus
    assignments = build_assignment(manifest, ["p1", "p2"], seed=11)
    store = ResponseStore(tmp_path / "responses.jsonl")
    svc = ListeningService(manifest, assignments, store, audio_base=base)
    client = TestClient(create_app(svc, admin_token=ADMIN))
    return client, assignments, store, manifest, base


def _response_payload(clip_id, key, prediction="PD", confidence="Confident", reason="SpeechProsody", **extra):
    payload = {
        "clip_id": clip_id,
        "prediction": prediction,
        "confidence": confidence,
        "reason": reason,
        "idempotency_key": key,
    }
    payload.update(extra)
    return payload


class TestSessionFlow:
    def test_fresh_session_first_of_64(self, app_env):
        client, assignments, *_ = app_env
        token = assignments[0].session_token
        out = client.get(f"/api/v1/session/{token}/next").json()
        assert out["complete"] is False
        assert out["clip_id"] == assignments[0].clip_ids[0]
        assert out["progress"] == {"done": 0, "total": 64}
        assert out["audio_url"].endswith(out["clip_id"])

    def test_bogus_token_401(self, app_env):
        client, *_ = app_env
        assert client.get("/api/v1/session/nope/next").status_code == 401

    def test_submit_advances_progress(self, app_env):
        client, assignments, *_ = app_env
        token = assignments[0].session_token
        clip_id = client.get(f"/api/v1/session/{token}/next").json()["clip_id"]
        ack = client.post(f"/api/v1/session/{token}/response", json=_response_payload(clip_id, "k1"))
        assert ack.status_code == 200
        assert ack.json()["progress"]["done"] == 1
        nxt = client.get(f"/api/v1/session/{token}/next").json()
        assert nxt["clip_id"] == assignments[0].clip_ids[1]

    def test_enum_violation_rejected(self, app_env):
        client, assignments, *_ = app_env
        token = assignments[0].session_token
        clip_id = client.get(f"/api/v1/session/{token}/next").json()["clip_id"]
        bad = _response_payload(clip_id, "k2", confidence="VeryConfident")
        assert client.post(f"/api/v1/session/{token}/response", json=bad).status_code == 400

    def test_other_reason_requires_text(self, app_env):
        client, assignments, *_ = app_env
        token = assignments[0].session_token
        clip_id = client.get(f"/api/v1/session/{token}/next").json()["clip_id"]
        bad = _response_payload(clip_id, "k3", reason="Other", reason_text="   ")
        assert client.post(f"/api/v1/session/{token}/response", json=bad).status_code == 400
        good = _response_payload(clip_id, "k4", reason="Other", reason_text="clicks in audio")
        assert client.post(f"/api/v1/session/{token}/response", json=good).status_code == 200

    def test_out_of_order_rejected(self, app_env):
        client, assignments, *_ = app_env
        token = assignments[0].session_token
        wrong_clip = assignments[0].clip_ids[5]
        out = client.post(f"/api/v1/session/{token}/response", json=_response_payload(wrong_clip, "k5"))
        assert out.status_code == 409

    def test_idempotent_retry_returns_same_ack(self, app_env):
        client, assignments, store, *_ = app_env
        token = assignments[0].session_token
        clip_id = client.get(f"/api/v1/session/{token}/next").json()["clip_id"]
        payload = _response_payload(clip_id, "same-key")
        first = client.post(f"/api/v1/session/{token}/response", json=payload).json()
        count_after_first = len(store.records)
        second = client.post(f"/api/v1/session/{token}/response", json=payload).json()
        assert len(store.records) == count_after_first
        assert second["progress"] == first["progress"]
        assert second["replayed"] is True

    def test_revision_rejected(self, app_env):
        client, assignments, *_ = app_env
        token = assignments[0].session_token
        clip_id = client.get(f"/api/v1/session/{token}/next").json()["clip_id"]
        client.post(f"/api/v1/session/{token}/response", json=_response_payload(clip_id, "k6"))
        retry = client.post(f"/api/v1/session/{token}/response", json=_response_payload(clip_id, "k7", prediction="HC"))
        assert retry.status_code == 409

    def test_audio_endpoint_serves_wav(self, app_env):
        client, assignments, *_ = app_env
        clip_id = assignments[0].clip_ids[0]
        out = client.get(f"/api/v1/audio/{clip_id}")
        assert out.status_code == 200
        assert out.content[:4] == b"RIFF"

    def test_complete_session_done_marker(self, corpus, tmp_path):
        manifest, base = corpus
        assignments = build_assignment(manifest, ["solo"], seed=21)
        store = ResponseStore(tmp_path / "r.jsonl")
        svc = ListeningService(manifest, assignments, store, audio_base=base)
        client = TestClient(create_app(svc, admin_token=ADMIN))
        token = assignments[0].session_token
        for i, clip_id in enumerate(assignments[0].clip_ids):
            ack = client.post(f"/api/v1/session/{token}/response", json=_response_payload(clip_id, f"key-{i}"))
            assert ack.status_code == 200
        done = client.get(f"/api/v1/session/{token}/next").json()
        assert done["complete"] is True
        assert done["clip_id"] is None
        assert done["progress"] == {"done": 64, "total": 64}
        after = client.post(
            f"/api/v1/session/{token}/response", json=_response_payload(assignments[0].clip_ids[0], "late")
        )
        assert after.status_code == 409


class TestExportAndDurability:
    def test_export_requires_bearer(self, app_env):
        client, *_ = app_env
        assert client.get("/api/v1/admin/export").status_code == 401
        assert client.get("/api/v1/admin/export", headers={"Authorization": "Bearer wrong"}).status_code == 401
        ok = client.get("/api/v1/admin/export", headers={"Authorization": f"Bearer {ADMIN}"})
        assert ok.status_code == 200

    def test_export_counts_and_stability(self, app_env):
        client, assignments, *_ = app_env
        token = assignments[1].session_token
        for i in range(3):
            clip_id = client.get(f"/api/v1/session/{token}/next").json()["clip_id"]
            client.post(f"/api/v1/session/{token}/response", json=_response_payload(clip_id, f"x{i}"))
        headers = {"Authorization": f"Bearer {ADMIN}"}
        body1 = client.get("/api/v1/admin/export", headers=headers).text
        body2 = client.get("/api/v1/admin/export", headers=headers).text
        assert body1 == body2
        records = [json.loads(line) for line in body1.strip().splitlines()]
        assert len(records) == 3
        assert [r["seq"] for r in records] == [0, 1, 2]
        for r in records:
            assert set(r) >= {"participant_id", "clip_id", "prediction", "confidence", "reason", "idempotency_key", "seq"}

    def test_crash_after_ack_preserves_response(self, corpus, tmp_path):
        manifest, base = corpus
        assignments = build_assignment(manifest, ["p9"], seed=31)
        store_path = tmp_path / "durable.jsonl"
        store = ResponseStore(store_path)
        svc = ListeningService(manifest, assignments, store, audio_base=base)
        client = TestClient(create_app(svc, admin_token=ADMIN))
        token = assignments[0].session_token
        clip_id = client.get(f"/api/v1/session/{token}/next").json()["clip_id"]
        ack = client.post(f"/api/v1/session/{token}/response", json=_response_payload(clip_id, "durable-key"))
        assert ack.status_code == 200

        # simulate a crash: rebuild everything from the store file alone
        revived_store = ResponseStore(store_path)
        revived = ListeningService(manifest, assignments, revived_store, audio_base=base)
        client2 = TestClient(create_app(revived, admin_token=ADMIN))
        out = client2.get(f"/api/v1/session/{token}/next").json()
        assert out["progress"]["done"] == 1
        assert out["clip_id"] == assignments[0].clip_ids[1]
        assert revived_store.find_by_key("p9", "durable-key") is not None
