"""Listening-test backend: balanced rater assignments, session flow, and an
append-only response store behind a small HTTP JSON API.

Every accepted response is flushed and fsynced to the store file before the
acknowledgment is returned, so a crash after the ack never loses data; a
restarted service rebuilds per-session progress from the file. Submissions
are idempotent via client-supplied keys and forward-only (a submitted
response cannot be revised).
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from speechbench.corpus import CorpusManifest
from speechbench.errors import AssignmentError
from speechbench.evaluation import CONFIDENCES, REASON_KINDS
from speechbench.seeds import rng_from

logger = logging.getLogger(__name__)

ASSIGNMENT_SIZE = 64
SHARED_SIZE = 32


@dataclass(frozen=True)
class Assignment:
    """One rater's ordered 64-clip worklist; half the clips are shared."""

    participant_id: str
    session_token: str
    clip_ids: tuple[str, ...]
    shared_flags: tuple[bool, ...]

    def __post_init__(self):
        if len(self.clip_ids) != len(self.shared_flags):
            raise AssignmentError("clip_ids and shared_flags must align")


def _quota_split(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def _draw_balanced(pool, quota, rng, label):
    """Pick len-quota clips whose marginal counts hit the quota targets.

    quota maps dimension name -> {value: count}; values not in the quota
    are ineligible for that dimension. Retries with fresh draws and falls
    back to a relaxed greedy fill (with a warning) if the targets cannot
    be met from this pool.
    """
    size = sum(quota["status"].values())
    for _ in range(200):
        need = {dim: dict(counts) for dim, counts in quota.items()}
        chosen = []
        remaining = list(pool)
        dead_end = False
        while len(chosen) < size:
            feasible = [
                c
                for c in remaining
                if all(need[dim].get(key(c), 0) > 0 for dim, key in _DIM_KEYS.items() if dim in need)
            ]
            if not feasible:
                dead_end = True
                break
            pick = feasible[int(rng.integers(0, len(feasible)))]
            chosen.append(pick)
            remaining.remove(pick)
            for dim, key in _DIM_KEYS.items():
                if dim in need:
                    need[dim][key(pick)] -= 1
        if not dead_end:
            return chosen
    logger.warning("%s: balance targets not reachable from pool of %d; relaxing", label, len(pool))
    idx = rng.permutation(len(pool))[:size]
    return [pool[i] for i in idx]


_DIM_KEYS = {
    "status": lambda c: c._status,
    "sex": lambda c: c._sex,
    "language": lambda c: c.language,
    "task": lambda c: c.task,
}


@dataclass
class _EligibleClip:
    clip_id: str
    task: str
    language: str
    _status: str
    _sex: str


def build_assignment(m: CorpusManifest, participants: list[str], seed: int) -> list[Assignment]:
    """Build one 64-clip assignment per participant.

    A 32-clip pool is shared by everyone; the other 32 are unique per
    participant. Each assignment balances patient status, sex, and sample
    language 32/32 and spreads tasks as evenly as 64/5 allows. Session
    tokens are drawn from the seeded generator so a seeded run is fully
    reproducible.
    """
    if not participants:
        raise AssignmentError("no participants given")
    if len(set(participants)) != len(participants):
        raise AssignmentError("duplicate participant ids")

    subject = {s.subject_id: s for s in m.subjects}
    eligible = [
        _EligibleClip(
            clip_id=c.clip_id,
            task=c.task,
            language=c.language,
            _status=subject[c.subject_id].status,
            _sex=subject[c.subject_id].sex,
        )
        for c in m.clips
        if c.duration <= 30.0
    ]
    needed = SHARED_SIZE + (ASSIGNMENT_SIZE - SHARED_SIZE) * len(participants)
    if len(eligible) < needed:
        raise AssignmentError(f"need {needed} eligible clips for {len(participants)} participants, have {len(eligible)}")

    languages = sorted({c.language for c in eligible})
    rng = rng_from(seed)

    def quota_for(size: int, task_counts: list[int]) -> dict:
        q = {
            "status": {"PD": size // 2, "HC": size // 2},
            "sex": {"male": size // 2, "female": size // 2},
            "task": dict(zip(sorted({c.task for c in eligible}), task_counts)),
        }
        if len(languages) == 2:
            q["language"] = {languages[0]: size // 2, languages[1]: size // 2}
        else:
            logger.warning("corpus has %d languages; skipping language balance", len(languages))
        return q

    tasks = sorted({c.task for c in eligible})
    total_task_quota = _quota_split(ASSIGNMENT_SIZE, len(tasks))
    shared_task_quota = _quota_split(SHARED_SIZE, len(tasks))
    unique_task_quota = [t - s for t, s in zip(total_task_quota, shared_task_quota)]

    shared = _draw_balanced(eligible, quota_for(SHARED_SIZE, shared_task_quota), rng, "shared pool")
    used = {c.clip_id for c in shared}

    assignments = []
    for participant in participants:
        pool = [c for c in eligible if c.clip_id not in used]
        unique = _draw_balanced(pool, quota_for(ASSIGNMENT_SIZE - SHARED_SIZE, unique_task_quota), rng, f"unique pool for {participant}")
        used.update(c.clip_id for c in unique)

        combined = [(c.clip_id, True) for c in shared] + [(c.clip_id, False) for c in unique]
        order = rng.permutation(len(combined))
        ordered = [combined[i] for i in order]
        token = rng.bytes(16).hex()
        assignments.append(
            Assignment(
                participant_id=participant,
                session_token=token,
                clip_ids=tuple(cid for cid, _ in ordered),
                shared_flags=tuple(flag for _, flag in ordered),
            )
        )
    return assignments


def save_assignments(path, assignments: list[Assignment]) -> None:
    payload = {
        "participants": [
            {
                "participant_id": a.participant_id,
                "session_token": a.session_token,
                "clips": [
                    {"clip_id": cid, "shared": shared}
                    for cid, shared in zip(a.clip_ids, a.shared_flags)
                ],
            }
            for a in assignments
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_assignments(path) -> list[Assignment]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return [
        Assignment(
            participant_id=p["participant_id"],
            session_token=p["session_token"],
            clip_ids=tuple(c["clip_id"] for c in p["clips"]),
            shared_flags=tuple(bool(c["shared"]) for c in p["clips"]),
        )
        for p in payload["participants"]
    ]


class ResponseStore:
    """Append-only JSONL of accepted responses, one writer at a time.

    Records carry a per-participant sequence number and the client's
    idempotency key; existing records are replayed on open so a restarted
    service resumes exactly where the file left off.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.records: list[dict] = []
        self.by_key: dict[tuple[str, str], dict] = {}
        self.answered: dict[tuple[str, str], dict] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._index(json.loads(line))

    def _index(self, rec: dict) -> None:
        self.records.append(rec)
        self.by_key[(rec["participant_id"], rec["idempotency_key"])] = rec
        self.answered[(rec["participant_id"], rec["clip_id"])] = rec

    def find_by_key(self, participant_id: str, idempotency_key: str) -> dict | None:
        return self.by_key.get((participant_id, idempotency_key))

    def has_answered(self, participant_id: str, clip_id: str) -> bool:
        return (participant_id, clip_id) in self.answered

    def count_for(self, participant_id: str) -> int:
        return sum(1 for r in self.records if r["participant_id"] == participant_id)

    def append(self, rec: dict) -> None:
        """Persist one record durably (flush + fsync) before indexing it."""
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._index(rec)

    def export_lines(self) -> list[str]:
        """Every record exactly once, sorted by (participant, sequence)."""
        ordered = sorted(self.records, key=lambda r: (r["participant_id"], r["seq"]))
        return [json.dumps(r, sort_keys=True) for r in ordered]


class SessionError(Exception):
    def __init__(self, status_code: int, detail: str):
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail


class ListeningService:
    """Session flow over assignments and a response store."""

    def __init__(self, manifest: CorpusManifest, assignments: list[Assignment], store: ResponseStore, audio_base=None):
        self.manifest = manifest
        self.store = store
        self.audio_base = Path(audio_base) if audio_base else None
        self.by_token = {a.session_token: a for a in assignments}
        self._session_locks: dict[str, threading.Lock] = {a.session_token: threading.Lock() for a in assignments}
        known = {c.clip_id for c in manifest.clips}
        for a in assignments:
            missing = set(a.clip_ids) - known
            if missing:
                raise AssignmentError(f"assignment for {a.participant_id} references unknown clips {sorted(missing)[:3]}")

    def _assignment(self, token: str) -> Assignment:
        a = self.by_token.get(token)
        if a is None:
            raise SessionError(401, "unknown session token")
        return a

    def _pending_index(self, a: Assignment) -> int | None:
        for i, clip_id in enumerate(a.clip_ids):
            if not self.store.has_answered(a.participant_id, clip_id):
                return i
        return None

    def next_sample(self, token: str) -> dict:
        """First unanswered clip in assignment order, or a done marker."""
        a = self._assignment(token)
        total = len(a.clip_ids)
        idx = self._pending_index(a)
        if idx is None:
            return {"clip_id": None, "audio_url": None, "complete": True, "progress": {"done": total, "total": total}}
        clip_id = a.clip_ids[idx]
        return {
            "clip_id": clip_id,
            "audio_url": f"/api/v1/audio/{clip_id}",
            "complete": False,
            "progress": {"done": idx, "total": total},
        }

    def submit_response(self, token: str, payload: dict) -> dict:
        """Validate and durably persist one response, then acknowledge.

        Duplicate idempotency keys return the original acknowledgment
        without writing; answered clips cannot be revised.
        """
        a = self._assignment(token)
        with self._session_locks[token]:
            return self._submit_locked(a, payload)

    def _submit_locked(self, a: Assignment, payload: dict) -> dict:
        for field in ("clip_id", "prediction", "confidence", "reason", "idempotency_key"):
            if not payload.get(field):
                raise SessionError(400, f"missing field {field!r}")

        key = str(payload["idempotency_key"])
        previous = self.store.find_by_key(a.participant_id, key)
        if previous is not None:
            return self._ack(a, previous["clip_id"], replay=True)

        if payload["prediction"] not in ("PD", "HC"):
            raise SessionError(400, "prediction must be 'PD' or 'HC'")
        if payload["confidence"] not in CONFIDENCES:
            raise SessionError(400, f"confidence must be one of {list(CONFIDENCES)}")
        if payload["reason"] not in REASON_KINDS:
            raise SessionError(400, f"reason must be one of {list(REASON_KINDS)}")
        reason_text = payload.get("reason_text")
        if payload["reason"] == "Other" and not (reason_text and str(reason_text).strip()):
            raise SessionError(400, "reason Other requires nonempty reason_text")

        idx = self._pending_index(a)
        if idx is None:
            raise SessionError(409, "assignment already complete")
        pending = a.clip_ids[idx]
        if payload["clip_id"] != pending:
            if self.store.has_answered(a.participant_id, payload["clip_id"]):
                raise SessionError(409, f"clip {payload['clip_id']} already answered; responses cannot be revised")
            raise SessionError(409, f"out of order: expected clip {pending}")

        rec = {
            "participant_id": a.participant_id,
            "clip_id": payload["clip_id"],
            "prediction": payload["prediction"],
            "confidence": payload["confidence"],
            "reason": payload["reason"],
            "reason_text": str(reason_text).strip() if reason_text else None,
            "idempotency_key": key,
            "seq": self.store.count_for(a.participant_id),
            "submitted_at": datetime.now(timezone.utc).isoformat(),
        }
        self.store.append(rec)
        return self._ack(a, rec["clip_id"], replay=False)

    def _ack(self, a: Assignment, clip_id: str, replay: bool) -> dict:
        done = self.store.count_for(a.participant_id)
        return {
            "status": "accepted",
            "clip_id": clip_id,
            "replayed": replay,
            "progress": {"done": done, "total": len(a.clip_ids)},
        }

    def audio_path(self, clip_id: str) -> Path:
        clip = None
        for c in self.manifest.clips:
            if c.clip_id == clip_id:
                clip = c
                break
        if clip is None or clip.audio_ref is None:
            raise SessionError(404, f"no audio for clip {clip_id!r}")
        base = self.audio_base or Path(".")
        path = base / clip.audio_ref
        if not path.exists():
            raise SessionError(404, f"audio file missing for clip {clip_id!r}")
        return path


def create_app(service: ListeningService, admin_token: str, ui_dir=None):
    """FastAPI wiring for a ListeningService."""
    from fastapi import Body, FastAPI, Header, HTTPException
    from fastapi.responses import FileResponse, PlainTextResponse

    app = FastAPI(title="speechbench listening test")

    def guard(call, *args):
        try:
            return call(*args)
        except SessionError as exc:
            raise HTTPException(status_code=exc.status_code, detail=exc.detail) from exc

    @app.get("/api/v1/session/{token}/next")
    def next_sample(token: str):
        return guard(service.next_sample, token)

    @app.post("/api/v1/session/{token}/response")
    def submit(token: str, payload: dict = Body(...)):
        return guard(service.submit_response, token, payload)

    @app.get("/api/v1/audio/{clip_id}")
    def audio(clip_id: str):
        path = guard(service.audio_path, clip_id)
        return FileResponse(path, media_type="audio/wav")

    @app.get("/api/v1/admin/export")
    def export(authorization: str = Header(default="")):
        if authorization != f"Bearer {admin_token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")
        lines = service.store.export_lines()
        return PlainTextResponse("\n".join(lines) + ("\n" if lines else ""), media_type="application/jsonl")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
