"""Subjects, clips, expert-exclusion splits, and a synthetic corpus generator.

The real clinical audio cannot ship, so desk-scale runs use a generated
corpus: randomized demographics plus Gaussian class-conditional embeddings
whose class means differ by a configurable multiple of the within-class
deviation along a hidden direction. That construction has a closed-form
Bayes accuracy, which is what the end-to-end acceptance run is checked
against.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from speechbench.dsp import Waveform, save_wav
from speechbench.embed import FRAME_RATE, EmbeddingSequence, EmbeddingStore
from speechbench.errors import ManifestError, UnknownClipError
from speechbench.seeds import derive_seed, rng_from

TASKS = ("SVP", "Repeat", "Read", "Recall", "DPT")
STATUSES = ("HC", "PD")
SEXES = ("male", "female")
SEVERITIES = ("mild", "moderate", "severe")
LANGUAGES = ("English", "French")


@dataclass(frozen=True)
class Subject:
    subject_id: str
    status: str
    sex: str
    age: int
    first_language: str
    severity: str | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ManifestError(f"subject {self.subject_id}: status must be one of {STATUSES}")
        if self.sex not in SEXES:
            raise ManifestError(f"subject {self.subject_id}: sex must be one of {SEXES}")
        if self.age <= 0:
            raise ManifestError(f"subject {self.subject_id}: age must be positive")


@dataclass(frozen=True)
class Clip:
    clip_id: str
    subject_id: str
    task: str
    language: str
    is_first_language: bool
    duration: float
    audio_ref: str | None = None
    embedding_ref: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ManifestError(f"clip {self.clip_id}: task must be one of {TASKS}")
        if not 0.0 < self.duration <= 30.0:
            raise ManifestError(f"clip {self.clip_id}: duration must be in (0, 30] seconds")


@dataclass(frozen=True)
class CorpusManifest:
    """Immutable corpus view: subjects, clips, and a per-subject split label."""

    subjects: tuple[Subject, ...]
    clips: tuple[Clip, ...]
    split: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        subject_ids = [s.subject_id for s in self.subjects]
        if len(set(subject_ids)) != len(subject_ids):
            raise ManifestError("duplicate subject_id in manifest")
        clip_ids = [c.clip_id for c in self.clips]
        if len(set(clip_ids)) != len(clip_ids):
            raise ManifestError("duplicate clip_id in manifest")
        known = set(subject_ids)
        for clip in self.clips:
            if clip.subject_id not in known:
                raise ManifestError(f"clip {clip.clip_id} references unknown subject {clip.subject_id}")
        split = dict(self.split)
        for sid, label in split.items():
            if sid not in known:
                raise ManifestError(f"split labels unknown subject {sid}")
            if label not in ("train", "test"):
                raise ManifestError(f"split label for {sid} must be train or test, got {label!r}")
        for sid in known:
            split.setdefault(sid, "train")
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "clips", tuple(self.clips))
        object.__setattr__(self, "split", split)

    def subject(self, subject_id: str) -> Subject:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise UnknownClipError(f"unknown subject {subject_id}")

    def clip(self, clip_id: str) -> Clip:
        for c in self.clips:
            if c.clip_id == clip_id:
                return c
        raise UnknownClipError(f"unknown clip {clip_id}")

    def clips_for_split(self, label: str) -> list[Clip]:
        return [c for c in self.clips if self.split[c.subject_id] == label]

    def subject_of_clip(self, clip_id: str) -> Subject:
        return self.subject(self.clip(clip_id).subject_id)


_SUBJECT_FIELDS = {"subject_id", "status", "sex", "age", "first_language"}
_CLIP_FIELDS = {"clip_id", "subject_id", "task", "language", "is_first_language", "duration"}


def load_manifest(path) -> CorpusManifest:
    """Read a JSON Lines manifest ({"kind":"subject"|"clip"} records)."""
    subjects, clips, split = [], [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            kind = rec.get("kind")
            if kind == "subject":
                missing = _SUBJECT_FIELDS - rec.keys()
                if missing:
                    raise ManifestError(f"{path}:{lineno}: subject record missing {sorted(missing)}")
                label = rec.get("split")
                if label is not None:
                    split[rec["subject_id"]] = label
                subjects.append(
                    Subject(
                        subject_id=rec["subject_id"],
                        status=rec["status"],
                        sex=rec["sex"],
                        age=int(rec["age"]),
                        first_language=rec["first_language"],
                        severity=rec.get("severity"),
                    )
                )
            elif kind == "clip":
                missing = _CLIP_FIELDS - rec.keys()
                if missing:
                    raise ManifestError(f"{path}:{lineno}: clip record missing {sorted(missing)}")
                clips.append(
                    Clip(
                        clip_id=rec["clip_id"],
                        subject_id=rec["subject_id"],
                        task=rec["task"],
                        language=rec["language"],
                        is_first_language=bool(rec["is_first_language"]),
                        duration=float(rec["duration"]),
                        audio_ref=rec.get("audio_ref"),
                        embedding_ref=rec.get("embedding_ref"),
                    )
                )
            else:
                raise ManifestError(f"{path}:{lineno}: record kind must be 'subject' or 'clip', got {kind!r}")
    return CorpusManifest(subjects=tuple(subjects), clips=tuple(clips), split=split)


def save_manifest(path, m: CorpusManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in m.subjects:
            rec = {
                "kind": "subject",
                "subject_id": s.subject_id,
                "status": s.status,
                "sex": s.sex,
                "age": s.age,
                "first_language": s.first_language,
                "split": m.split[s.subject_id],
            }
            if s.severity is not None:
                rec["severity"] = s.severity
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for c in m.clips:
            rec = {
                "kind": "clip",
                "clip_id": c.clip_id,
                "subject_id": c.subject_id,
                "task": c.task,
                "language": c.language,
                "is_first_language": c.is_first_language,
                "duration": c.duration,
            }
            if c.audio_ref is not None:
                rec["audio_ref"] = c.audio_ref
            if c.embedding_ref is not None:
                rec["embedding_ref"] = c.embedding_ref
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def enforce_split(m: CorpusManifest, expert_reviewed_clip_ids: set[str]) -> CorpusManifest:
    """Label every subject owning a reviewed clip as test, all others train.

    The exclusion is subject-level: one reviewed clip moves all of that
    subject's clips out of training.
    """
    known = {c.clip_id: c.subject_id for c in m.clips}
    reviewed_subjects = set()
    for clip_id in expert_reviewed_clip_ids:
        if clip_id not in known:
            raise UnknownClipError(f"reviewed clip {clip_id!r} not in manifest")
        reviewed_subjects.add(known[clip_id])
    split = {s.subject_id: ("test" if s.subject_id in reviewed_subjects else "train") for s in m.subjects}
    if all(label == "test" for label in split.values()) and split:
        warnings.warn("every subject has a reviewed clip: train split is empty", stacklevel=2)
    return CorpusManifest(subjects=m.subjects, clips=m.clips, split=split)


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated corpus.

    `separation` is the distance between PD and HC per-frame class means in
    units of the within-class deviation along a hidden direction; 0 means
    the classes are statistically identical.
    """

    n_train_subjects: int = 40
    n_test_subjects: int = 20
    clips_per_task: int = 1
    d: int = 64
    separation: float = 2.0
    duration_range: tuple[float, float] = (2.0, 6.0)
    with_audio: bool = False
    audio_sample_rate: int = 16_000

    def __post_init__(self):
        if self.n_train_subjects < 1 or self.n_test_subjects < 1:
            raise ValueError("subject counts must be >= 1")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")
        if self.d < 4:
            raise ValueError("d must be >= 4")
        if not 0.0 < self.duration_range[0] <= self.duration_range[1] <= 30.0:
            raise ValueError("duration_range must lie in (0, 30]")


def _make_subjects(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[list[Subject], dict[str, str]]:
    subjects, split = [], {}
    counter = 0
    for split_label, count in (("train", spec.n_train_subjects), ("test", spec.n_test_subjects)):
        for i in range(count):
            status = STATUSES[i % 2]
            sid = f"S{counter:04d}"
            counter += 1
            subjects.append(
                Subject(
                    subject_id=sid,
                    status=status,
                    sex=SEXES[(i // 2) % 2],
                    age=int(rng.integers(50, 81)),
                    first_language=LANGUAGES[(i // 4) % 2],
                    severity=SEVERITIES[int(rng.integers(0, len(SEVERITIES)))] if status == "PD" else None,
                )
            )
            split[sid] = split_label
    return subjects, split


def generate_synthetic_corpus(spec: SyntheticSpec, out_dir, seed: int) -> tuple[CorpusManifest, EmbeddingStore]:
    """Build a corpus with embeddings under `out_dir` (and WAVs if asked).

    Class-conditional frames are N(mu_status, I) with
    |mu_PD - mu_HC| = separation along a hidden unit direction, so pooling
    T frames gives a closed-form Bayes accuracy of Phi(separation*sqrt(T)/2).
    Deterministic per seed.
    """
    out_dir = Path(out_dir)
    rng = rng_from(derive_seed(seed, "synthetic-corpus"))
    subjects, split = _make_subjects(spec, rng)

    direction = rng.normal(size=spec.d)
    direction /= np.linalg.norm(direction)
    mu_hc = rng.normal(size=spec.d) * 0.1
    mu_pd = mu_hc + spec.separation * direction

    store = EmbeddingStore(out_dir / "embeddings")
    audio_dir = out_dir / "audio"
    if spec.with_audio:
        audio_dir.mkdir(parents=True, exist_ok=True)

    clips = []
    for subject in subjects:
        mu = mu_pd if subject.status == "PD" else mu_hc
        for task in TASKS:
            for k in range(spec.clips_per_task):
                clip_id = f"{subject.subject_id}-{task}-{k}"
                duration = float(rng.uniform(*spec.duration_range))
                t = int(duration * FRAME_RATE)
                frames = mu + rng.normal(size=(t, spec.d))
                store.write(EmbeddingSequence(clip_id=clip_id, frames=frames))

                audio_ref = None
                if spec.with_audio:
                    n = int(duration * spec.audio_sample_rate)
                    tone_hz = float(rng.uniform(120.0, 400.0))
                    phase = 2.0 * math.pi * tone_hz * np.arange(n) / spec.audio_sample_rate
                    samples = 0.3 * np.sin(phase) + 0.01 * rng.normal(size=n)
                    audio_ref = f"audio/{clip_id}.wav"
                    save_wav(out_dir / audio_ref, Waveform(samples=samples, sample_rate=spec.audio_sample_rate))

                language = LANGUAGES[(len(clips)) % 2]
                clips.append(
                    Clip(
                        clip_id=clip_id,
                        subject_id=subject.subject_id,
                        task=task,
                        language=language,
                        is_first_language=language == subject.first_language,
                        duration=duration,
                        audio_ref=audio_ref,
                        embedding_ref=clip_id,
                    )
                )

    manifest = CorpusManifest(subjects=tuple(subjects), clips=tuple(clips), split=split)
    return manifest, store
