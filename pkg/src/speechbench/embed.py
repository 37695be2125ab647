"""Frozen-encoder boundary: embedding files, store manifest, synthetic encoder.

Real deployments compute encoder outputs with an external tool and import
them through the binary format below; the bench's own tests run end to end
on `synthetic_encode`, a deterministic stand-in producing frames at the
same 50 frames/s temporal resolution.

Embedding file layout (little-endian):
    magic "EMB1" | u32 version=1 | u32 T | u32 D | f32 frame_rate
    followed by T*D float32 values, frame-major.
Store manifest: JSON Lines, one {"clip_id", "file", "t", "d"} per clip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from speechbench.dsp import Waveform
from speechbench.errors import DuplicateClipError, EmbeddingFormatError, UnknownClipError
from speechbench.seeds import rng_from

MAGIC = b"EMB1"
VERSION = 1
FRAME_RATE = 50.0
_HEADER = struct.Struct("<4sIIIf")


@dataclass(frozen=True)
class EmbeddingSequence:
    """T x D float matrix of encoder frames for one clip."""

    clip_id: str
    frames: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError("frames must be a non-empty T x D matrix")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames must be finite")
        if not self.clip_id:
            raise ValueError("clip_id must be nonempty")
        object.__setattr__(self, "frames", frames)

    @property
    def t(self) -> int:
        return self.frames.shape[0]

    @property
    def d(self) -> int:
        return self.frames.shape[1]


def write_embedding_file(path, emb: EmbeddingSequence) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, emb.t, emb.d, emb.frame_rate))
        fh.write(emb.frames.astype("<f4").tobytes())


def read_embedding_file(path, clip_id: str) -> EmbeddingSequence:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise EmbeddingFormatError(f"{path}: truncated header")
        magic, version, t, d, frame_rate = _HEADER.unpack(header)
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise EmbeddingFormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    if len(payload) != t * d * 4:
        raise EmbeddingFormatError(f"{path}: header says {t}x{d} frames but payload holds {len(payload)} bytes")
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, d)
    return EmbeddingSequence(clip_id=clip_id, frames=frames, frame_rate=frame_rate)


class EmbeddingStore:
    """Directory of per-clip embedding files plus a JSONL manifest.

    Reads are concurrent-safe; writes are single-writer (caller's
    responsibility). Channel count D is uniform across the store and
    enforced on write.
    """

    MANIFEST = "manifest.jsonl"

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._index: dict[str, dict] = {}
        self._d: int | None = None
        manifest = self.directory / self.MANIFEST
        if manifest.exists():
            with open(manifest, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._index[rec["clip_id"]] = rec
                    self._d = int(rec["d"])

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self._index

    def __len__(self) -> int:
        return len(self._index)

    @property
    def d(self) -> int | None:
        return self._d

    def clip_ids(self) -> list[str]:
        return list(self._index)

    def write(self, emb: EmbeddingSequence) -> None:
        if emb.clip_id in self._index:
            raise DuplicateClipError(f"clip_id {emb.clip_id!r} already stored")
        if self._d is not None and emb.d != self._d:
            raise EmbeddingFormatError(f"store holds D={self._d} embeddings, got D={emb.d}")
        filename = f"{emb.clip_id}.emb"
        write_embedding_file(self.directory / filename, emb)
        rec = {"clip_id": emb.clip_id, "file": filename, "t": emb.t, "d": emb.d}
        with open(self.directory / self.MANIFEST, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
        self._index[emb.clip_id] = rec
        self._d = emb.d

    def read(self, clip_id: str) -> EmbeddingSequence:
        rec = self._index.get(clip_id)
        if rec is None:
            raise UnknownClipError(f"clip_id {clip_id!r} not in store")
        emb = read_embedding_file(self.directory / rec["file"], clip_id)
        if emb.t != rec["t"] or emb.d != rec["d"]:
            raise EmbeddingFormatError(f"{rec['file']}: dims disagree with manifest entry")
        return emb


def _frame_features(frames: np.ndarray, sample_rate: int) -> np.ndarray:
    """Per-frame (log energy, zero-crossing rate, spectral centroid, flatness)."""
    eps = 1e-10
    energy = np.mean(np.square(frames), axis=1)
    log_energy = np.log(energy + eps)
    zcr = np.mean(np.abs(np.diff(np.signbit(frames).astype(np.float64), axis=1)), axis=1)

    spectrum = np.abs(np.fft.rfft(frames, axis=1))
    power = np.square(spectrum) + eps
    freqs = np.fft.rfftfreq(frames.shape[1], d=1.0 / sample_rate)
    centroid = (power * freqs).sum(axis=1) / power.sum(axis=1) / (sample_rate / 2.0)
    flatness = np.exp(np.mean(np.log(power), axis=1)) / np.mean(power, axis=1)
    return np.stack([log_energy, zcr, centroid, flatness], axis=1)


def synthetic_encode(w: Waveform, d: int, seed: int, clip_id: str = "clip") -> EmbeddingSequence:
    """Deterministic frozen-encoder stand-in.

    Emits floor(duration * 50) frames: four acoustic features per 1/50 s
    hop, expanded to `d` channels by a fixed seeded random projection.
    """
    if d < 4:
        raise ValueError("synthetic encoder needs d >= 4")
    hop = w.sample_rate / FRAME_RATE
    t = int(len(w) / hop)
    if t < 1:
        raise ValueError("waveform shorter than one 20 ms frame")

    starts = (np.arange(t) * hop).astype(np.int64)
    width = int(hop)
    frames = np.stack([w.samples[s : s + width] for s in starts])
    feats = _frame_features(frames, w.sample_rate)

    projection = rng_from(seed).normal(size=(4, d)) / 2.0
    return EmbeddingSequence(clip_id=clip_id, frames=feats @ projection, frame_rate=FRAME_RATE)
