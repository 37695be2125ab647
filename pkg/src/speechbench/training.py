"""Balanced epoch sampling, head training, and the repeated-trial protocol.

Each epoch is drawn with replacement so every (status, task) cell of the
2x5 grid contributes an equal share (within one clip). Trials rerun the
whole train+eval cycle under derived seeds and report mean plus a margin
of two sample standard deviations.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from speechbench.corpus import STATUSES, TASKS, CorpusManifest
from speechbench.embed import EmbeddingStore
from speechbench.errors import TrainingError
from speechbench.evaluation import PredictionRecord, f1
from speechbench.head import AdamState, HeadHyper, HeadParams, adam_step, backward, bce_loss, forward, init_params
from speechbench.seeds import derive_seed, rng_from

CELL_ORDER = tuple((status, task) for status in STATUSES for task in TASKS)


@dataclass(frozen=True)
class TrainConfig:
    epoch_size: int = 1024
    batch_size: int = 32
    max_clip_seconds: float = 30.0
    trials: int = 6
    epochs: int = 30
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epoch_size % self.batch_size != 0:
            raise TrainingError("epoch_size must be divisible by batch_size")
        if self.trials < 2:
            raise TrainingError("trials must be >= 2")
        if not 0.0 <= self.val_fraction < 1.0:
            raise TrainingError("val_fraction must be in [0, 1)")


@dataclass(frozen=True)
class TrialReport:
    scores: tuple[float, ...]
    mean: float
    margin: float
    sd_multiplier: float = 2.0

    def to_dict(self) -> dict:
        return {
            "scores": list(self.scores),
            "mean": self.mean,
            "margin": self.margin,
            "sd_multiplier": self.sd_multiplier,
        }


def compute_trial_report(scores: Sequence[float], sd_multiplier: float = 2.0) -> TrialReport:
    """Mean and sd_multiplier * sample SD (n-1 denominator) of trial scores."""
    scores = [float(s) for s in scores]
    if len(scores) < 2:
        raise TrainingError("need at least two trial scores")
    sd = statistics.stdev(scores)
    return TrialReport(scores=tuple(scores), mean=statistics.fmean(scores), margin=sd_multiplier * sd, sd_multiplier=sd_multiplier)


def balanced_epoch(
    m: CorpusManifest,
    n: int,
    seed: int,
    max_clip_seconds: float = 30.0,
    exclude_subjects: frozenset[str] | set[str] = frozenset(),
) -> list[str]:
    """Draw `n` train-split clip ids with replacement, evenly over the
    (status, task) grid.

    Cell counts are n/10 rounded, the remainder cycling through the cells
    in fixed order, so any two cells differ by at most one draw.
    """
    eligible = [
        c
        for c in m.clips_for_split("train")
        if c.duration <= max_clip_seconds and c.subject_id not in exclude_subjects
    ]
    by_cell: dict[tuple[str, str], list[str]] = {cell: [] for cell in CELL_ORDER}
    subject_status = {s.subject_id: s.status for s in m.subjects}
    for clip in eligible:
        by_cell[(subject_status[clip.subject_id], clip.task)].append(clip.clip_id)

    counts = {cell: n // len(CELL_ORDER) for cell in CELL_ORDER}
    for i in range(n % len(CELL_ORDER)):
        counts[CELL_ORDER[i]] += 1

    rng = rng_from(seed)
    chosen: list[str] = []
    for cell in CELL_ORDER:
        pool = by_cell[cell]
        if counts[cell] > 0 and not pool:
            raise TrainingError(f"no train clips for cell status={cell[0]} task={cell[1]}")
        idx = rng.integers(0, len(pool), size=counts[cell])
        chosen.extend(pool[i] for i in idx)
    perm = rng.permutation(len(chosen))
    return [chosen[i] for i in perm]


def batches(ids: Sequence[str], batch_size: int) -> list[list[str]]:
    """Partition an epoch's clip ids into consecutive fixed-size batches."""
    if len(ids) % batch_size != 0:
        raise TrainingError("epoch size must be divisible by batch size")
    return [list(ids[i : i + batch_size]) for i in range(0, len(ids), batch_size)]


def _default_loader(store: EmbeddingStore, cache: dict):
    def load(clip, presentation_seed: int):
        key = clip.embedding_ref or clip.clip_id
        if key not in cache:
            cache[key] = store.read(key)
        return cache[key]

    return load


def make_augmenting_loader(audio_base, noise_bank, augment_config, d: int, encode_seed: int):
    """Clip loader that re-augments the raw waveform on every presentation.

    Augmentations are drawn from the presentation seed, so each epoch sees
    a fresh distortion of the same clip; the encoder projection stays fixed
    per corpus. Clips must carry an audio_ref under `audio_base`.
    """
    from pathlib import Path

    from speechbench.dsp import augment_clip, load_wav
    from speechbench.embed import synthetic_encode

    base = Path(audio_base)
    wav_cache: dict[str, object] = {}

    def load(clip, presentation_seed: int):
        if clip.audio_ref is None:
            raise TrainingError(f"clip {clip.clip_id} has no audio_ref for augmented training")
        if clip.clip_id not in wav_cache:
            wav_cache[clip.clip_id] = load_wav(base / clip.audio_ref)
        augmented = augment_clip(wav_cache[clip.clip_id], noise_bank, presentation_seed, augment_config)
        return synthetic_encode(augmented, d, encode_seed, clip_id=clip.clip_id)

    return load


def _label(status: str) -> int:
    return 1 if status == "PD" else 0


def predict_clips(
    p: HeadParams,
    hy: HeadHyper,
    m: CorpusManifest,
    store: EmbeddingStore,
    split: str = "test",
    source: str = "model",
) -> list[PredictionRecord]:
    """Eval-mode predictions (sigmoid(logit) > 0.5 => PD) for a split."""
    subject_status = {s.subject_id: s.status for s in m.subjects}
    records = []
    for clip in m.clips_for_split(split):
        emb = store.read(clip.embedding_ref or clip.clip_id)
        logit, _ = forward(p, hy, emb, mode="eval")
        records.append(
            PredictionRecord(
                clip_id=clip.clip_id,
                source=source,
                predicted="PD" if logit > 0.0 else "HC",
                truth=subject_status[clip.subject_id],
            )
        )
    return records


def train_head(
    cfg: TrainConfig,
    m: CorpusManifest,
    store: EmbeddingStore,
    hy: HeadHyper,
    seed: int,
    clip_loader: Callable | None = None,
) -> tuple[HeadParams, list[dict]]:
    """Train the head for cfg.epochs balanced epochs; deterministic per seed.

    Returns the final parameters and one history record per epoch
    ({epoch, mean_loss, val_f1}), where val_f1 is measured on a held-out
    fraction of train subjects (None when the holdout is empty).
    """
    train_clips = [c for c in m.clips_for_split("train") if c.duration <= cfg.max_clip_seconds]
    if not train_clips:
        raise TrainingError("train split has no eligible clips")
    clip_by_id = {c.clip_id: c for c in train_clips}
    subject_status = {s.subject_id: s.status for s in m.subjects}

    train_subject_ids = sorted({c.subject_id for c in train_clips})
    n_val = int(len(train_subject_ids) * cfg.val_fraction)
    val_rng = rng_from(derive_seed(seed, "val-holdout"))
    val_subjects = frozenset(val_rng.permutation(train_subject_ids)[:n_val].tolist()) if n_val else frozenset()
    val_clips = [c for c in train_clips if c.subject_id in val_subjects]

    if store is None and clip_loader is None:
        raise TrainingError("need an embedding store or a clip_loader")
    if store is not None:
        d = store.d
        if d is None:
            raise TrainingError("embedding store is empty")
    else:
        d = None
    loader = clip_loader or _default_loader(store, {})
    if d is None:
        d = loader(train_clips[0], derive_seed(seed, "probe")).d

    params = init_params(d, hy.h, derive_seed(seed, "init"))
    state = AdamState.zeros_like(params)
    step = 0
    history: list[dict] = []

    train_ids = {c.clip_id for c in train_clips}
    for epoch in range(cfg.epochs):
        ids = balanced_epoch(
            m,
            cfg.epoch_size,
            derive_seed(seed, f"epoch-{epoch}"),
            max_clip_seconds=cfg.max_clip_seconds,
            exclude_subjects=val_subjects,
        )
        leaked = set(ids) - train_ids
        if leaked:
            raise TrainingError(f"sampled clips outside the train split: {sorted(leaked)[:3]}")

        dropout_base = derive_seed(seed, f"dropout-{epoch}")
        epoch_losses = []
        for batch_no, batch_ids in enumerate(batches(ids, cfg.batch_size)):
            grad_sum: dict[str, np.ndarray] | None = None
            batch_loss = 0.0
            for j, clip_id in enumerate(batch_ids):
                clip = clip_by_id[clip_id]
                presentation_seed = (dropout_base + batch_no * cfg.batch_size + j) % 2**64
                emb = loader(clip, presentation_seed)
                logit, trace = forward(params, hy, emb, mode="train", seed=presentation_seed)
                loss, dlogit = bce_loss(logit, _label(subject_status[clip.subject_id]))
                batch_loss += loss
                grads = backward(params, hy, trace, dlogit)
                if grad_sum is None:
                    grad_sum = grads
                else:
                    for k in grad_sum:
                        grad_sum[k] = grad_sum[k] + grads[k]
            batch_loss /= len(batch_ids)
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {batch_no}: {batch_loss}")
            mean_grads = {k: v / len(batch_ids) for k, v in grad_sum.items()}
            step += 1
            params, state = adam_step(params, mean_grads, state, step, hy)
            epoch_losses.append(batch_loss)

        val_f1 = None
        if val_clips:
            val_records = []
            for clip in val_clips:
                emb = loader(clip, 0)
                logit, _ = forward(params, hy, emb, mode="eval")
                val_records.append(
                    PredictionRecord(
                        clip_id=clip.clip_id,
                        source="model",
                        predicted="PD" if logit > 0.0 else "HC",
                        truth=subject_status[clip.subject_id],
                    )
                )
            val_f1 = f1(val_records)
        history.append({"epoch": epoch, "mean_loss": float(np.mean(epoch_losses)), "val_f1": val_f1})

    return params, history


def write_epoch_log(path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def run_trials(
    cfg: TrainConfig,
    evaluate: Callable[[int], float],
    seed: int,
    trial_seeds: Sequence[int] | None = None,
    sd_multiplier: float = 2.0,
) -> TrialReport:
    """Run cfg.trials independent train+eval cycles under derived seeds.

    `evaluate` receives one trial seed and returns the trial's metric; any
    exception aborts the report with the trial index attached.
    """
    if trial_seeds is None:
        trial_seeds = [derive_seed(seed, f"trial-{i}") for i in range(cfg.trials)]
    elif len(trial_seeds) != cfg.trials:
        raise TrainingError(f"expected {cfg.trials} trial seeds, got {len(trial_seeds)}")

    scores = []
    for i, trial_seed in enumerate(trial_seeds):
        try:
            scores.append(float(evaluate(trial_seed)))
        except Exception as exc:
            raise TrainingError(f"trial {i} aborted: {exc}") from exc
    return compute_trial_report(scores, sd_multiplier=sd_multiplier)
