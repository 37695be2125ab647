"""Metrics and reports comparing human raters with the trained model.

Covers per-class F1 and accuracy (PD is the positive class), stratified
breakdowns over task / severity / age band / sex / language familiarity,
the per-task reason tables, and the resampling protocol that picks one
human answer per clip per trial and reports mean with 3x sample SD.
"""

from __future__ import annotations

import csv
import json
import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from speechbench.corpus import CorpusManifest, TASKS
from speechbench.errors import EvalError
from speechbench.seeds import rng_from

REASON_KINDS = ("VoiceQuality", "SpeechProsody", "LanguageUse", "TypicalSpeech", "Other")
CONFIDENCES = ("Unsure", "Leaning", "Confident", "Certain")
UNDEFINED = "—"

DIMENSIONS = ("task", "severity", "age_band", "sex", "language_familiarity")


@dataclass(frozen=True)
class ReasonTag:
    """One of the five decision reasons; Other carries free text."""

    kind: str
    text: str | None = None

    def __post_init__(self):
        if self.kind not in REASON_KINDS:
            raise EvalError(f"reason must be one of {REASON_KINDS}, got {self.kind!r}")
        if self.kind == "Other" and not (self.text and self.text.strip()):
            raise EvalError("reason Other requires nonempty text")


@dataclass(frozen=True)
class PredictionRecord:
    """One prediction (human or model) for one clip, with the ground truth."""

    clip_id: str
    source: str
    predicted: str
    truth: str
    confidence: str | None = None
    reason: ReasonTag | None = None
    participant_id: str | None = None

    def __post_init__(self):
        if self.source not in ("human", "model"):
            raise EvalError(f"source must be 'human' or 'model', got {self.source!r}")
        for name in ("predicted", "truth"):
            if getattr(self, name) not in ("PD", "HC"):
                raise EvalError(f"{name} must be 'PD' or 'HC'")
        if self.confidence is not None and self.confidence not in CONFIDENCES:
            raise EvalError(f"confidence must be one of {CONFIDENCES}")


def _confusion(records: Sequence[PredictionRecord]) -> tuple[int, int, int, int]:
    tp = sum(1 for r in records if r.predicted == "PD" and r.truth == "PD")
    fp = sum(1 for r in records if r.predicted == "PD" and r.truth == "HC")
    fn = sum(1 for r in records if r.predicted == "HC" and r.truth == "PD")
    tn = sum(1 for r in records if r.predicted == "HC" and r.truth == "HC")
    return tp, fp, fn, tn


def f1(records: Sequence[PredictionRecord]) -> float | None:
    """F1 with PD as positive class; None when no positives exist anywhere."""
    if not records:
        raise EvalError("f1 over empty record list")
    tp, fp, fn, _ = _confusion(records)
    if tp + fp + fn == 0:
        return None
    return 2.0 * tp / (2.0 * tp + fp + fn)


def accuracy(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise EvalError("accuracy over empty record list")
    return sum(1 for r in records if r.predicted == r.truth) / len(records)


def format_mean_margin(mean: float, margin: float) -> str:
    """Render e.g. (75.5, 1.1) as '75.5±1.1' (one decimal each)."""
    if margin < 0:
        raise EvalError("margin must be nonnegative")
    return f"{mean:.1f}±{margin:.1f}"


def age_band_label(age: int, edges: Sequence[int]) -> str:
    """Band for an integer age given ascending edges.

    Edges [53, 62, 71, 80] make bands '53-62', '63-71', '72-80'; ages
    outside the edges fall into '<53' / '>80'.
    """
    if len(edges) < 2:
        raise EvalError("need at least two age band edges")
    if age < edges[0]:
        return f"<{edges[0]}"
    if age <= edges[1]:
        return f"{edges[0]}-{edges[1]}"
    for lo, hi in zip(edges[1:], edges[2:]):
        if age <= hi:
            return f"{lo + 1}-{hi}"
    return f">{edges[-1]}"


def default_age_edges(ages: Iterable[int]) -> list[int]:
    """Quartile edges over the observed ages (deduplicated, ascending)."""
    ages = sorted(set(int(a) for a in ages))
    if not ages:
        raise EvalError("no ages to band")
    if len(ages) == 1:
        return [ages[0], ages[0]]
    qs = np.percentile(ages, [0, 25, 50, 75, 100], method="nearest")
    edges = sorted(set(int(q) for q in qs))
    return edges if len(edges) >= 2 else [ages[0], ages[-1]]


def _stratum_value(record: PredictionRecord, m: CorpusManifest, dimension: str, edges: Sequence[int]) -> str:
    clip = m.clip(record.clip_id)
    subject = m.subject(clip.subject_id)
    if dimension == "task":
        return clip.task
    if dimension == "severity":
        if subject.severity is not None:
            return subject.severity
        return "HC" if subject.status == "HC" else "unspecified"
    if dimension == "age_band":
        return age_band_label(subject.age, edges)
    if dimension == "sex":
        return subject.sex
    if dimension == "language_familiarity":
        return "first" if clip.is_first_language else "L2+"
    raise EvalError(f"unknown dimension {dimension!r}")


def _aggregate(values: list[float | None], sd_multiplier: float) -> dict:
    defined = [v for v in values if v is not None]
    if not defined:
        return {"mean": None, "margin": None}
    margin = sd_multiplier * statistics.stdev(defined) if len(defined) >= 2 else 0.0
    return {"mean": statistics.fmean(defined), "margin": margin}


def stratified_report(
    trials_records: Sequence[Sequence[PredictionRecord]],
    m: CorpusManifest,
    age_band_edges: Sequence[int] | None = None,
    sd_multiplier: float = 2.0,
) -> dict:
    """Accuracy and F1 per stratum with support counts.

    `trials_records` holds one record list per trial; pass a single-element
    list for an un-resampled report (margins collapse to 0). Empty strata
    are omitted. Support is the per-trial record count in the stratum.
    """
    if not trials_records or not trials_records[0]:
        raise EvalError("stratified_report needs at least one nonempty trial")
    if age_band_edges is None:
        ages = [m.subject_of_clip(r.clip_id).age for r in trials_records[0]]
        age_band_edges = default_age_edges(ages)
    else:
        age_band_edges = list(age_band_edges)

    report: dict = {"age_band_edges": age_band_edges, "dimensions": {}}
    for dimension in DIMENSIONS:
        per_value_acc: dict[str, list] = defaultdict(list)
        per_value_f1: dict[str, list] = defaultdict(list)
        per_value_support: dict[str, int] = {}
        for t, records in enumerate(trials_records):
            grouped: dict[str, list[PredictionRecord]] = defaultdict(list)
            for record in records:
                grouped[_stratum_value(record, m, dimension, age_band_edges)].append(record)
            for value, recs in grouped.items():
                per_value_acc[value].append(accuracy(recs))
                per_value_f1[value].append(f1(recs))
                if t == 0:
                    per_value_support[value] = len(recs)

        rows = []
        for value in sorted(per_value_acc, key=_stratum_sort_key(dimension)):
            rows.append(
                {
                    "value": value,
                    "support": per_value_support.get(value, 0),
                    "accuracy": _aggregate(per_value_acc[value], sd_multiplier),
                    "f1": _aggregate(per_value_f1[value], sd_multiplier),
                }
            )
        report["dimensions"][dimension] = rows
    return report


def _stratum_sort_key(dimension: str) -> Callable[[str], tuple]:
    orders = {
        "task": {v: i for i, v in enumerate(TASKS)},
        "severity": {"mild": 0, "moderate": 1, "severe": 2, "HC": 3, "unspecified": 4},
        "sex": {"male": 0, "female": 1},
        "language_familiarity": {"first": 0, "L2+": 1},
    }
    table = orders.get(dimension)

    def key(value: str) -> tuple:
        if table is not None:
            return (table.get(value, len(table)), value)
        return (0, value)

    return key


def reason_breakdown(responses: Sequence[PredictionRecord], m: CorpusManifest) -> dict:
    """Per task, the percentage of human responses citing each reason.

    Rows sum to 100% (up to rounding) over the five reason kinds; tasks
    with no reason-carrying responses are omitted.
    """
    counts: dict[str, dict[str, int]] = defaultdict(lambda: {k: 0 for k in REASON_KINDS})
    for r in responses:
        if r.reason is None:
            continue
        counts[m.clip(r.clip_id).task][r.reason.kind] += 1

    table = {}
    for task in TASKS:
        if task not in counts:
            continue
        total = sum(counts[task].values())
        table[task] = {kind: 100.0 * counts[task][kind] / total for kind in REASON_KINDS}
    return table


def reason_f1_comparison(
    human_responses: Sequence[PredictionRecord],
    model_trials: Sequence[Sequence[PredictionRecord]],
    trials: int = 6,
    seed: int = 0,
    human_sd_multiplier: float = 3.0,
    model_sd_multiplier: float = 2.0,
) -> dict:
    """F1 by cited reason: humans on their own responses, the model on the
    clips where that reason was cited by any rater.

    Human rows resample one response per clip per trial (same protocol as
    `human_resample`); model rows aggregate over the given model trials.
    """
    clips_by_reason: dict[str, set[str]] = defaultdict(set)
    for r in human_responses:
        if r.reason is not None:
            clips_by_reason[r.reason.kind].add(r.clip_id)

    grouped: dict[str, list[PredictionRecord]] = defaultdict(list)
    for r in human_responses:
        grouped[r.clip_id].append(r)
    clip_ids = sorted(grouped)
    rng = rng_from(seed)
    human_scores: dict[str, list] = defaultdict(list)
    for _ in range(trials):
        picked = [grouped[cid][int(rng.integers(0, len(grouped[cid])))] for cid in clip_ids]
        for kind in REASON_KINDS:
            subset = [r for r in picked if r.reason is not None and r.reason.kind == kind]
            human_scores[kind].append(f1(subset) if subset else None)

    rows = {}
    for kind in REASON_KINDS:
        if kind not in clips_by_reason:
            continue
        model_scores = []
        for records in model_trials:
            subset = [r for r in records if r.clip_id in clips_by_reason[kind]]
            model_scores.append(f1(subset) if subset else None)
        rows[kind] = {
            "human": _aggregate(human_scores[kind], human_sd_multiplier),
            "model": _aggregate(model_scores, model_sd_multiplier) if model_trials else {"mean": None, "margin": None},
        }
    return rows


def load_human_records(path, m: CorpusManifest) -> list[PredictionRecord]:
    """Turn the service's exported responses (JSONL) into PredictionRecords,
    attaching ground truth from the manifest."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records.append(
                PredictionRecord(
                    clip_id=rec["clip_id"],
                    source="human",
                    predicted=rec["prediction"],
                    truth=m.subject_of_clip(rec["clip_id"]).status,
                    confidence=rec.get("confidence"),
                    reason=ReasonTag(kind=rec["reason"], text=rec.get("reason_text")) if rec.get("reason") else None,
                    participant_id=rec.get("participant_id"),
                )
            )
    return records


def human_resample(
    responses: Sequence[PredictionRecord],
    trials: int = 6,
    seed: int = 0,
    metric: Callable[[Sequence[PredictionRecord]], float] = accuracy,
    sd_multiplier: float = 3.0,
) -> dict:
    """Pick one response per clip per trial and summarize the metric.

    Clips are visited in sorted clip_id order within a trial; a single
    shared generator seeded from `seed` drives all trials. Returns
    {"scores", "mean", "margin"} where margin = sd_multiplier * sample SD.
    """
    if trials < 1:
        raise EvalError("trials must be >= 1")
    grouped: dict[str, list[PredictionRecord]] = defaultdict(list)
    for r in responses:
        grouped[r.clip_id].append(r)
    if not grouped:
        raise EvalError("no responses to resample")
    for clip_id, recs in grouped.items():
        if not recs:
            raise EvalError(f"clip {clip_id} has no responses")

    rng = rng_from(seed)
    clip_ids = sorted(grouped)
    scores = []
    for _ in range(trials):
        picked = [grouped[cid][int(rng.integers(0, len(grouped[cid])))] for cid in clip_ids]
        scores.append(float(metric(picked)))
    mean = statistics.fmean(scores)
    margin = sd_multiplier * statistics.stdev(scores) if len(scores) >= 2 else 0.0
    return {"scores": scores, "mean": mean, "margin": margin, "sd_multiplier": sd_multiplier}


def render_reason_table(breakdown: dict, f1_rows: dict | None = None, scale: float = 100.0) -> str:
    """Plain-text reason table: per-task percentages, then F1 by reason."""
    tasks = [t for t in TASKS if t in breakdown]
    header = ["Reason"] + tasks
    if f1_rows:
        header += ["Human", "Model"]
    lines = ["  ".join(f"{h:>12}" for h in header)]
    for kind in REASON_KINDS:
        if not any(breakdown[t].get(kind, 0.0) > 0 for t in tasks) and (not f1_rows or kind not in f1_rows):
            continue
        cells = [f"{breakdown[t][kind]:.0f}%" for t in tasks]
        if f1_rows:
            row = f1_rows.get(kind)
            for side in ("human", "model"):
                if row and row[side]["mean"] is not None:
                    cells.append(format_mean_margin(row[side]["mean"] * scale, (row[side]["margin"] or 0.0) * scale))
                else:
                    cells.append(UNDEFINED)
        lines.append("  ".join(f"{c:>12}" for c in [kind] + cells))
    return "\n".join(lines)


def render_stratified_table(report: dict, metric: str = "accuracy", scale: float = 100.0) -> str:
    """Aligned plain-text table of a stratified report, one block per dimension."""
    lines = []
    for dimension, rows in report["dimensions"].items():
        lines.append(dimension)
        width = max((len(row["value"]) for row in rows), default=0)
        for row in rows:
            agg = row[metric]
            if agg["mean"] is None:
                cell = UNDEFINED
            else:
                cell = format_mean_margin(agg["mean"] * scale, (agg["margin"] or 0.0) * scale)
            lines.append(f"  {row['value']:<{width}}  {cell:>12}  ({row['support']})")
        lines.append("")
    return "\n".join(lines)


def stratified_to_csv(report: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dimension", "value", "support", "accuracy_mean", "accuracy_margin", "f1_mean", "f1_margin"])
        for dimension, rows in report["dimensions"].items():
            for row in rows:
                writer.writerow(
                    [
                        dimension,
                        row["value"],
                        row["support"],
                        row["accuracy"]["mean"],
                        row["accuracy"]["margin"],
                        row["f1"]["mean"],
                        row["f1"]["margin"],
                    ]
                )
