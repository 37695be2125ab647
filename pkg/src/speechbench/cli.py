"""Operator entry point: one `bench` command per pipeline stage.

All stochastic commands require --seed; per-component streams are derived
by hashing (seed, component name), so a single seed reproduces a whole
run. JSON outputs are byte-stable across reruns; wall-clock metadata goes
to a separate run_meta.json that is excluded from that guarantee.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from speechbench import dsp, evaluation, service, training
from speechbench.corpus import CorpusManifest, SyntheticSpec, generate_synthetic_corpus, load_manifest, save_manifest
from speechbench.embed import EmbeddingSequence, EmbeddingStore
from speechbench.errors import BenchError
from speechbench.head import HeadHyper, load_checkpoint, save_checkpoint
from speechbench.seeds import derive_seed

logger = logging.getLogger(__name__)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_meta(out_dir: Path, args) -> None:
    _write_json(
        out_dir / "run_meta.json",
        {"command": args.command, "timestamp": datetime.now(timezone.utc).isoformat(), "seed": getattr(args, "seed", None)},
    )


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(cfg: dict) -> training.TrainConfig:
    return training.TrainConfig(**cfg.get("train", {}))


def _head_hyper(cfg: dict) -> HeadHyper:
    return HeadHyper(**cfg.get("head", {}))


def _augment_config(cfg: dict) -> dsp.AugmentConfig:
    section = dict(cfg.get("augment", {}))
    for key in ("snr_db_range", "notch_count_range", "notch_band", "chunk_count_range", "chunk_len_range"):
        if key in section:
            section[key] = tuple(section[key])
    return dsp.AugmentConfig(**section)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise BenchError(f"{what} not found: {p}")
    return p


def cmd_synth_data(args, cfg) -> int:
    out = _out_dir(args)
    section = dict(cfg.get("synthetic", {}))
    if "duration_range" in section:
        section["duration_range"] = tuple(section["duration_range"])
    with_audio = bool(section.pop("with_audio", False)) or args.with_audio
    spec = SyntheticSpec(**section, with_audio=with_audio)
    manifest, _ = generate_synthetic_corpus(spec, out, derive_seed(args.seed, "synth-data"))
    save_manifest(out / "manifest.jsonl", manifest)
    _write_meta(out, args)
    print(f"wrote {len(manifest.subjects)} subjects / {len(manifest.clips)} clips under {out}")
    return 0


def cmd_augment(args, cfg) -> int:
    out = _out_dir(args)
    config = _augment_config(cfg)
    in_path = _require_file(args.input, "input audio")
    wavs = sorted(in_path.glob("*.wav")) if in_path.is_dir() else [in_path]
    if not wavs:
        raise BenchError(f"no .wav files under {in_path}")
    bank_dir = _require_file(args.noise_bank, "noise bank") if args.noise_bank else None
    noise_bank = [dsp.load_wav(p) for p in sorted(bank_dir.glob("*.wav"))] if bank_dir else []

    written = []
    for wav_path in wavs:
        signal = dsp.load_wav(wav_path)
        seed = derive_seed(args.seed, f"augment:{wav_path.name}")
        augmented = dsp.augment_clip(signal, noise_bank, seed, config)
        target = out / f"{wav_path.stem}.augmented.wav"
        dsp.save_wav(target, augmented)
        written.append(target.name)
    _write_json(out / "augment_log.json", {"inputs": [p.name for p in wavs], "outputs": written})
    _write_meta(out, args)
    print(f"augmented {len(written)} clip(s) into {out}")
    return 0


def cmd_embed_import(args, cfg) -> int:
    out = _out_dir(args)
    npy_dir = _require_file(args.npy_dir, "embedding directory")
    store = EmbeddingStore(out / "embeddings")
    count = 0
    for npy_path in sorted(npy_dir.glob("*.npy")):
        frames = np.load(npy_path)
        store.write(EmbeddingSequence(clip_id=npy_path.stem, frames=frames, frame_rate=args.frame_rate))
        count += 1
    if count == 0:
        raise BenchError(f"no .npy files under {npy_dir}")
    _write_meta(out, args)
    print(f"imported {count} embedding(s) into {out / 'embeddings'}")
    return 0


def _load_corpus(args) -> tuple[CorpusManifest, EmbeddingStore]:
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    store = EmbeddingStore(_require_file(args.store, "embedding store"))
    return manifest, store


def cmd_train(args, cfg) -> int:
    out = _out_dir(args)
    manifest, store = _load_corpus(args)
    tc = _train_config(cfg)
    hy = _head_hyper(cfg)
    loader = None
    if args.augment_audio:
        bank_dir = _require_file(args.noise_bank, "noise bank") if args.noise_bank else None
        noise_bank = [dsp.load_wav(p) for p in sorted(bank_dir.glob("*.wav"))] if bank_dir else []
        loader = training.make_augmenting_loader(
            Path(args.manifest).parent,
            noise_bank,
            _augment_config(cfg),
            d=store.d,
            encode_seed=derive_seed(args.seed, "encode"),
        )
    params, history = training.train_head(tc, manifest, store, hy, derive_seed(args.seed, "train"), clip_loader=loader)
    save_checkpoint(out / "checkpoint.bin", params, hy, step=tc.epochs * (tc.epoch_size // tc.batch_size))
    training.write_epoch_log(out / "epochs.jsonl", history)
    _write_meta(out, args)
    print(f"trained {tc.epochs} epochs; final loss {history[-1]['mean_loss']:.4f}; checkpoint at {out / 'checkpoint.bin'}")
    return 0


def cmd_trials(args, cfg) -> int:
    out = _out_dir(args)
    manifest, store = _load_corpus(args)
    tc = _train_config(cfg)
    hy = _head_hyper(cfg)

    prediction_files = []

    def one_trial(trial_seed: int) -> float:
        params, _ = training.train_head(tc, manifest, store, hy, trial_seed)
        records = training.predict_clips(params, hy, manifest, store, split="test")
        index = len(prediction_files)
        path = out / f"predictions_trial{index}.jsonl"
        _write_predictions(path, records)
        prediction_files.append(path.name)
        return evaluation.accuracy(records)

    report = training.run_trials(tc, one_trial, derive_seed(args.seed, "trials"))
    _write_json(out / "trial_report.json", {**report.to_dict(), "metric": "accuracy", "prediction_files": prediction_files})
    _write_meta(out, args)
    print(f"{tc.trials} trials: accuracy {evaluation.format_mean_margin(report.mean * 100, report.margin * 100)}")
    return 0


def _write_predictions(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"clip_id": r.clip_id, "predicted": r.predicted, "truth": r.truth}, sort_keys=True) + "\n")


def _load_predictions(path, m: CorpusManifest) -> list[evaluation.PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records.append(
                evaluation.PredictionRecord(
                    clip_id=rec["clip_id"],
                    source="model",
                    predicted=rec["predicted"],
                    truth=rec.get("truth") or m.subject_of_clip(rec["clip_id"]).status,
                )
            )
    return records


def cmd_evaluate(args, cfg) -> int:
    out = _out_dir(args)
    manifest, store = _load_corpus(args)
    params, hy, _ = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    records = training.predict_clips(params, hy, manifest, store, split=args.split)
    _write_predictions(out / "predictions.jsonl", records)
    metrics = {"accuracy": evaluation.accuracy(records), "f1": evaluation.f1(records), "n": len(records)}
    _write_json(out / "metrics.json", metrics)
    _write_meta(out, args)
    print(f"{args.split} split: accuracy {metrics['accuracy']:.3f}, f1 {metrics['f1'] if metrics['f1'] is not None else evaluation.UNDEFINED}")
    return 0


def cmd_compare(args, cfg) -> int:
    out = _out_dir(args)
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    human = evaluation.load_human_records(_require_file(args.human_responses, "human responses"), manifest)
    model_trials = [_load_predictions(_require_file(p, "model predictions"), manifest) for p in args.model_predictions]

    resample_seed = derive_seed(args.seed, "compare-resample")
    human_trials = []
    grouped: dict[str, list] = {}
    for r in human:
        grouped.setdefault(r.clip_id, []).append(r)
    rng = np.random.default_rng(resample_seed)
    for _ in range(args.resample_trials):
        human_trials.append([grouped[cid][int(rng.integers(0, len(grouped[cid])))] for cid in sorted(grouped)])

    edges = [int(e) for e in args.age_edges.split(",")] if args.age_edges else None
    human_report = evaluation.stratified_report(human_trials, manifest, age_band_edges=edges, sd_multiplier=3.0)
    reports = {"human": human_report}
    if model_trials:
        reports["model"] = evaluation.stratified_report(
            model_trials, manifest, age_band_edges=edges or human_report["age_band_edges"], sd_multiplier=2.0
        )

    breakdown = evaluation.reason_breakdown(human, manifest)
    f1_rows = evaluation.reason_f1_comparison(human, model_trials, trials=args.resample_trials, seed=resample_seed)

    _write_json(out / "stratified.json", reports)
    _write_json(out / "reasons.json", {"breakdown": breakdown, "f1_by_reason": f1_rows})
    text = []
    for source, report in reports.items():
        text.append(f"== {source} ==")
        text.append(evaluation.render_stratified_table(report))
    text.append(evaluation.render_reason_table(breakdown, f1_rows))
    (out / "report.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    evaluation.stratified_to_csv(reports["human"], out / "stratified_human.csv")
    if "model" in reports:
        evaluation.stratified_to_csv(reports["model"], out / "stratified_model.csv")
    _write_meta(out, args)
    print((out / "report.txt").read_text(encoding="utf-8"))
    return 0


def cmd_assign(args, cfg) -> int:
    out = _out_dir(args)
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    participants = [p.strip() for p in args.participants.split(",") if p.strip()]
    assignments = service.build_assignment(manifest, participants, derive_seed(args.seed, "assign"))
    service.save_assignments(out / "assignments.json", assignments)
    _write_meta(out, args)
    print(f"wrote assignments for {len(assignments)} participant(s) to {out / 'assignments.json'}")
    return 0


def cmd_serve(args, cfg) -> int:
    import uvicorn

    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    assignments = service.load_assignments(_require_file(args.assignments, "assignments"))
    store = service.ResponseStore(args.responses)
    audio_base = args.audio_base or Path(args.manifest).parent
    svc = service.ListeningService(manifest, assignments, store, audio_base=audio_base)
    app = service.create_app(svc, admin_token=args.admin_token, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info" if args.verbose else "warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="speech-biomarker screening bench")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed (required by stochastic commands)")
    parser.add_argument("--out", help="output directory (default: current directory)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus with embeddings")
    p.add_argument("--with-audio", action="store_true", help="also write per-clip WAV files")

    p = sub.add_parser("augment", help="apply waveform augmentations to WAV files")
    p.add_argument("--input", required=True, help=".wav file or directory")
    p.add_argument("--noise-bank", help="directory of noise .wav files")

    p = sub.add_parser("embed-import", help="import externally computed embeddings (.npy per clip)")
    p.add_argument("--npy-dir", required=True)
    p.add_argument("--frame-rate", type=float, default=50.0)

    for name in ("train", "trials"):
        p = sub.add_parser(name, help=f"{name} the classification head")
        p.add_argument("--manifest", required=True)
        p.add_argument("--store", required=True, help="embedding store directory")
        if name == "train":
            p.add_argument("--augment-audio", action="store_true", help="re-augment raw audio every presentation")
            p.add_argument("--noise-bank", help="directory of noise .wav files for --augment-audio")

    p = sub.add_parser("evaluate", help="predict a split with a trained checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))

    p = sub.add_parser("compare", help="merge model predictions and human responses into reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--human-responses", required=True, help="service export JSONL")
    p.add_argument("--model-predictions", nargs="*", default=[], help="prediction JSONL files, one per trial")
    p.add_argument("--resample-trials", type=int, default=6)
    p.add_argument("--age-edges", help="comma-separated age band edges, e.g. 53,62,71,80")

    p = sub.add_parser("assign", help="build balanced listening-test assignments")
    p.add_argument("--manifest", required=True)
    p.add_argument("--participants", required=True, help="comma-separated participant ids")

    p = sub.add_parser("serve", help="run the listening-test HTTP service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--responses", required=True, help="append-only response store file")
    p.add_argument("--audio-base", help="base directory for audio_ref paths (default: manifest directory)")
    p.add_argument("--admin-token", required=True)
    p.add_argument("--ui-dir", help="static rating-UI bundle to serve under /ui")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


_HANDLERS = {
    "synth-data": cmd_synth_data,
    "augment": cmd_augment,
    "embed-import": cmd_embed_import,
    "train": cmd_train,
    "trials": cmd_trials,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "assign": cmd_assign,
    "serve": cmd_serve,
}

_SEEDED = {"synth-data", "augment", "train", "trials", "compare", "assign"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command in _SEEDED and args.seed is None:
        parser.error(f"--seed is required for {args.command}")

    try:
        cfg = _load_config(args.config)
    except FileNotFoundError:
        print(f"error: config not found: {args.config}", file=sys.stderr)
        return 1

    try:
        return _HANDLERS[args.command](args, cfg)
    except (BenchError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
