"""End-to-end command pipeline, exit codes, and output determinism."""

import filecmp
import json

import pytest

from speechbench.cli import main

SMALL_CONFIG = {
    "synthetic": {
        "n_train_subjects": 14,
        "n_test_subjects": 7,
        "d": 8,
        "separation": 2.0,
        "duration_range": [1.0, 2.0],
    },
    "train": {"epoch_size": 60, "batch_size": 10, "epochs": 3, "trials": 2},
    "head": {"h": 8, "dropout_rate": 0.2},
}


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory, config_path):
    out = tmp_path_factory.mktemp("corpus")
    code = main(["--config", config_path, "--seed", "7", "--out", str(out), "synth-data", "--with-audio"])
    assert code == 0
    return out


def test_synth_data_outputs(corpus_dir):
    assert (corpus_dir / "manifest.jsonl").exists()
    assert (corpus_dir / "embeddings" / "manifest.jsonl").exists()
    assert (corpus_dir / "run_meta.json").exists()


def test_synth_data_deterministic(tmp_path, config_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["--config", config_path, "--seed", "7", "--out", str(out), "synth-data"]) == 0
    assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()
    match, mismatch, errors = filecmp.cmpfiles(
        a / "embeddings", b / "embeddings", [p.name for p in (a / "embeddings").iterdir()], shallow=False
    )
    assert not mismatch and not errors


def test_train_then_evaluate(tmp_path, config_path, corpus_dir):
    run = tmp_path / "run"
    code = main(
        [
            "--config",
            config_path,
            "--seed",
            "3",
            "--out",
            str(run),
            "train",
            "--manifest",
            str(corpus_dir / "manifest.jsonl"),
            "--store",
            str(corpus_dir / "embeddings"),
        ]
    )
    assert code == 0
    assert (run / "checkpoint.bin").exists()
    epochs = [json.loads(line) for line in (run / "epochs.jsonl").read_text().splitlines()]
    assert len(epochs) == 3

    eval_out = tmp_path / "eval"
    code = main(
        [
            "--config",
            config_path,
            "--out",
            str(eval_out),
            "evaluate",
            "--manifest",
            str(corpus_dir / "manifest.jsonl"),
            "--store",
            str(corpus_dir / "embeddings"),
            "--checkpoint",
            str(run / "checkpoint.bin"),
        ]
    )
    assert code == 0
    metrics = json.loads((eval_out / "metrics.json").read_text())
    assert set(metrics) == {"accuracy", "f1", "n"}
    assert metrics["n"] == 35  # 7 test subjects x 5 tasks
    predictions = (eval_out / "predictions.jsonl").read_text().strip().splitlines()
    assert len(predictions) == 35


def test_trials_deterministic(tmp_path, config_path, corpus_dir):
    outs = []
    for name in ("t1", "t2"):
        out = tmp_path / name
        code = main(
            [
                "--config",
                config_path,
                "--seed",
                "5",
                "--out",
                str(out),
                "trials",
                "--manifest",
                str(corpus_dir / "manifest.jsonl"),
                "--store",
                str(corpus_dir / "embeddings"),
            ]
        )
        assert code == 0
        outs.append((out / "trial_report.json").read_bytes())
    assert outs[0] == outs[1]
    report = json.loads(outs[0])
    assert len(report["scores"]) == 2
    assert report["sd_multiplier"] == 2.0


def test_assign_and_compare(tmp_path, config_path, corpus_dir):
    assign_out = tmp_path / "assign"
    code = main(
        [
            "--seed",
            "9",
            "--out",
            str(assign_out),
            "assign",
            "--manifest",
            str(corpus_dir / "manifest.jsonl"),
            "--participants",
            "rater1,rater2",
        ]
    )
    assert code == 0
    assignments = json.loads((assign_out / "assignments.json").read_text())
    assert len(assignments["participants"]) == 2

    # fabricate a small human export over known clips
    manifest_lines = (corpus_dir / "manifest.jsonl").read_text().splitlines()
    clip_ids = [json.loads(x)["clip_id"] for x in manifest_lines if '"kind": "clip"' in x][:6]
    export = tmp_path / "human.jsonl"
    with open(export, "w") as fh:
        for i, cid in enumerate(clip_ids):
            for participant in ("rater1", "rater2")[: 2 if i % 2 == 0 else 1]:
                fh.write(
                    json.dumps(
                        {
                            "participant_id": participant,
                            "clip_id": cid,
                            "prediction": "PD" if i % 3 else "HC",
                            "confidence": "Confident",
                            "reason": "VoiceQuality",
                            "reason_text": None,
                            "idempotency_key": f"{participant}-{i}",
                            "seq": i,
                        }
                    )
                    + "\n"
                )

    compare_out = tmp_path / "compare"
    code = main(
        [
            "--seed",
            "13",
            "--out",
            str(compare_out),
            "compare",
            "--manifest",
            str(corpus_dir / "manifest.jsonl"),
            "--human-responses",
            str(export),
        ]
    )
    assert code == 0
    stratified = json.loads((compare_out / "stratified.json").read_text())
    assert "human" in stratified
    assert (compare_out / "report.txt").exists()
    assert (compare_out / "stratified_human.csv").exists()
    reasons = json.loads((compare_out / "reasons.json").read_text())
    assert "breakdown" in reasons


def test_augment_command(tmp_path):
    import numpy as np

    from speechbench.dsp import Waveform, load_wav, save_wav

    rng = np.random.default_rng(0)
    in_dir = tmp_path / "in"
    bank_dir = tmp_path / "bank"
    in_dir.mkdir()
    bank_dir.mkdir()
    save_wav(in_dir / "clip.wav", Waveform(samples=0.4 * rng.standard_normal(16000), sample_rate=16000))
    save_wav(bank_dir / "noise.wav", Waveform(samples=0.3 * rng.standard_normal(32000), sample_rate=16000))

    out = tmp_path / "aug"
    code = main(
        ["--seed", "2", "--out", str(out), "augment", "--input", str(in_dir), "--noise-bank", str(bank_dir)]
    )
    assert code == 0
    augmented = load_wav(out / "clip.augmented.wav")
    assert len(augmented) == 16000
    log = json.loads((out / "augment_log.json").read_text())
    assert log["outputs"] == ["clip.augmented.wav"]


def test_embed_import_command(tmp_path):
    import numpy as np

    from speechbench.embed import EmbeddingStore

    npy_dir = tmp_path / "npy"
    npy_dir.mkdir()
    rng = np.random.default_rng(1)
    for name in ("clipA", "clipB"):
        np.save(npy_dir / f"{name}.npy", rng.standard_normal((6, 8)).astype(np.float32))

    out = tmp_path / "imported"
    code = main(["--out", str(out), "embed-import", "--npy-dir", str(npy_dir), "--frame-rate", "50"])
    assert code == 0
    store = EmbeddingStore(out / "embeddings")
    assert sorted(store.clip_ids()) == ["clipA", "clipB"]
    assert store.read("clipA").d == 8


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_seed_exits_2(config_path):
    with pytest.raises(SystemExit) as exc:
        main(["--config", config_path, "synth-data"])
    assert exc.value.code == 2


def test_missing_manifest_exit_1(tmp_path, config_path, capsys):
    code = main(
        [
            "--config",
            config_path,
            "--seed",
            "1",
            "--out",
            str(tmp_path),
            "train",
            "--manifest",
            str(tmp_path / "nope.jsonl"),
            "--store",
            str(tmp_path / "nostore"),
        ]
    )
    assert code == 1
    assert "nope.jsonl" in capsys.readouterr().err


def test_missing_config_exit_1(tmp_path, capsys):
    code = main(["--config", str(tmp_path / "absent.json"), "--seed", "1", "--out", str(tmp_path), "synth-data"])
    assert code == 1
    assert "absent.json" in capsys.readouterr().err
