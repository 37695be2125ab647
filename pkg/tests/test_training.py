"""Balanced sampling, the training loop, and the repeated-trial protocol."""

import math

import numpy as np
import pytest

from speechbench.corpus import SyntheticSpec, generate_synthetic_corpus
from speechbench.errors import TrainingError
from speechbench.head import HeadHyper
from speechbench.training import (
    CELL_ORDER,
    TrainConfig,
    balanced_epoch,
    batches,
    compute_trial_report,
    predict_clips,
    run_trials,
    train_head,
)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    spec = SyntheticSpec(n_train_subjects=12, n_test_subjects=6, d=8, separation=2.0, duration_range=(1.0, 2.0))
    return generate_synthetic_corpus(spec, tmp_path_factory.mktemp("corpus"), seed=101)


SMALL_HYPER = HeadHyper(dropout_rate=0.2, h=8)


class TestBalancedEpoch:
    def test_n10_one_per_cell(self, small_corpus):
        m, _ = small_corpus
        ids = balanced_epoch(m, 10, seed=1)
        counts = _cell_counts(m, ids)
        assert all(c == 1 for c in counts.values())

    def test_n1024_cells_102_or_103(self, small_corpus):
        m, _ = small_corpus
        ids = balanced_epoch(m, 1024, seed=2)
        counts = _cell_counts(m, ids)
        assert sorted(counts.values()) == [102] * 6 + [103] * 4  # 1024 = 10*102 + 4
        assert sum(counts.values()) == 1024

    def test_balance_over_many_epochs(self, small_corpus):
        m, _ = small_corpus
        for k in range(20):
            counts = _cell_counts(m, balanced_epoch(m, 1024, seed=k))
            assert max(abs(c - 102.4) for c in counts.values()) <= 1

    def test_empty_cell_rejected(self, small_corpus):
        m, _ = small_corpus
        # removing every HC-SVP train clip empties one cell
        status = {s.subject_id: s.status for s in m.subjects}
        keep = tuple(
            c for c in m.clips if not (status[c.subject_id] == "HC" and c.task == "SVP" and m.split[c.subject_id] == "train")
        )
        from speechbench.corpus import CorpusManifest

        pruned = CorpusManifest(subjects=m.subjects, clips=keep, split=m.split)
        with pytest.raises(TrainingError):
            balanced_epoch(pruned, 10, seed=0)

    def test_only_train_split_sampled(self, small_corpus):
        m, _ = small_corpus
        ids = balanced_epoch(m, 200, seed=3)
        train_ids = {c.clip_id for c in m.clips_for_split("train")}
        assert set(ids) <= train_ids

    def test_deterministic(self, small_corpus):
        m, _ = small_corpus
        assert balanced_epoch(m, 100, seed=7) == balanced_epoch(m, 100, seed=7)


def _cell_counts(m, ids):
    status = {s.subject_id: s.status for s in m.subjects}
    clip = {c.clip_id: c for c in m.clips}
    counts = {cell: 0 for cell in CELL_ORDER}
    for cid in ids:
        c = clip[cid]
        counts[(status[c.subject_id], c.task)] += 1
    return counts


class TestBatches:
    def test_exact_partition(self):
        ids = [f"c{i}" for i in range(1024)]
        parts = batches(ids, 32)
        assert len(parts) == 32
        assert all(len(b) == 32 for b in parts)
        assert [x for b in parts for x in b] == ids

    def test_indivisible_rejected(self):
        with pytest.raises(TrainingError):
            batches(["a", "b", "c"], 2)


class TestTrainHead:
    def test_zero_epochs_returns_initial_params(self, small_corpus):
        m, store = small_corpus
        cfg = TrainConfig(epoch_size=20, batch_size=10, epochs=0, trials=2)
        params, history = train_head(cfg, m, store, SMALL_HYPER, seed=5)
        from speechbench.head import init_params
        from speechbench.seeds import derive_seed

        expected = init_params(8, SMALL_HYPER.h, derive_seed(5, "init"))
        for name, tensor in expected.tensors().items():
            np.testing.assert_array_equal(params.tensors()[name], tensor)
        assert history == []

    def test_loss_decreases_on_separable_corpus(self, small_corpus):
        m, store = small_corpus
        cfg = TrainConfig(epoch_size=60, batch_size=10, epochs=6, trials=2)
        _, history = train_head(cfg, m, store, SMALL_HYPER, seed=6)
        assert history[-1]["mean_loss"] < history[0]["mean_loss"]

    def test_deterministic_loss_history(self, small_corpus):
        m, store = small_corpus
        cfg = TrainConfig(epoch_size=20, batch_size=10, epochs=2, trials=2)
        _, h1 = train_head(cfg, m, store, SMALL_HYPER, seed=7)
        _, h2 = train_head(cfg, m, store, SMALL_HYPER, seed=7)
        assert h1 == h2

    def test_history_schema(self, small_corpus):
        m, store = small_corpus
        cfg = TrainConfig(epoch_size=20, batch_size=10, epochs=2, trials=2)
        _, history = train_head(cfg, m, store, SMALL_HYPER, seed=8)
        assert [rec["epoch"] for rec in history] == [0, 1]
        assert all(math.isfinite(rec["mean_loss"]) for rec in history)
        assert all("val_f1" in rec for rec in history)

    def test_predictions_cover_test_split(self, small_corpus):
        m, store = small_corpus
        cfg = TrainConfig(epoch_size=20, batch_size=10, epochs=1, trials=2)
        params, _ = train_head(cfg, m, store, SMALL_HYPER, seed=9)
        records = predict_clips(params, SMALL_HYPER, m, store, split="test")
        assert len(records) == len(m.clips_for_split("test"))
        assert {r.predicted for r in records} <= {"PD", "HC"}


class TestAugmentingLoader:
    def test_trains_from_raw_audio(self, tmp_path):
        from speechbench.dsp import AugmentConfig
        from speechbench.training import make_augmenting_loader

        spec = SyntheticSpec(
            n_train_subjects=4, n_test_subjects=2, d=8, duration_range=(0.5, 1.0), with_audio=True
        )
        m, store = generate_synthetic_corpus(spec, tmp_path / "c", seed=55)
        loader = make_augmenting_loader(
            tmp_path / "c",
            noise_bank=[],
            augment_config=AugmentConfig(per_augmentation_probability=0.0),
            d=8,
            encode_seed=77,
        )
        cfg = TrainConfig(epoch_size=20, batch_size=10, epochs=1, trials=2, val_fraction=0.0)
        params, history = train_head(cfg, m, store, SMALL_HYPER, seed=5, clip_loader=loader)
        assert len(history) == 1
        assert math.isfinite(history[0]["mean_loss"])

    def test_presentation_seed_varies_augmentation(self, tmp_path):
        from speechbench.dsp import AugmentConfig
        from speechbench.training import make_augmenting_loader

        spec = SyntheticSpec(
            n_train_subjects=2, n_test_subjects=1, d=8, duration_range=(0.5, 1.0), with_audio=True
        )
        m, _ = generate_synthetic_corpus(spec, tmp_path / "c", seed=56)
        loader = make_augmenting_loader(
            tmp_path / "c",
            noise_bank=[],
            augment_config=AugmentConfig(per_augmentation_probability=1.0, chunk_len_range=(100, 200), chunk_count_range=(1, 2)),
            d=8,
            encode_seed=77,
        )
        clip = m.clips[0]
        a = loader(clip, 1)
        b = loader(clip, 2)
        again = loader(clip, 1)
        assert not np.array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.frames, again.frames)


class TestRunTrials:
    def test_identical_scores_zero_margin(self):
        cfg = TrainConfig(epoch_size=32, batch_size=32, trials=6)
        report = run_trials(cfg, lambda seed: 0.8, seed=1)
        assert report.mean == pytest.approx(0.8)
        assert report.margin == pytest.approx(0.0)

    def test_two_trials_hand_computed_margin(self):
        # oracle: sample SD of {80, 82} = sqrt(2); margin = 2*sqrt(2)
        scores = iter([80.0, 82.0])
        cfg = TrainConfig(epoch_size=32, batch_size=32, trials=2)
        report = run_trials(cfg, lambda seed: next(scores), seed=1)
        assert report.mean == pytest.approx(81.0)
        assert report.margin == pytest.approx(2.8284271247461903, rel=1e-12)

    def test_single_trial_rejected(self):
        with pytest.raises(TrainingError):
            TrainConfig(epoch_size=32, batch_size=32, trials=1)

    def test_trial_failure_reports_index(self):
        def boom(seed):
            raise RuntimeError("diverged")

        cfg = TrainConfig(epoch_size=32, batch_size=32, trials=2)
        with pytest.raises(TrainingError, match="trial 0"):
            run_trials(cfg, boom, seed=1)

    def test_seed_permutation_leaves_mean_and_margin(self):
        cfg = TrainConfig(epoch_size=32, batch_size=32, trials=4)
        scorer = lambda seed: (seed % 17) / 17.0
        seeds = [11, 22, 33, 44]
        a = run_trials(cfg, scorer, seed=0, trial_seeds=seeds)
        b = run_trials(cfg, scorer, seed=0, trial_seeds=list(reversed(seeds)))
        assert sorted(a.scores) == sorted(b.scores)
        assert a.mean == pytest.approx(b.mean)
        assert a.margin == pytest.approx(b.margin)

    def test_compute_report_needs_two(self):
        with pytest.raises(TrainingError):
            compute_trial_report([0.5])
