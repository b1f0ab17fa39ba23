"""Speech-activity detection: context stacking, the MLP, segment logic."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spoofkit.audio import AudioBuffer
from spoofkit.errors import (
    DimensionMismatch,
    EmptyResult,
    InsufficientData,
    InvalidConfig,
)
from spoofkit.features import FeatureMatrix
from spoofkit.sad import (
    SpeechActivityDetector,
    apply_mask,
    energy_frame_labels,
    init_sad_model,
    load_segments,
    sad_forward,
    save_segments,
    scores_to_segments,
    smooth_scores,
    stack_context,
    train_sad,
)
from spoofkit.scoring import ScoreSeries

RNG = np.random.default_rng(23)


class TestStackContext:
    def test_shape(self):
        out = stack_context(RNG.standard_normal((40, 20)), context_frames=31)
        assert out.shape == (40, 620)

    def test_middle_frame_is_neighbor_concatenation(self):
        x = RNG.standard_normal((9, 3))
        out = stack_context(x, context_frames=5)
        np.testing.assert_array_equal(out[4], x[2:7].ravel())

    def test_edges_replicate_first_frame(self):
        x = RNG.standard_normal((6, 2))
        out = stack_context(x, context_frames=5)
        np.testing.assert_array_equal(out[0], np.concatenate([x[0], x[0], x[0], x[1], x[2]]))

    def test_empty_rejected(self):
        with pytest.raises(EmptyResult):
            stack_context(np.zeros((0, 4)))


class TestForward:
    def test_posteriors_are_probabilities(self):
        model = init_sad_model(input_dim=30, hidden_dims=(16, 8), seed=0)
        out = sad_forward(model, RNG.standard_normal((25, 30)))
        assert isinstance(out, ScoreSeries)
        assert out.values.shape == (25,)
        assert np.all(out.values > 0.0) and np.all(out.values < 1.0)

    def test_input_width_checked(self):
        model = init_sad_model(input_dim=30, hidden_dims=(16, 8), seed=0)
        with pytest.raises(DimensionMismatch):
            sad_forward(model, RNG.standard_normal((5, 29)))


class TestSmoothing:
    def test_constant_is_fixed_point(self):
        out = smooth_scores(np.full(80, 0.7), window_s=0.5, frame_shift_s=0.010)
        np.testing.assert_allclose(out.values, 0.7)

    def test_single_spike_spreads(self):
        x = np.zeros(100)
        x[50] = 1.0
        out = smooth_scores(x, window_s=0.05, frame_shift_s=0.010)
        # 5-frame window: spike contributes 1/5 to each covered position
        np.testing.assert_allclose(out.values[48:53], 0.2)
        assert out.values[46] == 0.0


class TestSegments:
    def test_single_run_with_padding(self):
        scores = np.full(100, 0.1)
        scores[30:50] = 0.9
        segs = scores_to_segments(scores, threshold=0.5, pad_s=0.05, frame_shift_s=0.010)
        assert len(segs) == 1
        assert segs[0] == pytest.approx((0.25, 0.55))

    def test_padding_clamped_to_signal(self):
        scores = np.full(50, 0.9)
        segs = scores_to_segments(scores, threshold=0.5, pad_s=10.0, frame_shift_s=0.010)
        assert segs == [(0.0, pytest.approx(0.5))]

    def test_touching_runs_merge(self):
        scores = np.full(100, 0.1)
        scores[20:30] = 0.9
        scores[35:45] = 0.9
        segs = scores_to_segments(scores, threshold=0.5, pad_s=0.05, frame_shift_s=0.010)
        assert len(segs) == 1
        assert segs[0] == pytest.approx((0.15, 0.50))

    def test_distant_runs_stay_separate(self):
        scores = np.full(100, 0.1)
        scores[20:30] = 0.9
        scores[35:45] = 0.9
        segs = scores_to_segments(scores, threshold=0.5, pad_s=0.01, frame_shift_s=0.010)
        assert len(segs) == 2
        assert segs[0] == pytest.approx((0.19, 0.31))
        assert segs[1] == pytest.approx((0.34, 0.46))

    def test_all_quiet_gives_no_segments(self):
        assert scores_to_segments(np.full(40, 0.2), threshold=0.5) == []

    def test_threshold_is_strict(self):
        assert scores_to_segments(np.full(40, 0.5), threshold=0.5) == []


class TestApplyMask:
    def test_keeps_frames_inside_segments(self):
        fm = FeatureMatrix(np.arange(100, dtype=np.float64)[:, None], 0.010, "lfb")
        out = apply_mask(fm, [(0.10, 0.20)])
        np.testing.assert_array_equal(out.values[:, 0], np.arange(10, 20))
        assert out.kind == "lfb"

    def test_multiple_segments(self):
        fm = FeatureMatrix(np.arange(100, dtype=np.float64)[:, None], 0.010, "lfb")
        out = apply_mask(fm, [(0.0, 0.05), (0.90, 2.0)])
        np.testing.assert_array_equal(
            out.values[:, 0], np.concatenate([np.arange(5), np.arange(90, 100)])
        )

    def test_nothing_survives(self):
        fm = FeatureMatrix(np.zeros((10, 3)), 0.010, "lfb")
        with pytest.raises(EmptyResult):
            apply_mask(fm, [])
        with pytest.raises(EmptyResult):
            apply_mask(fm, [(5.0, 6.0)])


class TestEnergyLabels:
    def test_tone_with_silent_pads(self):
        rate = 16000
        samples = np.zeros(rate)
        t = np.arange(rate // 2) / rate
        samples[4000:12000] = 0.4 * np.sin(2 * np.pi * 300 * t)
        labels = energy_frame_labels(AudioBuffer(samples, rate))
        assert set(np.unique(labels)) == {0, 1}
        assert labels[0] == 0 and labels[-1] == 0
        assert labels[30] == 1  # frame centered in the tone

    def test_silence_is_all_zero(self):
        labels = energy_frame_labels(AudioBuffer(np.zeros(8000), 16000))
        assert labels.sum() == 0

    def test_threshold_validated(self):
        audio = AudioBuffer(np.ones(8000) * 0.1, 16000)
        with pytest.raises(InvalidConfig):
            energy_frame_labels(audio, rel_threshold=0.0)
        with pytest.raises(InvalidConfig):
            energy_frame_labels(audio, rel_threshold=1.0)


def _separable_rows(n, seed):
    """Rows where column 0 carries the class; labels alternate in halves."""
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 2).astype(np.int64)
    rows = rng.standard_normal((n, 10)) * 0.1
    rows[:, 0] += np.where(labels == 1, 2.0, -2.0)
    return rows, labels


class TestTraining:
    def test_loss_decreases(self):
        rows, labels = _separable_rows(400, seed=0)
        model, history = train_sad(rows, labels, epochs=5, seed=1, hidden_dims=(16, 8))
        assert len(history) == 5
        assert history[-1] < history[0]
        assert all(isinstance(v, float) for v in history)
        post = sad_forward(model, rows).values
        assert np.mean((post > 0.5) == (labels == 1)) > 0.95

    def test_single_class_rejected(self):
        rows = RNG.standard_normal((50, 10))
        with pytest.raises(InsufficientData):
            train_sad(rows, np.zeros(50, dtype=np.int64), epochs=1)

    def test_misaligned_labels(self):
        rows = RNG.standard_normal((50, 10))
        with pytest.raises(DimensionMismatch):
            train_sad(rows, np.zeros(49, dtype=np.int64), epochs=1)


def _fake_mfcc(n_frames, speech_mask, seed):
    """MFCC-like matrix whose first channel jumps during speech."""
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n_frames, 5)) * 0.2
    values[:, 0] += np.where(speech_mask, 3.0, -3.0)
    return FeatureMatrix(values, 0.010, "mfcc")


class TestDetectorEstimator:
    def _fitted(self):
        masks, feats, labels = [], [], []
        for i in range(6):
            mask = np.zeros(120, dtype=bool)
            mask[30:90] = True
            masks.append(mask)
            feats.append(_fake_mfcc(120, mask, seed=i))
            labels.append(mask.astype(np.int64))
        # window longer than the utterance: normalization is global, so the
        # synthetic channel-0 offset survives mid-run
        det = SpeechActivityDetector(
            mvn_window_s=5.0,
            context_frames=5,
            hidden_dims=(16, 8),
            epochs=12,
            batch_size=32,
            seed=0,
        )
        return det.fit(feats, labels)

    def test_fit_predict_finds_speech(self):
        det = self._fitted()
        mask = np.zeros(120, dtype=bool)
        mask[40:80] = True
        segs = det.predict(_fake_mfcc(120, mask, seed=99))
        assert len(segs) >= 1
        lo = min(s for s, _ in segs)
        hi = max(e for _, e in segs)
        assert lo < 0.45 and hi > 0.75  # covers the speech span

    def test_trim_uses_segments(self):
        det = self._fitted()
        mask = np.zeros(120, dtype=bool)
        mask[40:80] = True
        feats = _fake_mfcc(120, mask, seed=5)
        segs = det.predict(feats)
        trimmed = det.trim(feats, segs)
        assert 0 < trimmed.n_frames <= 120

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            SpeechActivityDetector().posteriors(_fake_mfcc(50, np.zeros(50, bool), 1))

    def test_label_alignment_checked(self):
        det = SpeechActivityDetector(context_frames=5, hidden_dims=(8,), epochs=1)
        feats = [_fake_mfcc(50, np.zeros(50, bool), 1)]
        with pytest.raises(DimensionMismatch):
            det.fit(feats, [np.zeros(49, dtype=np.int64)])

    def test_sklearn_clone(self):
        det = clone(SpeechActivityDetector(threshold=0.6, epochs=3))
        params = det.get_params()
        assert params["threshold"] == 0.6
        assert params["epochs"] == 3


class TestSegmentIo:
    def test_roundtrip_exact(self, tmp_path):
        segments = [(0.0, 1.2345678901234567), (2.5, 3.75)]
        path = tmp_path / "u.segments.tsv"
        save_segments(segments, path)
        assert load_segments(path) == segments

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.segments.tsv"
        save_segments([], path)
        assert load_segments(path) == []
