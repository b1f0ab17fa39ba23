"""One-class margin loss, the embedding network, the optimizer, training."""

import numpy as np
import pytest

from oracles import finite_diff
from spoofkit.errors import (
    DataError,
    DimensionMismatch,
    EmptyFeatures,
    InputTooShort,
    InsufficientData,
    InvalidConfig,
    InvalidMargins,
    ShapeMismatch,
)
from spoofkit.features import FeatureMatrix
from spoofkit.nnet import (
    AdamW,
    OcSoftmaxHead,
    TrainingBatch,
    TrainSettings,
    XResNetConfig,
    backward,
    build_xresnet,
    extract_embeddings,
    format_history,
    forward,
    oc_softmax_loss,
    train,
)
from spoofkit.nnet.training import EpochRecord
from spoofkit.nnet.xresnet import ResidualBlock

RNG = np.random.default_rng(53)


class TestOcSoftmaxLoss:
    def test_score_at_margin_gives_log_two(self):
        loss, _ = oc_softmax_loss([0.9], [0], alpha=20.0, m0=0.9, m1=0.2)
        assert loss == pytest.approx(np.log(2.0), abs=1e-9)
        loss, _ = oc_softmax_loss([0.2], [1], alpha=20.0, m0=0.9, m1=0.2)
        assert loss == pytest.approx(np.log(2.0), abs=1e-9)

    def test_pristine_above_margin(self):
        # z = 20 * (0.9 - 1.0) = -2, softplus(-2) = 0.12692801...
        loss, _ = oc_softmax_loss([1.0], [0], alpha=20.0, m0=0.9, m1=0.2)
        assert loss == pytest.approx(float(np.logaddexp(0.0, -2.0)), abs=1e-9)
        assert loss == pytest.approx(0.126928, abs=1e-6)

    def test_spoof_above_margin_is_penalized(self):
        low, _ = oc_softmax_loss([0.1], [1])
        high, _ = oc_softmax_loss([0.5], [1])
        assert high > low

    def test_batch_loss_is_mean(self):
        scores = [0.95, 0.3, -0.2, 0.85]
        labels = [0, 1, 1, 0]
        total, _ = oc_softmax_loss(scores, labels)
        singles = [oc_softmax_loss([s], [y])[0] for s, y in zip(scores, labels)]
        assert total == pytest.approx(np.mean(singles), rel=1e-12)

    def test_gradient_matches_finite_difference(self):
        scores = RNG.uniform(-1.0, 1.0, 6)
        labels = np.array([0, 1, 0, 1, 1, 0])
        _, grad = oc_softmax_loss(scores, labels)
        numeric = finite_diff(lambda s: oc_softmax_loss(s, labels)[0], scores.copy())
        np.testing.assert_allclose(grad, numeric, atol=1e-7)

    def test_margin_order_enforced(self):
        with pytest.raises(InvalidMargins):
            oc_softmax_loss([0.5], [0], m0=0.2, m1=0.9)

    def test_label_values_checked(self):
        with pytest.raises(DataError):
            oc_softmax_loss([0.5], [2])

    def test_alignment_checked(self):
        with pytest.raises(DimensionMismatch):
            oc_softmax_loss([0.5, 0.6], [0])


class TestOcSoftmaxHead:
    def test_scores_are_cosines(self):
        head = OcSoftmaxHead(8, rng=np.random.default_rng(1), dtype=np.float64)
        emb = RNG.standard_normal((5, 8))
        scores = head.cosine_scores(emb)
        assert np.all(np.abs(scores) <= 1.0 + 1e-12)
        np.testing.assert_allclose(head.cosine_scores(head.w0[None]), 1.0, atol=1e-12)

    def test_zero_embedding_is_finite(self):
        head = OcSoftmaxHead(4, rng=np.random.default_rng(2), dtype=np.float64)
        assert np.isfinite(head.cosine_scores(np.zeros((1, 4)))[0])

    def test_embedding_gradient(self):
        head = OcSoftmaxHead(6, rng=np.random.default_rng(3), dtype=np.float64)
        emb = RNG.standard_normal((4, 6))
        r = RNG.standard_normal(4)
        head.cosine_scores(emb, training=True)
        d_emb = head.backward(r.copy())
        numeric = finite_diff(
            lambda e: float(np.sum(head.cosine_scores(e) * r)), emb.copy()
        )
        np.testing.assert_allclose(d_emb, numeric, atol=1e-7)

    def test_direction_gradient(self):
        head = OcSoftmaxHead(6, rng=np.random.default_rng(4), dtype=np.float64)
        emb = RNG.standard_normal((4, 6))
        r = RNG.standard_normal(4)
        head.zero_grad()
        head.cosine_scores(emb, training=True)
        head.backward(r.copy())

        def loss(w):
            head.w0[...] = w
            return float(np.sum(head.cosine_scores(emb) * r))

        keep = head.w0.copy()
        numeric = finite_diff(loss, keep.copy())
        head.w0[...] = keep
        np.testing.assert_allclose(head.gw0, numeric, atol=1e-7)

    def test_margin_order_enforced(self):
        with pytest.raises(InvalidMargins):
            OcSoftmaxHead(4, m0=0.1, m1=0.2)


def _tiny_config(**overrides):
    params = dict(
        blocks_per_stage=(1, 1, 1, 1),
        stage_channels=(4, 4, 4, 4),
        width_multiplier=1.0,
        se_enabled=False,
        embedding_dim=4,
        input_dim=8,
        stem_maxpool=False,
    )
    params.update(overrides)
    return XResNetConfig(**params)


class TestXResNetConfig:
    def test_scaled_channels(self):
        cfg = XResNetConfig(width_multiplier=0.25)
        assert cfg.scaled_channels() == (16, 32, 64, 128)
        assert XResNetConfig(width_multiplier=1.0).scaled_channels() == (64, 128, 256, 512)

    def test_half_widths_round_up(self):
        cfg = XResNetConfig(stage_channels=(2, 2, 2, 2), width_multiplier=0.25)
        assert cfg.scaled_channels() == (1, 1, 1, 1)
        cfg = XResNetConfig(stage_channels=(6, 6, 6, 6), width_multiplier=0.25)
        assert cfg.scaled_channels() == (2, 2, 2, 2)  # 1.5 -> 2

    def test_channels_never_vanish(self):
        cfg = XResNetConfig(width_multiplier=0.001)
        assert cfg.scaled_channels() == (1, 1, 1, 1)

    def test_min_frames(self):
        assert XResNetConfig(stem_maxpool=True).min_frames == 32
        assert XResNetConfig(stem_maxpool=False).min_frames == 16

    def test_validation(self):
        with pytest.raises(InvalidConfig):
            XResNetConfig(blocks_per_stage=(1, 1, 1)).validate()
        with pytest.raises(InvalidConfig):
            XResNetConfig(width_multiplier=0.0).validate()
        with pytest.raises(InvalidConfig):
            XResNetConfig(embedding_dim=0).validate()


class TestModelStructure:
    def test_parameter_count_quarter_width(self):
        # capacity regression: freezes the architecture wiring
        model = build_xresnet(
            XResNetConfig(width_multiplier=0.25, se_reduction=4), seed=0
        )
        assert model.n_parameters() == 807512

    def test_stem_conv_weight_count(self):
        # 3x3 convs at 1->32, 32->32, 32->64: 288 + 9216 + 18432 weights
        model = build_xresnet(XResNetConfig(se_enabled=False), seed=0)
        stem_w = sum(
            p.size
            for name, p in model.params().items()
            if name.startswith("stem.") and name.endswith(".w")
        )
        assert stem_w == 288 + 9216 + 18432

    def test_embedding_shape(self):
        model = build_xresnet(_tiny_config(), seed=0)
        emb = model.forward_batch(RNG.standard_normal((3, 1, 8, 16)))
        assert emb.shape == (3, 4)

    def test_time_extent_after_downsampling(self):
        model = build_xresnet(XResNetConfig(width_multiplier=0.25), seed=0)
        _, premap = model.forward_batch(
            RNG.standard_normal((1, 1, 70, 500)), return_premap=True
        )
        assert premap[3] == 16  # 500 -> 250 -> 125 -> 63 -> 32 -> 16

    def test_frequency_extent_chain(self):
        # 8 -> 4 (stem) -> 2 -> 1 -> 1 across the strided stages
        model = build_xresnet(_tiny_config(), seed=0)
        _, premap = model.forward_batch(
            RNG.standard_normal((1, 1, 8, 16)), return_premap=True
        )
        assert premap[2] == 1

    def test_too_few_frames_rejected(self):
        model = build_xresnet(_tiny_config(), seed=0)
        with pytest.raises(InputTooShort):
            model.forward_batch(RNG.standard_normal((1, 1, 8, 15)))

    def test_input_dim_checked(self):
        model = build_xresnet(_tiny_config(), seed=0)
        with pytest.raises(DimensionMismatch):
            model.forward_batch(RNG.standard_normal((1, 1, 9, 16)))

    def test_block_is_identity_at_init(self):
        # zero-gamma second norm kills the residual branch at init
        block = ResidualBlock(
            4, 4, stride=1, se_enabled=False, se_reduction=4,
            rng=np.random.default_rng(0), dtype=np.float64,
        )
        x = RNG.standard_normal((2, 4, 5, 6))
        np.testing.assert_allclose(block.forward(x, training=True), np.maximum(x, 0.0))

    def test_snapshot_roundtrip(self):
        model = build_xresnet(_tiny_config(), seed=0)
        x = RNG.standard_normal((2, 1, 8, 16))
        before = model.forward_batch(x)
        state = model.snapshot()
        for p in model.params().values():
            p += 1.0
        assert not np.allclose(model.forward_batch(x), before)
        model.load_snapshot(state)
        np.testing.assert_array_equal(model.forward_batch(x), before)

    def test_snapshot_missing_key(self):
        model = build_xresnet(_tiny_config(), seed=0)
        state = model.snapshot()
        state.pop(next(iter(state)))
        with pytest.raises(DimensionMismatch):
            model.load_snapshot(state)


class TestForwardHelper:
    def test_crop_and_feature_matrix_agree(self):
        model = build_xresnet(_tiny_config(), seed=1)
        values = RNG.standard_normal((20, 8))
        emb_a, score_a = forward(model, FeatureMatrix(values, 0.010, "lfb"))
        emb_b, score_b = forward(model, values.T)
        np.testing.assert_array_equal(emb_a, emb_b)
        assert score_a == score_b
        assert emb_a.shape == (4,)
        assert isinstance(score_a, float)

    def test_loss_and_grads_cover_all_params(self):
        model = build_xresnet(_tiny_config(), seed=1)
        batch = TrainingBatch(RNG.standard_normal((4, 8, 16)), [0, 1, 0, 1])
        loss, grads = backward(model, batch)
        assert np.isfinite(loss)
        assert set(grads) == set(model.params())

    def test_training_batch_validation(self):
        with pytest.raises(DimensionMismatch):
            TrainingBatch(np.zeros((4, 8)), [0, 1])
        with pytest.raises(DimensionMismatch):
            TrainingBatch(np.zeros((2, 8, 16)), [0])


class TestExtractEmbeddings:
    def _model(self):
        return build_xresnet(_tiny_config(), seed=2)

    def test_window_and_shift_counts(self):
        embs, padded = extract_embeddings(
            self._model(), RNG.standard_normal((120, 8)), window=100, shift=10
        )
        assert embs.shape == (3, 4)  # starts 0, 10, 20
        assert padded is False

    def test_exact_fit_single_window(self):
        embs, padded = extract_embeddings(
            self._model(), RNG.standard_normal((100, 8)), window=100, shift=10
        )
        assert embs.shape == (1, 4)
        assert padded is False

    def test_short_input_zero_padded(self):
        feats = RNG.standard_normal((50, 8))
        embs, padded = extract_embeddings(self._model(), feats, window=100, shift=10)
        assert embs.shape == (1, 4)
        assert padded is True
        padded_feats = np.zeros((100, 8))
        padded_feats[:50] = feats
        manual = self._model().forward_batch(
            padded_feats.T[None, None].astype(np.float32)
        )
        np.testing.assert_allclose(embs, manual, atol=1e-6)

    def test_validation(self):
        model = self._model()
        with pytest.raises(EmptyFeatures):
            extract_embeddings(model, np.zeros((0, 8)))
        with pytest.raises(DimensionMismatch):
            extract_embeddings(model, np.zeros((50, 9)), window=20)
        with pytest.raises(InvalidConfig):
            extract_embeddings(model, np.zeros((50, 8)), window=8)
        with pytest.raises(InvalidConfig):
            extract_embeddings(model, np.zeros((50, 8)), window=20, shift=0)


class TestAdamW:
    def test_first_step_closed_form(self):
        lr, wd, eps = 0.01, 0.1, 1e-5
        p = np.array([1.0, -2.0, 3.0])
        g = np.array([0.5, -0.25, 1.0])
        opt = AdamW(learning_rate=lr, betas=(0.9, 0.99), eps=eps, weight_decay=wd)
        params = {"p": p}
        opt.step(params, {"p": g.copy()})
        # bias-corrected m_hat = g and v_hat = g * g on step one
        expected = np.array([1.0, -2.0, 3.0]) * (1 - lr * wd) - lr * g / (np.abs(g) + eps)
        np.testing.assert_allclose(p, expected, rtol=1e-12)

    def test_decay_is_decoupled_from_gradient(self):
        p = np.array([2.0])
        opt = AdamW(learning_rate=0.1, weight_decay=0.5)
        opt.step({"p": p}, {"p": np.array([0.0])})
        assert p[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))

    def test_zero_decay_leaves_magnitude_to_gradient(self):
        p = np.array([2.0])
        opt = AdamW(learning_rate=0.1, weight_decay=0.0)
        opt.step({"p": p}, {"p": np.array([0.0])})
        assert p[0] == 2.0

    def test_momentum_state_persists(self):
        p1 = np.array([1.0])
        opt1 = AdamW(learning_rate=0.01, weight_decay=0.0)
        opt1.step({"p": p1}, {"p": np.array([1.0])})
        first_delta = 1.0 - p1[0]
        opt1.step({"p": p1}, {"p": np.array([0.0])})
        # momentum keeps moving p even with a zero gradient
        assert (1.0 - first_delta) - p1[0] > 0.0

    def test_updates_in_place(self):
        p = np.array([1.0])
        opt = AdamW()
        params = {"p": p}
        opt.step(params, {"p": np.array([1.0])})
        assert params["p"] is p

    def test_shape_mismatch(self):
        opt = AdamW()
        with pytest.raises(ShapeMismatch):
            opt.step({"p": np.zeros(3)}, {"p": np.zeros(4)})


def _toy_corpus(n_train=8, n_dev=4, frames=20, dim=8, seed=0):
    rng = np.random.default_rng(seed)

    def utt(label):
        base = rng.standard_normal((frames, dim)) * 0.2
        base[:, : dim // 2] += 2.0 if label == 0 else -2.0
        return base

    train_y = np.array([i % 2 for i in range(n_train)])
    dev_y = np.array([i % 2 for i in range(n_dev)])
    return (
        [utt(y) for y in train_y],
        train_y,
        [utt(y) for y in dev_y],
        dev_y,
    )


def _toy_settings(**overrides):
    params = dict(
        batch_size=4, max_epochs=3, patience=12, crop_frames=16,
        learning_rate=1e-3, n_masks=1, mask_max_width=3,
    )
    params.update(overrides)
    return TrainSettings(**params)


class TestTrainLoop:
    def test_runs_and_records_history(self):
        model = build_xresnet(_tiny_config(), seed=3)
        tx, ty, dx, dy = _toy_corpus()
        model, history = train(model, tx, ty, dx, dy, _toy_settings(), seed=5)
        assert [rec.epoch for rec in history] == [1, 2, 3]
        assert all(np.isfinite(rec.train_loss) for rec in history)
        assert all(0.0 <= rec.dev_eer <= 1.0 for rec in history)
        assert history[0].improved  # first epoch always beats +inf

    def test_deterministic_given_seed(self):
        tx, ty, dx, dy = _toy_corpus()
        runs = []
        for _ in range(2):
            model = build_xresnet(_tiny_config(), seed=3)
            model, history = train(model, tx, ty, dx, dy, _toy_settings(), seed=5)
            runs.append((history, {k: v.copy() for k, v in model.params().items()}))
        assert [
            (r.epoch, r.train_loss, r.dev_eer, r.improved) for r in runs[0][0]
        ] == [(r.epoch, r.train_loss, r.dev_eer, r.improved) for r in runs[1][0]]
        for key in runs[0][1]:
            np.testing.assert_array_equal(runs[0][1][key], runs[1][1][key])

    def test_patience_zero_stops_after_first_plateau(self):
        model = build_xresnet(_tiny_config(), seed=3)
        tx, ty, dx, dy = _toy_corpus()
        _, history = train(
            model, tx, ty, dx, dy, _toy_settings(max_epochs=30, patience=0), seed=5
        )
        stale = [rec for rec in history if not rec.improved]
        if stale:  # loop must have stopped right at the first plateau
            assert not history[-1].improved
            assert all(rec.improved for rec in history[:-1])

    def test_crop_below_model_minimum(self):
        model = build_xresnet(_tiny_config(), seed=3)
        tx, ty, dx, dy = _toy_corpus()
        with pytest.raises(InvalidConfig):
            train(model, tx, ty, dx, dy, _toy_settings(crop_frames=8), seed=5)

    def test_dev_needs_both_classes(self):
        model = build_xresnet(_tiny_config(), seed=3)
        tx, ty, dx, dy = _toy_corpus()
        with pytest.raises(InsufficientData):
            train(model, tx, ty, dx, np.zeros_like(dy), _toy_settings(), seed=5)

    def test_empty_train_rejected(self):
        model = build_xresnet(_tiny_config(), seed=3)
        _, _, dx, dy = _toy_corpus()
        with pytest.raises(InsufficientData):
            train(model, [], [], dx, dy, _toy_settings(), seed=5)


class TestFormatHistory:
    def test_exact_rendering(self):
        history = [
            EpochRecord(1, 0.5, 0.25, True),
            EpochRecord(2, 0.4, 0.3, False),
        ]
        assert format_history(history) == (
            "epoch 1 train_loss 0.5 dev_eer 0.25 *\n"
            "epoch 2 train_loss 0.4 dev_eer 0.3\n"
            "best epoch 1 dev_eer 0.25\n"
        )

    def test_best_prefers_earliest_on_ties(self):
        history = [
            EpochRecord(1, 0.5, 0.2, True),
            EpochRecord(2, 0.4, 0.2, False),
        ]
        assert format_history(history).endswith("best epoch 1 dev_eer 0.2\n")
