"""Binary feature archives and the model tensor container."""

import numpy as np
import pytest

from spoofkit.backend import (
    GmmModel,
    LdaGaussianizer,
    PldaModel,
    plda_llr,
    train_gmm_em,
    train_plda_em,
)
from spoofkit.errors import CorruptFile, InvalidConfig, VersionMismatch
from spoofkit.features import FeatureMatrix
from spoofkit.nnet import XResNetConfig, build_xresnet
from spoofkit.sad import init_sad_model, sad_forward
from spoofkit.serialization import (
    FEATURE_KIND_CODES,
    load_backend_model,
    load_feature_archive,
    load_gmm_pair,
    load_model_container,
    load_sad_model,
    load_xresnet,
    save_backend_model,
    save_feature_archive,
    save_gmm_pair,
    save_model_container,
    save_sad_model,
    save_xresnet,
)

RNG = np.random.default_rng(71)


class TestFeatureArchive:
    def test_roundtrip(self, tmp_path):
        values = RNG.standard_normal((13, 7))
        path = tmp_path / "a.lfb.spkf"
        save_feature_archive(path, FeatureMatrix(values, 0.010, "lfb"))
        loaded = load_feature_archive(path)
        assert loaded.kind == "lfb"
        np.testing.assert_array_equal(loaded.values, values.astype(np.float32))

    def test_all_kind_codes(self, tmp_path):
        for kind in FEATURE_KIND_CODES:
            path = tmp_path / f"x.{kind}.spkf"
            save_feature_archive(path, RNG.standard_normal((3, 2)), kind=kind)
            assert load_feature_archive(path).kind == kind

    def test_double_save_is_byte_identical(self, tmp_path):
        values = RNG.standard_normal((20, 5))
        a = tmp_path / "a.spkf"
        b = tmp_path / "b.spkf"
        save_feature_archive(a, values, kind="mfcc")
        save_feature_archive(b, values, kind="mfcc")
        assert a.read_bytes() == b.read_bytes()

    def test_raw_array_requires_kind(self, tmp_path):
        with pytest.raises(InvalidConfig):
            save_feature_archive(tmp_path / "x.spkf", np.zeros((2, 2)))

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(InvalidConfig):
            save_feature_archive(tmp_path / "x.spkf", np.zeros((2, 2)), kind="plp")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.spkf"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(CorruptFile, match="not a feature archive"):
            load_feature_archive(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.spkf"
        save_feature_archive(path, RNG.standard_normal((4, 4)), kind="lfb")
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(CorruptFile, match="truncated"):
            load_feature_archive(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "t.spkf"
        save_feature_archive(path, RNG.standard_normal((4, 4)), kind="lfb")
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CorruptFile, match="trailing"):
            load_feature_archive(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v.spkf"
        save_feature_archive(path, RNG.standard_normal((2, 2)), kind="lfb")
        data = bytearray(path.read_bytes())
        data[4] = 9  # version field
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatch):
            load_feature_archive(path)

    def test_unknown_kind_code(self, tmp_path):
        path = tmp_path / "k.spkf"
        save_feature_archive(path, RNG.standard_normal((2, 2)), kind="lfb")
        data = bytearray(path.read_bytes())
        data[8] = 200  # kind code field
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptFile, match="kind code"):
            load_feature_archive(path)


class TestModelContainer:
    def test_roundtrip_with_scalar_tensor(self, tmp_path):
        path = tmp_path / "m.spkt"
        tensors = {"a": RNG.standard_normal((3, 2)), "b.n": np.array(5.0)}
        save_model_container(path, "backend", {"q": 2}, tensors)
        kind, config, loaded = load_model_container(path)
        assert kind == "backend"
        assert config == {"q": 2}
        assert loaded["b.n"].shape == ()
        assert float(loaded["b.n"]) == 5.0
        np.testing.assert_array_equal(loaded["a"], tensors["a"].astype(np.float32))

    def test_config_key_order_irrelevant(self, tmp_path):
        a = tmp_path / "a.spkt"
        b = tmp_path / "b.spkt"
        save_model_container(a, "sad", {"x": 1, "y": 2}, {})
        save_model_container(b, "sad", {"y": 2, "x": 1}, {})
        assert a.read_bytes() == b.read_bytes()

    def test_expect_kind_mismatch(self, tmp_path):
        path = tmp_path / "m.spkt"
        save_model_container(path, "sad", {}, {})
        with pytest.raises(CorruptFile, match="holds a sad model"):
            load_model_container(path, expect_kind="gmm")

    def test_unknown_model_kind(self, tmp_path):
        with pytest.raises(InvalidConfig):
            save_model_container(tmp_path / "m.spkt", "tree", {}, {})

    def test_feature_archive_is_not_a_container(self, tmp_path):
        path = tmp_path / "a.spkf"
        save_feature_archive(path, np.zeros((2, 2)), kind="lfb")
        with pytest.raises(CorruptFile, match="not a model container"):
            load_model_container(path)


class TestSadModelIo:
    def test_roundtrip_preserves_posteriors(self, tmp_path):
        model = init_sad_model(input_dim=30, hidden_dims=(16, 8), seed=0)
        path = tmp_path / "sad.spkt"
        save_sad_model(path, model, extra_config={"seed": 3})
        loaded, config = load_sad_model(path)
        assert config["seed"] == 3
        assert config["input_dim"] == 30
        x = RNG.standard_normal((5, 30)).astype(np.float32).astype(np.float64)
        np.testing.assert_allclose(
            sad_forward(loaded, x).values, sad_forward(model, x).values, atol=1e-6
        )

    def test_declared_input_dim_checked(self, tmp_path):
        model = init_sad_model(input_dim=30, hidden_dims=(16,), seed=0)
        path = tmp_path / "sad.spkt"
        save_sad_model(path, model)
        # corrupt the config by rewriting with a wrong declared dim
        from spoofkit.serialization import load_model_container as lmc

        _, config, tensors = lmc(path)
        config["input_dim"] = 31
        save_model_container(path, "sad", config, tensors)
        with pytest.raises(CorruptFile, match="input_dim"):
            load_sad_model(path)


class TestXresnetIo:
    def _tiny(self):
        return XResNetConfig(
            blocks_per_stage=(1, 1, 1, 1),
            stage_channels=(4, 4, 4, 4),
            se_enabled=False,
            embedding_dim=4,
            input_dim=8,
            stem_maxpool=False,
        )

    def test_roundtrip_forward_bitwise_equal(self, tmp_path):
        model = build_xresnet(self._tiny(), seed=1)
        path = tmp_path / "net.spkt"
        save_xresnet(path, model, extra_config={"seed": 1})
        loaded, config = load_xresnet(path)
        assert config["seed"] == 1
        x = RNG.standard_normal((2, 1, 8, 16)).astype(np.float32)
        # parameters are float32 on both sides, so the cast loses nothing
        np.testing.assert_array_equal(
            loaded.forward_batch(x), model.forward_batch(x)
        )

    def test_running_stats_roundtrip(self, tmp_path):
        model = build_xresnet(self._tiny(), seed=1)
        model.forward_batch(
            RNG.standard_normal((2, 1, 8, 16)).astype(np.float32), training=True
        )
        path = tmp_path / "net.spkt"
        save_xresnet(path, model)
        loaded, _ = load_xresnet(path)
        for key, value in model.buffers().items():
            np.testing.assert_array_equal(loaded.buffers()[key], value)

    def test_missing_tensor_rejected(self, tmp_path):
        model = build_xresnet(self._tiny(), seed=1)
        path = tmp_path / "net.spkt"
        save_xresnet(path, model)
        _, config, tensors = load_model_container(path)
        tensors.pop("embed.w")
        save_model_container(path, "xresnet", config, tensors)
        with pytest.raises(CorruptFile, match="tensor set"):
            load_xresnet(path)


def _fitted_backend(seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.standard_normal((40, 6)) + c * 3.0 for c in range(4)])
    y = np.repeat(np.arange(4), 40)
    lda = LdaGaussianizer(out_dim=3).fit(x, y)
    z = lda.transform(x)
    plda = train_plda_em(z, y, q=2, n_iters=10, seed=seed)
    return lda, plda, z, y


class TestBackendIo:
    def test_roundtrip_scores_close(self, tmp_path):
        lda, plda, z, y = _fitted_backend()
        pristine = plda.enrollment_stats(z[y == 0])
        spoof = plda.enrollment_stats(z[y == 1])
        path = tmp_path / "backend.spkt"
        save_backend_model(
            path, lda, plda, pristine_stats=pristine, spoof_stats=spoof,
            extra_config={"seed": 0},
        )
        lda2, plda2, config, stats = load_backend_model(path)
        assert config["q"] == 2 and config["out_dim"] == 3 and config["seed"] == 0
        assert stats["pristine"].n == pristine.n
        assert stats["spoof"].n == spoof.n
        test = z[100]
        # float32 storage: scores agree to storage precision only
        assert plda_llr(plda2, stats["pristine"], test) == pytest.approx(
            plda_llr(plda, pristine, test), rel=1e-3, abs=1e-3
        )

    def test_stats_optional(self, tmp_path):
        lda, plda, _, _ = _fitted_backend()
        path = tmp_path / "backend.spkt"
        save_backend_model(path, lda, plda)
        _, _, _, stats = load_backend_model(path)
        assert stats == {}

    def test_missing_core_tensor(self, tmp_path):
        lda, plda, _, _ = _fitted_backend()
        path = tmp_path / "backend.spkt"
        save_backend_model(path, lda, plda)
        _, config, tensors = load_model_container(path)
        tensors.pop("plda.U")
        save_model_container(path, "backend", config, tensors)
        with pytest.raises(CorruptFile, match="missing tensors"):
            load_backend_model(path)


class TestGmmIo:
    def test_roundtrip(self, tmp_path):
        x = RNG.standard_normal((100, 3))
        spoof = train_gmm_em(x + 1.0, n_components=2, n_iters=3, seed=0)
        pristine = train_gmm_em(x - 1.0, n_components=2, n_iters=3, seed=0)
        path = tmp_path / "gmm.spkt"
        save_gmm_pair(path, spoof, pristine, extra_config={"seed": 0})
        spoof2, pristine2, config = load_gmm_pair(path)
        assert config["n_components"] == 2 and config["dim"] == 3
        test = RNG.standard_normal((10, 3))
        np.testing.assert_allclose(
            spoof2.frame_log_likelihood(test),
            spoof.frame_log_likelihood(test),
            rtol=1e-5,
        )
        np.testing.assert_allclose(
            pristine2.frame_log_likelihood(test),
            pristine.frame_log_likelihood(test),
            rtol=1e-5,
        )

    def test_variance_floor_survives_float32(self, tmp_path):
        # variances exactly at the floor must roundtrip through float32
        model = GmmModel(
            np.array([1.0]), np.zeros((1, 2)), np.full((1, 2), 1e-6)
        )
        path = tmp_path / "gmm.spkt"
        save_gmm_pair(path, model, model)
        spoof, pristine, _ = load_gmm_pair(path)
        assert np.all(spoof.variances >= 1e-6)

    def test_missing_tensor(self, tmp_path):
        x = RNG.standard_normal((50, 2))
        model = train_gmm_em(x, n_components=2, n_iters=1, seed=0)
        path = tmp_path / "gmm.spkt"
        save_gmm_pair(path, model, model)
        _, config, tensors = load_model_container(path)
        tensors.pop("pristine.means")
        save_model_container(path, "gmm", config, tensors)
        with pytest.raises(CorruptFile, match="missing tensor"):
            load_gmm_pair(path)
