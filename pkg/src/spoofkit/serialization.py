"""Binary file formats: feature archives and the model tensor container.

Feature archive layout (all integers little-endian unsigned 32-bit):

    magic b"SPKF" | version | feature-kind code | T | D | T*D float32

Model container layout:

    magic b"SPKT" | version | model-kind code | config-JSON length |
    config JSON (UTF-8, sorted keys) | tensor count | tensors

    tensor: name length | name UTF-8 | rank | dims | float32 data

Tensors are written sorted by name and the config JSON uses sorted keys
with no whitespace, so identical state serializes byte-identically.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CorruptFile, InvalidConfig, VersionMismatch
from .features import FeatureMatrix

FEATURE_MAGIC = b"SPKF"
TENSOR_MAGIC = b"SPKT"
FORMAT_VERSION = 1

FEATURE_KIND_CODES = {"lfb": 1, "mfcc": 2, "embedding": 3, "score": 4}
_KIND_FROM_CODE = {v: k for k, v in FEATURE_KIND_CODES.items()}

MODEL_KIND_CODES = {"sad": 1, "xresnet": 2, "backend": 3, "gmm": 4}
_MODEL_FROM_CODE = {v: k for k, v in MODEL_KIND_CODES.items()}


def _u32(value):
    return struct.pack("<I", value)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptFile(f"{self.path}: truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def done(self):
        if self.pos != len(self.data):
            raise CorruptFile(f"{self.path}: trailing bytes after payload")


def save_feature_archive(path, features, kind=None):
    """Write one (T, D) matrix as a binary feature archive."""
    if isinstance(features, FeatureMatrix):
        values = features.values
        kind = kind or features.kind
    else:
        values = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if kind is None:
            raise InvalidConfig("kind is required for raw arrays")
    if kind not in FEATURE_KIND_CODES:
        raise InvalidConfig(f"unknown feature kind {kind!r}; expected one of {sorted(FEATURE_KIND_CODES)}")
    t, d = values.shape
    payload = values.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_u32(FORMAT_VERSION))
        fh.write(_u32(FEATURE_KIND_CODES[kind]))
        fh.write(_u32(t))
        fh.write(_u32(d))
        fh.write(payload)


def load_feature_archive(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), str(path))
    if reader.take(4) != FEATURE_MAGIC:
        raise CorruptFile(f"{path}: not a feature archive")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: archive version {version}, expected {FORMAT_VERSION}")
    code = reader.u32()
    if code not in _KIND_FROM_CODE:
        raise CorruptFile(f"{path}: unknown feature kind code {code}")
    t = reader.u32()
    d = reader.u32()
    raw = reader.take(4 * t * d)
    reader.done()
    values = np.frombuffer(raw, dtype="<f4").reshape(t, d).astype(np.float64)
    return FeatureMatrix(values, kind=_KIND_FROM_CODE[code])


def save_model_container(path, model_kind, config, tensors):
    """Write named float tensors plus a JSON config echo."""
    if model_kind not in MODEL_KIND_CODES:
        raise InvalidConfig(f"unknown model kind {model_kind!r}")
    blob = json.dumps(dict(config), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(_u32(FORMAT_VERSION))
        fh.write(_u32(MODEL_KIND_CODES[model_kind]))
        fh.write(_u32(len(blob)))
        fh.write(blob)
        fh.write(_u32(len(tensors)))
        for name in sorted(tensors):
            data = np.asarray(tensors[name])
            encoded = name.encode()
            fh.write(_u32(len(encoded)))
            fh.write(encoded)
            fh.write(_u32(data.ndim))
            for dim in data.shape:
                fh.write(_u32(dim))
            fh.write(data.astype("<f4").tobytes(order="C"))


def load_model_container(path, expect_kind=None):
    """Read (model_kind, config, tensors); tensors come back float64."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), str(path))
    if reader.take(4) != TENSOR_MAGIC:
        raise CorruptFile(f"{path}: not a model container")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: container version {version}, expected {FORMAT_VERSION}")
    code = reader.u32()
    if code not in _MODEL_FROM_CODE:
        raise CorruptFile(f"{path}: unknown model kind code {code}")
    model_kind = _MODEL_FROM_CODE[code]
    if expect_kind is not None and model_kind != expect_kind:
        raise CorruptFile(f"{path}: holds a {model_kind} model, expected {expect_kind}")
    blob = reader.take(reader.u32())
    try:
        config = json.loads(blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable config echo") from exc
    tensors = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode()
        rank = reader.u32()
        shape = tuple(reader.u32() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = reader.take(4 * count)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    reader.done()
    return model_kind, config, tensors


def save_sad_model(path, model, extra_config=None):
    config = {
        "input_dim": int(model.input_dim),
        "layer_dims": [int(w.shape[0]) for w, _ in model.layers],
    }
    if extra_config:
        config.update(extra_config)
    tensors = {}
    for i, (w, b) in enumerate(model.layers):
        tensors[f"layer{i}.w"] = w
        tensors[f"layer{i}.b"] = b
    save_model_container(path, "sad", config, tensors)


def load_sad_model(path):
    from .sad import SadModel

    _, config, tensors = load_model_container(path, expect_kind="sad")
    layers = []
    for i in range(len(config["layer_dims"])):
        try:
            layers.append((tensors[f"layer{i}.w"], tensors[f"layer{i}.b"]))
        except KeyError as exc:
            raise CorruptFile(f"{path}: missing tensor for layer {i}") from exc
    model = SadModel(layers)
    if model.input_dim != int(config["input_dim"]):
        raise CorruptFile(f"{path}: layer shapes disagree with the declared input_dim")
    return model, config


def save_xresnet(path, model, extra_config=None):
    cfg = model.config
    config = {
        "blocks_per_stage": [int(b) for b in cfg.blocks_per_stage],
        "stage_channels": [int(c) for c in cfg.stage_channels],
        "width_multiplier": float(cfg.width_multiplier),
        "se_enabled": bool(cfg.se_enabled),
        "se_reduction": int(cfg.se_reduction),
        "embedding_dim": int(cfg.embedding_dim),
        "input_dim": int(cfg.input_dim),
        "stem_maxpool": bool(cfg.stem_maxpool),
        "alpha": float(cfg.alpha),
        "margin_target": float(cfg.margin_target),
        "margin_spoof": float(cfg.margin_spoof),
    }
    if extra_config:
        config.update(extra_config)
    save_model_container(path, "xresnet", config, model.snapshot())


def load_xresnet(path):
    from .nnet import XResNetConfig, build_xresnet

    _, config, tensors = load_model_container(path, expect_kind="xresnet")
    cfg = XResNetConfig(
        blocks_per_stage=tuple(config["blocks_per_stage"]),
        stage_channels=tuple(config["stage_channels"]),
        width_multiplier=float(config["width_multiplier"]),
        se_enabled=bool(config["se_enabled"]),
        se_reduction=int(config["se_reduction"]),
        embedding_dim=int(config["embedding_dim"]),
        input_dim=int(config["input_dim"]),
        stem_maxpool=bool(config["stem_maxpool"]),
        alpha=float(config["alpha"]),
        margin_target=float(config["margin_target"]),
        margin_spoof=float(config["margin_spoof"]),
    )
    model = build_xresnet(cfg, seed=0)
    try:
        model.load_snapshot(tensors)
    except Exception as exc:
        raise CorruptFile(f"{path}: tensor set does not match the declared shape") from exc
    return model, config


def save_backend_model(path, lda, plda, pristine_stats=None, spoof_stats=None, extra_config=None):
    config = {
        "out_dim": int(lda.out_dim),
        "shrinkage": float(lda.shrinkage),
        "q": int(plda.q),
    }
    if extra_config:
        config.update(extra_config)
    tensors = {
        "lda.mean": lda.mean_,
        "lda.projection": lda.lda_,
        "lda.whitener": lda.whitener_,
        "plda.mu": plda.mu,
        "plda.U": plda.U,
        "plda.Lam": plda.Lam,
    }
    for name, stats in (("pristine", pristine_stats), ("spoof", spoof_stats)):
        if stats is not None:
            tensors[f"enroll.{name}.n"] = np.array(float(stats.n))
            tensors[f"enroll.{name}.f"] = stats.f
            tensors[f"enroll.{name}.quad"] = np.array(float(stats.quad))
    save_model_container(path, "backend", config, tensors)


def load_backend_model(path):
    from .backend import EnrollmentStats, LdaGaussianizer, PldaModel

    _, config, tensors = load_model_container(path, expect_kind="backend")
    required = ["lda.mean", "lda.projection", "lda.whitener", "plda.mu", "plda.U", "plda.Lam"]
    missing = [name for name in required if name not in tensors]
    if missing:
        raise CorruptFile(f"{path}: missing tensors {missing}")
    lda = LdaGaussianizer(out_dim=int(config["out_dim"]), shrinkage=float(config["shrinkage"]))
    lda.mean_ = tensors["lda.mean"]
    lda.lda_ = tensors["lda.projection"]
    lda.whitener_ = tensors["lda.whitener"]
    lam = tensors["plda.Lam"]
    plda = PldaModel(tensors["plda.mu"], tensors["plda.U"], 0.5 * (lam + lam.T))
    stats = {}
    for name in ("pristine", "spoof"):
        if f"enroll.{name}.f" in tensors:
            stats[name] = EnrollmentStats(
                int(round(float(tensors[f"enroll.{name}.n"]))),
                tensors[f"enroll.{name}.f"],
                float(tensors[f"enroll.{name}.quad"]),
            )
    return lda, plda, config, stats


def save_gmm_pair(path, spoof_gmm, pristine_gmm, extra_config=None):
    config = {
        "n_components": int(spoof_gmm.n_components),
        "dim": int(spoof_gmm.dim),
    }
    if extra_config:
        config.update(extra_config)
    tensors = {
        "spoof.weights": spoof_gmm.weights,
        "spoof.means": spoof_gmm.means,
        "spoof.variances": spoof_gmm.variances,
        "pristine.weights": pristine_gmm.weights,
        "pristine.means": pristine_gmm.means,
        "pristine.variances": pristine_gmm.variances,
    }
    save_model_container(path, "gmm", config, tensors)


def load_gmm_pair(path):
    from .backend import GmmModel

    _, config, tensors = load_model_container(path, expect_kind="gmm")
    try:
        spoof = GmmModel(tensors["spoof.weights"], tensors["spoof.means"], tensors["spoof.variances"])
        pristine = GmmModel(
            tensors["pristine.weights"], tensors["pristine.means"], tensors["pristine.variances"]
        )
    except KeyError as exc:
        raise CorruptFile(f"{path}: missing tensor {exc}") from exc
    return spoof, pristine, config
