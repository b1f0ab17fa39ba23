"""Residual embedding network over filterbank features.

Input is a single-channel (1, n_filters, n_frames) image per utterance
crop. A fixed three-conv stem downsamples time and frequency once (plus
an optional max-pool for a second downsampling), followed by four
residual stages, statistics pooling over time, and a linear projection
to the embedding space. A one-class margin head on top scores cosines
against a learned target direction.

All layers carry manual backward passes; no autograd framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, EmptyFeatures, InputTooShort, InvalidConfig
from ..features import FeatureMatrix
from ..validation import ensure_rng
from .layers import AvgPool2x2, BatchNorm2d, Conv2d, Dense, MaxPool2d, ReLU, SEBlock, StatPool
from .losses import OcSoftmaxHead

_STEM_CHANNELS = (32, 32, 64)
_INFER_BATCH = 32


@dataclass
class XResNetConfig:
    blocks_per_stage: tuple = (2, 2, 2, 2)
    stage_channels: tuple = (64, 128, 256, 512)
    width_multiplier: float = 1.0
    se_enabled: bool = True
    se_reduction: int = 16
    embedding_dim: int = 64
    input_dim: int = 70
    stem_maxpool: bool = True
    alpha: float = 20.0
    margin_target: float = 0.9
    margin_spoof: float = 0.2

    def validate(self):
        if len(self.blocks_per_stage) != 4 or any(int(b) < 1 for b in self.blocks_per_stage):
            raise InvalidConfig("blocks_per_stage must be four positive counts")
        if len(self.stage_channels) != 4 or any(int(c) < 1 for c in self.stage_channels):
            raise InvalidConfig("stage_channels must be four positive widths")
        if not self.width_multiplier > 0:
            raise InvalidConfig("width_multiplier must be positive")
        if int(self.embedding_dim) < 1:
            raise InvalidConfig("embedding_dim must be positive")
        if int(self.input_dim) < 1:
            raise InvalidConfig("input_dim must be positive")
        if int(self.se_reduction) < 1:
            raise InvalidConfig("se_reduction must be positive")

    def scaled_channels(self):
        # floor(x + 0.5) keeps halves rounding up regardless of parity
        return tuple(
            max(1, int(np.floor(c * self.width_multiplier + 0.5))) for c in self.stage_channels
        )

    @property
    def min_frames(self):
        return 32 if self.stem_maxpool else 16


@dataclass
class TrainingBatch:
    features: np.ndarray  # (n, input_dim, frames)
    labels: np.ndarray  # (n,) 0 pristine / 1 spoof

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 3:
            raise DimensionMismatch("batch features must be (n, dim, frames)")
        if len(self.labels) != len(self.features):
            raise DimensionMismatch("batch labels must align with features")

    def __len__(self):
        return len(self.features)


class ResidualBlock:
    """conv-bn-relu-conv-bn(+se) branch added to an identity path."""

    def __init__(self, in_ch, out_ch, stride, se_enabled, se_reduction, rng, dtype):
        self.conv1 = Conv2d(in_ch, out_ch, kernel=3, stride=stride, padding=1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_ch, out_ch, kernel=3, stride=1, padding=1, rng=rng, dtype=dtype)
        # zero gamma makes the branch vanish at init, so the block starts
        # as identity and residuals grow in during training
        self.bn2 = BatchNorm2d(out_ch, gamma_init=0.0, dtype=dtype)
        self.se = SEBlock(out_ch, se_reduction, rng=rng, dtype=dtype) if se_enabled else None
        if stride != 1 or in_ch != out_ch:
            self.id_pool = AvgPool2x2() if stride == 2 else None
            self.id_conv = Conv2d(in_ch, out_ch, kernel=1, stride=1, padding=0, rng=rng, dtype=dtype)
            self.id_bn = BatchNorm2d(out_ch, dtype=dtype)
        else:
            self.id_pool = None
            self.id_conv = None
            self.id_bn = None
        self.relu_out = ReLU()

    def sublayers(self):
        named = [
            ("conv1", self.conv1),
            ("bn1", self.bn1),
            ("conv2", self.conv2),
            ("bn2", self.bn2),
        ]
        if self.se is not None:
            named.append(("se", self.se))
        if self.id_conv is not None:
            named.append(("downsample.conv", self.id_conv))
            named.append(("downsample.bn", self.id_bn))
        return named

    def forward(self, x, training=False):
        h = self.conv1.forward(x, training)
        h = self.bn1.forward(h, training)
        h = self.relu1.forward(h, training)
        h = self.conv2.forward(h, training)
        h = self.bn2.forward(h, training)
        if self.se is not None:
            h = self.se.forward(h, training)
        if self.id_conv is not None:
            idn = x if self.id_pool is None else self.id_pool.forward(x, training)
            idn = self.id_conv.forward(idn, training)
            idn = self.id_bn.forward(idn, training)
        else:
            idn = x
        return self.relu_out.forward(h + idn, training)

    def backward(self, dy):
        d = self.relu_out.backward(dy)
        t = self.se.backward(d) if self.se is not None else d
        t = self.bn2.backward(t)
        t = self.conv2.backward(t)
        t = self.relu1.backward(t)
        t = self.bn1.backward(t)
        dx = self.conv1.backward(t)
        if self.id_conv is not None:
            s = self.id_bn.backward(d)
            s = self.id_conv.backward(s)
            if self.id_pool is not None:
                s = self.id_pool.backward(s)
            dx = dx + s
        else:
            dx = dx + d
        return dx


class XResNetModel:
    def __init__(self, config: XResNetConfig, seed=0, dtype=np.float32):
        config.validate()
        rng = ensure_rng(seed)
        self.config = config
        self.dtype = dtype

        c1, c2, c3 = _STEM_CHANNELS
        stem = [
            ("stem.conv1", Conv2d(1, c1, kernel=3, stride=2, padding=1, rng=rng, dtype=dtype)),
            ("stem.bn1", BatchNorm2d(c1, dtype=dtype)),
            ("stem.relu1", ReLU()),
            ("stem.conv2", Conv2d(c1, c2, kernel=3, stride=1, padding=1, rng=rng, dtype=dtype)),
            ("stem.bn2", BatchNorm2d(c2, dtype=dtype)),
            ("stem.relu2", ReLU()),
            ("stem.conv3", Conv2d(c2, c3, kernel=3, stride=1, padding=1, rng=rng, dtype=dtype)),
            ("stem.bn3", BatchNorm2d(c3, dtype=dtype)),
            ("stem.relu3", ReLU()),
        ]
        if config.stem_maxpool:
            stem.append(("stem.pool", MaxPool2d(kernel=3, stride=2, padding=1)))
        self.stem = stem

        channels = config.scaled_channels()
        self.blocks = []
        in_ch = c3
        for si, n_blocks in enumerate(config.blocks_per_stage):
            for bi in range(int(n_blocks)):
                stride = 2 if (si > 0 and bi == 0) else 1
                name = f"stage{si + 1}.block{bi + 1}"
                block = ResidualBlock(
                    in_ch, channels[si], stride, config.se_enabled, config.se_reduction, rng, dtype
                )
                self.blocks.append((name, block))
                in_ch = channels[si]

        self.pool = StatPool()
        pooled_dim = 2 * channels[3] * self._freq_extent()
        self.embed = Dense(pooled_dim, config.embedding_dim, rng=rng, dtype=dtype)
        self.head = OcSoftmaxHead(
            config.embedding_dim,
            alpha=config.alpha,
            m0=config.margin_target,
            m1=config.margin_spoof,
            rng=rng,
            dtype=dtype,
        )

    def _freq_extent(self):
        h = int(self.config.input_dim)
        h = (h - 1) // 2 + 1  # stem conv1, stride 2
        if self.config.stem_maxpool:
            h = (h - 1) // 2 + 1
        for _ in range(3):  # stages 2-4 stride once each
            h = (h - 1) // 2 + 1
        return h

    @property
    def min_frames(self):
        return self.config.min_frames

    @property
    def embedding_dim(self):
        return int(self.config.embedding_dim)

    def _walk(self):
        for name, layer in self.stem:
            yield name, layer
        for bname, block in self.blocks:
            for sub, layer in block.sublayers():
                yield f"{bname}.{sub}", layer
        yield "embed", self.embed

    def params(self):
        out = {}
        for name, layer in self._walk():
            for key, value in layer.params().items():
                out[f"{name}.{key}"] = value
        for key, value in self.head.params().items():
            out[f"head.{key}"] = value
        return out

    def grads(self):
        out = {}
        for name, layer in self._walk():
            for key, value in layer.grads().items():
                out[f"{name}.{key}"] = value
        for key, value in self.head.grads().items():
            out[f"head.{key}"] = value
        return out

    def buffers(self):
        out = {}
        for name, layer in self._walk():
            for key, value in layer.buffers().items():
                out[f"{name}.{key}"] = value
        return out

    def zero_grad(self):
        for _, layer in self._walk():
            layer.zero_grad()
        self.head.zero_grad()

    def n_parameters(self):
        return int(sum(p.size for p in self.params().values()))

    def forward_batch(self, x, training=False, return_premap=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != 1:
            raise DimensionMismatch("expected (n, 1, dim, frames) input")
        if x.shape[2] != self.config.input_dim:
            raise DimensionMismatch(
                f"expected {self.config.input_dim} feature channels, got {x.shape[2]}"
            )
        if x.shape[3] < self.min_frames:
            raise InputTooShort(
                f"need at least {self.min_frames} frames, got {x.shape[3]}"
            )
        h = x
        for _, layer in self.stem:
            h = layer.forward(h, training)
        for _, block in self.blocks:
            h = block.forward(h, training)
        premap_shape = h.shape
        h = self.pool.forward(h, training)
        emb = self.embed.forward(h, training)
        if return_premap:
            return emb, premap_shape
        return emb

    def backward_batch(self, d_emb):
        d = self.embed.backward(d_emb)
        d = self.pool.backward(d)
        for _, block in reversed(self.blocks):
            d = block.backward(d)
        for _, layer in reversed(self.stem):
            d = layer.backward(d)
        return d

    def snapshot(self):
        state = {k: v.copy() for k, v in self.params().items()}
        state.update({k: v.copy() for k, v in self.buffers().items()})
        return state

    def load_snapshot(self, state):
        live = dict(self.params())
        live.update(self.buffers())
        for key, value in live.items():
            if key not in state:
                raise DimensionMismatch(f"snapshot missing tensor {key}")
            saved = np.asarray(state[key])
            if saved.shape != value.shape:
                raise DimensionMismatch(f"snapshot shape mismatch for {key}")
            value[...] = saved  # write through so optimizer state stays attached


def build_xresnet(config=None, seed=0, dtype=np.float32):
    if config is None:
        config = XResNetConfig()
    return XResNetModel(config, seed=seed, dtype=dtype)


def _as_crop_array(crop, input_dim):
    if isinstance(crop, FeatureMatrix):
        crop = crop.values.T
    crop = np.asarray(crop)
    if crop.ndim != 2:
        raise DimensionMismatch("crop must be a (dim, frames) matrix")
    if crop.shape[0] != input_dim:
        raise DimensionMismatch(f"expected {input_dim} feature rows, got {crop.shape[0]}")
    return crop


def forward(model, crop):
    """Embedding and cosine score for one (dim, frames) crop."""
    crop = _as_crop_array(crop, model.config.input_dim)
    emb = model.forward_batch(crop[None, None], training=False)
    score = model.head.cosine_scores(emb, training=False)
    return emb[0], float(score[0])


def backward(model, batch, labels=None):
    """Loss and parameter gradients for one training batch."""
    from .losses import oc_softmax_loss

    if not isinstance(batch, TrainingBatch):
        batch = TrainingBatch(np.asarray(batch), labels)
    model.zero_grad()
    emb = model.forward_batch(batch.features[:, None], training=True)
    scores = model.head.cosine_scores(emb, training=True)
    loss, dscores = oc_softmax_loss(
        scores,
        batch.labels,
        alpha=model.head.alpha,
        m0=model.head.m0,
        m1=model.head.m1,
    )
    d_emb = model.head.backward(dscores)
    model.backward_batch(d_emb.astype(model.dtype))
    return loss, model.grads()


def extract_embeddings(model, features, window=500, shift=10):
    """Slide a fixed window over time and embed each position.

    Inputs shorter than one window are zero padded on the right; the
    returned flag reports whether padding happened.
    """
    if isinstance(features, FeatureMatrix):
        feats = features.values
    else:
        feats = np.asarray(features)
    if feats.ndim != 2:
        raise DimensionMismatch("features must be a (frames, dim) matrix")
    if feats.shape[0] == 0:
        raise EmptyFeatures("no frames to embed")
    if feats.shape[1] != model.config.input_dim:
        raise DimensionMismatch(
            f"expected {model.config.input_dim} feature columns, got {feats.shape[1]}"
        )
    if window < model.min_frames:
        raise InvalidConfig(
            f"window {window} below the minimum of {model.min_frames} frames"
        )
    if shift < 1:
        raise InvalidConfig("shift must be positive")

    n_frames = feats.shape[0]
    padded = n_frames < window
    if padded:
        padded_feats = np.zeros((window, feats.shape[1]), dtype=feats.dtype)
        padded_feats[:n_frames] = feats
        feats = padded_feats
        n_frames = window

    starts = range(0, n_frames - window + 1, shift)
    crops = [feats[s:s + window].T for s in starts]
    embeddings = np.empty((len(crops), model.embedding_dim), dtype=np.float64)
    for lo in range(0, len(crops), _INFER_BATCH):
        chunk = np.stack(crops[lo:lo + _INFER_BATCH])[:, None]
        embeddings[lo:lo + len(chunk)] = model.forward_batch(chunk, training=False)
    return embeddings, padded
