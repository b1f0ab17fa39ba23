"""Training loop for the embedding network.

Each epoch shuffles the corpus, takes one fixed-length crop per
utterance at a fresh random offset, applies frequency masking to every
crop, and steps the decoupled-weight-decay optimizer on the one-class
margin loss. After every epoch the model is scored on the dev set
(negated cosine, so spoofs score high) and the parameters with the best
dev EER are kept.

The loop is deterministic for a given seed: all randomness flows
through one generator, and the formatted history contains no wall-clock
values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..augment import FreqMaskConfig, frequency_mask
from ..errors import InsufficientData, InvalidConfig, NonFiniteValue
from ..features import FeatureMatrix
from ..scoring import compute_eer
from ..validation import ensure_rng
from .optim import AdamW
from .xresnet import TrainingBatch, backward

_SCORE_BATCH = 32


@dataclass
class TrainSettings:
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 12
    crop_frames: int = 500
    learning_rate: float = 2e-3
    betas: tuple = (0.9, 0.99)
    eps: float = 1e-5
    weight_decay: float = 0.01
    n_masks: int = 2
    mask_max_width: int = 7

    def validate(self):
        if int(self.batch_size) < 1:
            raise InvalidConfig("batch_size must be positive")
        if int(self.max_epochs) < 0:
            raise InvalidConfig("max_epochs must be nonnegative")
        if int(self.patience) < 0:
            raise InvalidConfig("patience must be nonnegative")
        if int(self.crop_frames) < 1:
            raise InvalidConfig("crop_frames must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_eer: float
    improved: bool


def _matrix(features):
    if isinstance(features, FeatureMatrix):
        return features.values
    return np.asarray(features, dtype=np.float64)


def random_crop(matrix, crop_frames, rng):
    """Fixed-length time crop at a random offset, zero padded on the
    right when the input is shorter than the crop."""
    n, d = matrix.shape
    if n >= crop_frames:
        offset = int(rng.integers(0, n - crop_frames + 1))
        return matrix[offset:offset + crop_frames]
    out = np.zeros((crop_frames, d), dtype=matrix.dtype)
    out[:n] = matrix
    return out


def _deterministic_crop(matrix, crop_frames):
    n, d = matrix.shape
    if n >= crop_frames:
        return matrix[:crop_frames]
    out = np.zeros((crop_frames, d), dtype=matrix.dtype)
    out[:n] = matrix
    return out


def _dev_scores(model, dev_mats, crop_frames):
    crops = [_deterministic_crop(m, crop_frames).T for m in dev_mats]
    scores = np.empty(len(crops))
    for lo in range(0, len(crops), _SCORE_BATCH):
        chunk = np.stack(crops[lo:lo + _SCORE_BATCH])[:, None]
        emb = model.forward_batch(chunk, training=False)
        scores[lo:lo + len(chunk)] = model.head.cosine_scores(emb, training=False)
    return -scores  # spoofs sit far from the target direction


def train(model, train_features, train_labels, dev_features, dev_labels, settings=None, seed=0):
    """Fit the model in place and return (model, history)."""
    settings = settings or TrainSettings()
    settings.validate()
    if settings.crop_frames < model.min_frames:
        raise InvalidConfig(
            f"crop_frames {settings.crop_frames} below the model minimum of {model.min_frames}"
        )
    train_mats = [_matrix(f) for f in train_features]
    dev_mats = [_matrix(f) for f in dev_features]
    y_train = np.asarray(train_labels, dtype=np.int64)
    y_dev = np.asarray(dev_labels, dtype=np.int64)
    if len(train_mats) == 0:
        raise InsufficientData("no training utterances")
    if len(y_train) != len(train_mats) or len(y_dev) != len(dev_mats):
        raise InsufficientData("labels must align with features")
    if not (np.any(y_dev == 0) and np.any(y_dev == 1)):
        raise InsufficientData("dev set needs both pristine and spoofed utterances")

    rng = ensure_rng(seed)
    opt = AdamW(
        learning_rate=settings.learning_rate,
        betas=settings.betas,
        eps=settings.eps,
        weight_decay=settings.weight_decay,
    )
    mask_cfg = FreqMaskConfig(n_masks=settings.n_masks, max_width=settings.mask_max_width)

    history: list[EpochRecord] = []
    best_eer = np.inf
    best_state = model.snapshot()
    bad = 0
    for epoch in range(1, settings.max_epochs + 1):
        order = rng.permutation(len(train_mats))
        total = 0.0
        for lo in range(0, len(order), settings.batch_size):
            idx = order[lo:lo + settings.batch_size]
            crops = []
            for i in idx:
                crop = random_crop(train_mats[i], settings.crop_frames, rng)
                crop = frequency_mask(crop, mask_cfg, rng)
                crops.append(crop.T)
            batch = TrainingBatch(np.stack(crops), y_train[idx])
            loss, grads = backward(model, batch)
            if not np.isfinite(loss):
                raise NonFiniteValue(f"loss diverged at epoch {epoch}")
            opt.step(model.params(), grads)
            total += loss * len(idx)
        train_loss = total / len(train_mats)

        dev_scores = _dev_scores(model, dev_mats, settings.crop_frames)
        report = compute_eer(dev_scores[y_dev == 1], dev_scores[y_dev == 0])
        improved = report.eer < best_eer
        if improved:
            best_eer = report.eer
            best_state = model.snapshot()
            bad = 0
        else:
            bad += 1
        history.append(EpochRecord(epoch, float(train_loss), float(report.eer), improved))
        if bad > settings.patience:
            break

    model.load_snapshot(best_state)
    return model, history


def format_history(history):
    """Deterministic text rendering of the epoch records."""
    lines = []
    for rec in history:
        mark = " *" if rec.improved else ""
        lines.append(
            f"epoch {rec.epoch} train_loss {rec.train_loss!r} dev_eer {rec.dev_eer!r}{mark}"
        )
    if history:
        best = min(history, key=lambda r: (r.dev_eer, r.epoch))
        lines.append(f"best epoch {best.epoch} dev_eer {best.dev_eer!r}")
    return "\n".join(lines) + "\n"
