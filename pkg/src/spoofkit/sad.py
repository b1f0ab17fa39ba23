"""Speech-activity detection.

A small feed-forward network labels each frame as speech or non-speech
from 31 stacked MFCC frames (620 inputs -> 500 -> 100 -> 2 softmax).
Posteriors are smoothed over half a second, thresholded, padded by a
third of a second per side, and the surviving segments select feature
frames for everything downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import (
    DimensionMismatch,
    EmptyResult,
    InsufficientData,
    InvalidConfig,
)
from .features import FeatureMatrix, frame_signal, mvn_sliding
from .nnet.optim import AdamW
from .scoring import ScoreSeries, centered_moving_average
from .validation import ensure_rng

SPEECH_CLASS = 1  # softmax output index for "speech"


@dataclass
class SadModel:
    """Dense layer stack; layers holds (weight, bias) pairs."""

    layers: list = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    def copy(self) -> "SadModel":
        return SadModel([(w.copy(), b.copy()) for w, b in self.layers])


def init_sad_model(input_dim=620, hidden_dims=(500, 100), seed=0) -> SadModel:
    """He-normal initialized MLP ending in a 2-way output layer."""
    rng = ensure_rng(seed)
    dims = [input_dim, *hidden_dims, 2]
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in)
        layers.append((w, np.zeros(d_out)))
    return SadModel(layers)


def stack_context(mfcc, context_frames=31) -> np.ndarray:
    """Concatenate each frame with its neighbors, edges replicated.

    Frame t's row holds frames t-c..t+c (c = context_frames // 2) in
    order, giving context_frames * D columns.
    """
    matrix = mfcc.values if isinstance(mfcc, FeatureMatrix) else np.asarray(mfcc, dtype=np.float64)
    n, d = matrix.shape
    if n < 1:
        raise EmptyResult("cannot stack context over zero frames")
    c = context_frames // 2
    offsets = np.arange(-c, c + 1)
    idx = np.clip(np.arange(n)[:, None] + offsets[None, :], 0, n - 1)
    return matrix[idx].reshape(n, context_frames * d)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sad_forward(model: SadModel, stacked: np.ndarray) -> ScoreSeries:
    """Per-frame speech posterior from stacked context rows."""
    stacked = np.atleast_2d(np.asarray(stacked, dtype=np.float64))
    if stacked.shape[1] != model.input_dim:
        raise DimensionMismatch(
            f"stacked input has {stacked.shape[1]} columns, model expects {model.input_dim}"
        )
    a = stacked
    for w, b in model.layers[:-1]:
        a = np.maximum(a @ w.T + b, 0.0)
    w, b = model.layers[-1]
    probs = _softmax(a @ w.T + b)
    return ScoreSeries(probs[:, SPEECH_CLASS], shift_frames=1, origin="sad")


def smooth_scores(scores, window_s=0.5, frame_shift_s=0.010) -> ScoreSeries:
    """Centered moving average over window_s (50 frames at 100 fps),
    truncated and renormalized at the edges."""
    values = scores.values if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=np.float64)
    window = int(round(window_s / frame_shift_s))
    out = centered_moving_average(values, window)
    shift = scores.shift_frames if isinstance(scores, ScoreSeries) else 1
    return ScoreSeries(out, shift_frames=shift, origin="sad-smoothed")


def scores_to_segments(scores, threshold=0.5, pad_s=1.0 / 3.0, frame_shift_s=0.010):
    """Turn smoothed posteriors into padded, merged speech segments.

    Maximal runs with score > threshold become [start, end) intervals,
    each widened by pad_s per side, clamped to [0, duration], and merged
    where they overlap or touch.
    """
    values = scores.values if isinstance(scores, ScoreSeries) else np.asarray(scores, dtype=np.float64)
    n = len(values)
    duration = n * frame_shift_s
    active = values > threshold
    if not active.any():
        return []

    boundaries = np.flatnonzero(np.diff(active.astype(np.int8)))
    starts = [0] if active[0] else []
    starts += [int(b) + 1 for b in boundaries if not active[b]]
    ends = [int(b) + 1 for b in boundaries if active[b]]
    if active[-1]:
        ends.append(n)

    merged = []
    for i, j in zip(starts, ends):
        lo = max(i * frame_shift_s - pad_s, 0.0)
        hi = min(j * frame_shift_s + pad_s, duration)
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def apply_mask(features: FeatureMatrix, segments) -> FeatureMatrix:
    """Keep only frames whose timestamps fall inside a segment.

    Pure selection: surviving frames keep their order and values. Raises
    EmptyResult when nothing survives, which marks the utterance unusable.
    """
    shift = features.frame_shift_s
    n = features.n_frames
    keep = np.zeros(n, dtype=bool)
    for start, end in segments:
        # integer frame bounds for the half-open interval [start, end)
        k0 = max(int(np.ceil(start / shift - 1e-9)), 0)
        k1 = min(int(np.ceil(end / shift - 1e-9)), n)
        if k1 > k0:
            keep[k0:k1] = True
    if not keep.any():
        raise EmptyResult("no frames inside the speech segments")
    return FeatureMatrix(features.values[keep], shift, features.kind)


def energy_frame_labels(audio, frame_len_s=0.025, hop_s=0.010, rel_threshold=0.1) -> np.ndarray:
    """Frame speech labels from an energy gate on clean audio.

    Frames exactly as the feature extractor does, so the labels line up
    with MFCC rows of the same utterance. A frame counts as speech when
    its RMS exceeds rel_threshold times the loudest frame's RMS. Only
    meaningful for clean recordings with a quiet floor.
    """
    if not 0.0 < rel_threshold < 1.0:
        raise InvalidConfig("rel_threshold must lie in (0, 1)")
    frames = frame_signal(audio, frame_len_s, hop_s)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    peak = rms.max()
    if peak <= 0.0:
        return np.zeros(len(rms), dtype=np.int64)
    return (rms > rel_threshold * peak).astype(np.int64)


def _cross_entropy(logits, labels):
    probs = _softmax(logits)
    n = len(labels)
    loss = -np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-300)))
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def train_sad(
    stacked: np.ndarray,
    labels: np.ndarray,
    epochs=10,
    seed=0,
    learning_rate=1e-3,
    batch_size=256,
    hidden_dims=(500, 100),
):
    """Train the MLP with Adam on stacked context rows.

    Returns (model, per-epoch mean cross-entropy). Zero epochs returns
    the seeded initialization untouched. Deterministic given the seed.
    """
    stacked = np.asarray(stacked, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if stacked.ndim != 2 or len(stacked) != len(labels):
        raise DimensionMismatch("stacked rows and labels must align")
    if len(stacked) == 0:
        raise InsufficientData("no training frames")
    if len(np.unique(labels)) < 2:
        raise InsufficientData("need both speech and non-speech frames")

    rng = ensure_rng(seed)
    model = init_sad_model(stacked.shape[1], hidden_dims, rng)
    opt = AdamW(learning_rate=learning_rate, weight_decay=0.0)
    history = []

    for _ in range(epochs):
        order = rng.permutation(len(stacked))
        epoch_loss = 0.0
        for lo in range(0, len(order), batch_size):
            batch = order[lo : lo + batch_size]
            x, y = stacked[batch], labels[batch]

            acts = [x]
            a = x
            for w, b in model.layers[:-1]:
                a = np.maximum(a @ w.T + b, 0.0)
                acts.append(a)
            w_out, b_out = model.layers[-1]
            logits = a @ w_out.T + b_out

            loss, dlogits = _cross_entropy(logits, y)
            epoch_loss += loss * len(batch)

            params, grads = {}, {}
            delta = dlogits
            for li in range(len(model.layers) - 1, -1, -1):
                w, b = model.layers[li]
                grads[f"w{li}"] = delta.T @ acts[li]
                grads[f"b{li}"] = delta.sum(axis=0)
                params[f"w{li}"] = w
                params[f"b{li}"] = b
                if li > 0:
                    delta = (delta @ w) * (acts[li] > 0)
            opt.step(params, grads)

        history.append(float(epoch_loss / len(stacked)))
    return model, history


class SpeechActivityDetector(BaseEstimator):
    """Frame-level speech detector over MFCC features.

    fit takes a list of raw MFCC FeatureMatrix objects and a matching
    list of boolean/int frame label arrays (1 = speech). predict maps an
    MFCC matrix to padded speech segments; trim drops masked-out frames
    from any feature matrix of the same utterance.
    """

    def __init__(
        self,
        mvn_window_s=0.5,
        context_frames=31,
        smooth_window_s=0.5,
        threshold=0.5,
        pad_s=1.0 / 3.0,
        hidden_dims=(500, 100),
        learning_rate=1e-3,
        epochs=10,
        batch_size=256,
        seed=0,
    ):
        self.mvn_window_s = mvn_window_s
        self.context_frames = context_frames
        self.smooth_window_s = smooth_window_s
        self.threshold = threshold
        self.pad_s = pad_s
        self.hidden_dims = hidden_dims
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        if len(X) == 0:
            raise InsufficientData("no training utterances")
        rows = [self._stack(m) for m in X]
        labels = [np.asarray(lab, dtype=np.int64) for lab in y]
        for m, lab in zip(rows, labels):
            if len(m) != len(lab):
                raise DimensionMismatch("frame labels must match frame count")
        self.model_, self.loss_history_ = train_sad(
            np.vstack(rows),
            np.concatenate(labels),
            epochs=self.epochs,
            seed=self.seed,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            hidden_dims=self.hidden_dims,
        )
        return self

    def _stack(self, mfcc) -> np.ndarray:
        normed = mvn_sliding(mfcc, self.mvn_window_s)
        return stack_context(normed, self.context_frames)

    def posteriors(self, mfcc) -> ScoreSeries:
        check_is_fitted(self, "model_")
        return sad_forward(self.model_, self._stack(mfcc))

    def predict(self, mfcc):
        """Padded speech segments for one utterance."""
        shift = mfcc.frame_shift_s if isinstance(mfcc, FeatureMatrix) else 0.010
        smoothed = smooth_scores(self.posteriors(mfcc), self.smooth_window_s, shift)
        return scores_to_segments(smoothed, self.threshold, self.pad_s, shift)

    def trim(self, features: FeatureMatrix, segments) -> FeatureMatrix:
        return apply_mask(features, segments)


def save_segments(segments, path):
    with open(path, "w", encoding="utf-8") as fh:
        for start, end in segments:
            fh.write(f"{float(start)!r}\t{float(end)!r}\n")


def load_segments(path):
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            start, end = line.split("\t")
            segments.append((float(start), float(end)))
    return segments
