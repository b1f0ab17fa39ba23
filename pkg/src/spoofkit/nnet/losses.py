"""One-class margin loss over cosine scores.

Pristine examples (label 0) are pulled above margin m0 along a single
learned direction; spoofed examples (label 1) are pushed below margin
m1. Loss per sample: softplus(alpha * (m_y - s) * (-1)^y) where s is the
cosine between the normalized embedding and the normalized direction.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import DataError, DimensionMismatch, InvalidMargins
from ..validation import ensure_rng

_NORM_FLOOR = 1e-12


def oc_softmax_loss(cosine_scores, labels, alpha=20.0, m0=0.9, m1=0.2):
    """Mean one-class softmax loss and its gradient wrt the scores."""
    if m0 <= m1:
        raise InvalidMargins(f"m0 ({m0}) must exceed m1 ({m1})")
    s = np.asarray(cosine_scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.shape != y.shape:
        raise DimensionMismatch("scores and labels must align")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 (pristine) or 1 (spoof)")

    sign = np.where(y == 0, 1.0, -1.0)
    margin = np.where(y == 0, m0, m1)
    z = alpha * (margin - s) * sign
    loss = float(np.mean(np.logaddexp(0.0, z)))
    dscores = -expit(z) * alpha * sign / len(s)
    return loss, dscores


class OcSoftmaxHead:
    """Learned target direction plus margins; scores are cosines."""

    def __init__(self, embedding_dim, alpha=20.0, m0=0.9, m1=0.2, rng=None, dtype=np.float32):
        if m0 <= m1:
            raise InvalidMargins(f"m0 ({m0}) must exceed m1 ({m1})")
        rng = ensure_rng(rng if rng is not None else 0)
        self.alpha = alpha
        self.m0 = m0
        self.m1 = m1
        self.w0 = rng.standard_normal(embedding_dim).astype(dtype)
        self.gw0 = np.zeros_like(self.w0)

    def params(self):
        return {"w0": self.w0}

    def grads(self):
        return {"w0": self.gw0}

    def zero_grad(self):
        self.gw0.fill(0.0)

    def cosine_scores(self, embeddings, training=False):
        """Cosine between each normalized embedding and the normalized
        direction; always in [-1, 1]."""
        emb = np.atleast_2d(embeddings)
        norms = np.maximum(np.linalg.norm(emb, axis=1), _NORM_FLOOR)
        w_norm = max(float(np.linalg.norm(self.w0)), _NORM_FLOOR)
        x_hat = emb / norms[:, None]
        w_hat = self.w0 / w_norm
        scores = x_hat @ w_hat
        if training:
            self._cache = (x_hat, w_hat, scores, norms, w_norm)
        return scores

    def backward(self, dscores):
        """Gradient wrt embeddings; accumulates the direction gradient."""
        x_hat, w_hat, scores, norms, w_norm = self._cache
        dscores = np.asarray(dscores, dtype=x_hat.dtype)
        d_emb = dscores[:, None] * (w_hat[None, :] - scores[:, None] * x_hat) / norms[:, None]
        self.gw0 += (dscores[:, None] * (x_hat - scores[:, None] * w_hat[None, :])).sum(axis=0) / w_norm
        return d_emb
