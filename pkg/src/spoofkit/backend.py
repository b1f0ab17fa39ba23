"""Embedding-space classifiers.

Two scoring routes over utterance-window embeddings:

- LDA projection + gaussianization (center, project, whiten, length
  normalize) feeding a PLDA model ``w = mu + U x + eps`` with standard
  normal latent x and full residual covariance. Scores are
  log-likelihood ratios of the shared-latent vs independent hypotheses,
  with multi-cut enrollment folded into sufficient statistics.
- A diagonal-covariance GMM pair scored per frame as a log-likelihood
  ratio.

Trained models are immutable; scoring does not mutate state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (
    DegenerateData,
    DimensionMismatch,
    InsufficientData,
    InvalidConfig,
    SingularScatter,
    TooFewFrames,
    ZeroVector,
)
from .features import FeatureMatrix
from .scoring import ScoreSeries
from .validation import as_matrix, ensure_rng

_NORM_FLOOR = 1e-12
_VAR_FLOOR = 1e-6
_GMM_CHUNK = 4096
_LOG_2PI = float(np.log(2.0 * np.pi))


def _scatter_matrices(x, class_ids):
    classes, inverse = np.unique(class_ids, return_inverse=True)
    mean = x.mean(axis=0)
    d = x.shape[1]
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for c in range(len(classes)):
        xc = x[inverse == c]
        mc = xc.mean(axis=0)
        centered = xc - mc
        sw += centered.T @ centered
        diff = mc - mean
        sb += len(xc) * np.outer(diff, diff)
    return sw, sb, len(classes)


class LdaGaussianizer(BaseEstimator, TransformerMixin):
    """Center, project with LDA, whiten, and length-normalize.

    The LDA directions solve the generalized eigenproblem on the
    between/within scatter pair; whitening is the symmetric inverse
    square root of the projected total covariance, so transformed
    training data has identity covariance before length normalization.
    """

    def __init__(self, out_dim=19, shrinkage=1e-6):
        self.out_dim = out_dim
        self.shrinkage = shrinkage

    def fit(self, X, y):
        x = as_matrix(X, "embeddings")
        y = np.asarray(y)
        if len(y) != len(x):
            raise DimensionMismatch("class ids must align with embeddings")
        sw, sb, n_classes = _scatter_matrices(x, y)
        if n_classes < 2:
            raise InsufficientData("LDA needs at least 2 classes")
        if self.out_dim > n_classes - 1:
            raise InvalidConfig(
                f"out_dim {self.out_dim} exceeds class rank bound {n_classes - 1}"
            )
        if self.out_dim < 1:
            raise InvalidConfig("out_dim must be positive")
        reg = sw + self.shrinkage * np.eye(x.shape[1])
        try:
            eigvals, eigvecs = scipy.linalg.eigh(sb, reg)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise SingularScatter("within-class scatter not invertible") from exc
        order = np.argsort(eigvals)[::-1][: self.out_dim]
        self.mean_ = x.mean(axis=0)
        self.lda_ = eigvecs[:, order]

        projected = (x - self.mean_) @ self.lda_
        cov = projected.T @ projected / len(projected)
        vals, vecs = np.linalg.eigh(cov)
        if np.min(vals) <= 0:
            raise DegenerateData("projected covariance is singular")
        self.whitener_ = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
        return self

    def transform(self, X):
        single = np.asarray(X).ndim == 1
        x = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if x.shape[1] != len(self.mean_):
            raise DimensionMismatch(
                f"expected {len(self.mean_)}-dim embeddings, got {x.shape[1]}"
            )
        z = (x - self.mean_) @ self.lda_ @ self.whitener_
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms < _NORM_FLOOR):
            raise ZeroVector("embedding collapses to zero after centering")
        z = z / norms[:, None]
        return z[0] if single else z


def train_lda(embeddings, class_ids, out_dim=19) -> LdaGaussianizer:
    return LdaGaussianizer(out_dim=out_dim).fit(embeddings, class_ids)


def gaussianize(xform: LdaGaussianizer, embedding):
    return xform.transform(embedding)


@dataclass
class EnrollmentStats:
    """Sufficient statistics of an enrollment set under one model:
    count, summed centered vectors, and summed Mahalanobis energy."""

    n: int
    f: np.ndarray
    quad: float


@dataclass
class PldaModel:
    mu: np.ndarray
    U: np.ndarray  # (d, q)
    Lam: np.ndarray  # (d, d) residual covariance
    ll_history: list = field(default_factory=list)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64).reshape(len(self.mu), -1)
        self.Lam = np.asarray(self.Lam, dtype=np.float64)
        try:
            chol = np.linalg.cholesky(self.Lam)
        except np.linalg.LinAlgError as exc:
            raise DegenerateData("residual covariance not positive definite") from exc
        self._logdet_lam = 2.0 * float(np.sum(np.log(np.diag(chol))))
        self._prec = np.linalg.inv(self.Lam)
        self._utp = self.U.T @ self._prec  # (q, d)
        self._utpu = self._utp @ self.U  # (q, q)

    @property
    def dim(self):
        return len(self.mu)

    @property
    def q(self):
        return self.U.shape[1]

    def enrollment_stats(self, embeddings) -> EnrollmentStats:
        x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        if x.shape[0] == 0:
            raise InsufficientData("enrollment set is empty")
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim}-dim embeddings")
        centered = x - self.mu
        quad = float(np.einsum("nd,de,ne->", centered, self._prec, centered))
        return EnrollmentStats(len(x), centered.sum(axis=0), quad)

    def _merge(self, a: EnrollmentStats, b: EnrollmentStats) -> EnrollmentStats:
        return EnrollmentStats(a.n + b.n, a.f + b.f, a.quad + b.quad)

    def log_marginal(self, stats: EnrollmentStats) -> float:
        """Log density of a set of vectors that share one latent factor."""
        m = np.eye(self.q) + stats.n * self._utpu
        b = self._utp @ stats.f
        sign, logdet_m = np.linalg.slogdet(m)
        if sign <= 0:
            raise DegenerateData("posterior precision not positive definite")
        fit = float(b @ np.linalg.solve(m, b)) if self.q else 0.0
        return -0.5 * (
            stats.n * self.dim * _LOG_2PI
            + stats.n * self._logdet_lam
            + logdet_m
            + stats.quad
            - fit
        )


def _as_stats(model: PldaModel, enroll) -> EnrollmentStats:
    if isinstance(enroll, EnrollmentStats):
        return enroll
    return model.enrollment_stats(enroll)


def plda_llr(model: PldaModel, enroll_embeddings, test_embedding) -> float:
    """Log-likelihood ratio: same latent class vs independent classes."""
    stats = _as_stats(model, enroll_embeddings)
    test = model.enrollment_stats(np.atleast_2d(test_embedding))
    joint = model._merge(stats, test)
    return model.log_marginal(joint) - model.log_marginal(stats) - model.log_marginal(test)


def detection_score(model: PldaModel, pristine_enroll, spoof_enroll, test_embedding) -> float:
    """Positive when the test embedding looks spoofed."""
    spoof = plda_llr(model, spoof_enroll, test_embedding)
    pristine = plda_llr(model, pristine_enroll, test_embedding)
    return spoof - pristine


def train_plda_em(embeddings, class_ids, q=16, n_iters=20, seed=0) -> PldaModel:
    """EM for the subspace model with the mean fixed at the sample mean.

    The recorded history is the observed-data log-likelihood evaluated
    before each update; it is non-decreasing up to numerical slack.
    """
    x = as_matrix(embeddings, "embeddings")
    y = np.asarray(class_ids)
    n, d = x.shape
    if len(y) != n:
        raise DimensionMismatch("class ids must align with embeddings")
    if q < 0 or q > d:
        raise InvalidConfig(f"subspace dimension must lie in [0, {d}]")
    classes, inverse = np.unique(y, return_inverse=True)
    if n < 2 or len(classes) < 2:
        raise InsufficientData("need at least 2 examples in at least 2 classes")

    mu = x.mean(axis=0)
    centered = x - mu
    s_total = centered.T @ centered
    lam = s_total / n
    try:
        np.linalg.cholesky(lam)
    except np.linalg.LinAlgError as exc:
        raise DegenerateData("total covariance not positive definite") from exc

    if q == 0:
        model = PldaModel(mu, np.zeros((d, 0)), lam)
        model.ll_history = [_observed_ll(model, centered, inverse, len(classes))]
        return model

    rng = ensure_rng(seed)
    counts = np.bincount(inverse, minlength=len(classes))
    f_by_class = np.zeros((len(classes), d))
    np.add.at(f_by_class, inverse, centered)

    # start the subspace on the top between-class directions; a small
    # seeded jitter keeps columns off the zero fixed point when the
    # between-class rank is below q
    class_means = f_by_class / counts[:, None]
    between = (class_means * counts[:, None]).T @ class_means / n
    vals, vecs = np.linalg.eigh(between)
    order = np.argsort(vals)[::-1][:q]
    u = vecs[:, order] * np.sqrt(np.clip(vals[order], 0.0, None))
    u = u + rng.standard_normal((d, q)) * (0.01 * np.sqrt(np.trace(lam) / d))

    history = []
    model = PldaModel(mu, u, lam)
    for _ in range(int(n_iters)):
        history.append(_observed_ll(model, centered, inverse, len(classes)))
        utp = model._utp
        utpu = model._utpu
        r = np.zeros((d, q))
        g = np.zeros((q, q))
        for nc in np.unique(counts):
            m = np.eye(q) + nc * utpu
            m_inv = np.linalg.inv(m)
            sel = counts == nc
            b = f_by_class[sel] @ utp.T  # (n_sel, q)
            eh = b @ m_inv.T
            r += f_by_class[sel].T @ eh
            g += nc * (sel.sum() * m_inv + eh.T @ eh)
        u = np.linalg.solve(g.T, r.T).T
        lam = (s_total - r @ u.T) / n
        lam = 0.5 * (lam + lam.T)
        model = PldaModel(mu, u, lam)
    history.append(_observed_ll(model, centered, inverse, len(classes)))
    model.ll_history = history
    return model


def _observed_ll(model: PldaModel, centered, inverse, n_classes) -> float:
    total = 0.0
    for c in range(n_classes):
        xc = centered[inverse == c]
        stats = EnrollmentStats(
            len(xc),
            xc.sum(axis=0),
            float(np.einsum("nd,de,ne->", xc, model._prec, xc)),
        )
        total += model.log_marginal(stats)
    return float(total)


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray  # (k, d)
    variances: np.ndarray  # (k, d) diagonal
    ll_history: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if self.means.shape != self.variances.shape:
            raise DimensionMismatch("means and variances must share a shape")
        if len(self.weights) != len(self.means):
            raise DimensionMismatch("weights must align with components")
        # allow float32 roundtrip wobble right at the floor, then clamp
        if np.any(self.variances < _VAR_FLOOR * (1 - 1e-5)):
            raise InvalidConfig(f"variances must respect the {_VAR_FLOOR} floor")
        self.variances = np.maximum(self.variances, _VAR_FLOOR)

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def _log_joint(self, frames):
        # (n, k): log w_k + log N(x | m_k, diag v_k)
        log_norm = -0.5 * (self.dim * _LOG_2PI + np.sum(np.log(self.variances), axis=1))
        out = np.empty((len(frames), self.n_components))
        for lo in range(0, len(frames), _GMM_CHUNK):
            x = frames[lo:lo + _GMM_CHUNK]
            diff = x[:, None, :] - self.means[None]
            maha = np.sum(diff * diff / self.variances[None], axis=2)
            out[lo:lo + len(x)] = -0.5 * maha + log_norm
        return out + np.log(self.weights)

    def frame_log_likelihood(self, frames):
        frames = as_matrix(frames, "frames")
        if frames.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim}-dim frames")
        return logsumexp(self._log_joint(frames), axis=1)


def train_gmm_em(frames, n_components=64, n_iters=10, seed=0) -> GmmModel:
    """Diagonal-covariance EM from means drawn at random frames."""
    x = as_matrix(frames, "frames")
    n, d = x.shape
    if n_components < 1:
        raise InvalidConfig("n_components must be positive")
    if n < n_components:
        raise TooFewFrames(f"{n} frames cannot support {n_components} components")

    rng = ensure_rng(seed)
    means = x[rng.choice(n, size=n_components, replace=False)].copy()
    global_var = np.maximum(x.var(axis=0), _VAR_FLOOR)
    variances = np.tile(global_var, (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)
    model = GmmModel(weights, means, variances)

    history = []
    xsq = x * x
    for _ in range(int(n_iters)):
        log_joint = model._log_joint(x)
        per_frame = logsumexp(log_joint, axis=1)
        history.append(float(per_frame.sum()))
        resp = np.exp(log_joint - per_frame[:, None])
        nk = np.maximum(resp.sum(axis=0), 1e-10)
        means = (resp.T @ x) / nk[:, None]
        variances = np.maximum((resp.T @ xsq) / nk[:, None] - means * means, _VAR_FLOOR)
        weights = nk / nk.sum()
        model = GmmModel(weights, means, variances)
    history.append(float(model.frame_log_likelihood(x).sum()))
    model.ll_history = history
    return model


def gmm_frame_llr(spoof_gmm: GmmModel, pristine_gmm: GmmModel, features) -> ScoreSeries:
    """Per-frame log-likelihood ratio, spoof over pristine."""
    if spoof_gmm.dim != pristine_gmm.dim:
        raise DimensionMismatch("models disagree on feature dimension")
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    llr = spoof_gmm.frame_log_likelihood(values) - pristine_gmm.frame_log_likelihood(values)
    return ScoreSeries(llr, shift_frames=1, origin="gmm")
