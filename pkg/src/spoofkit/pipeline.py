"""End-to-end orchestration: audio in, pooled detection scores out.

A DetectionPipeline bundles the configuration with whichever models the
current stage needs (SAD, embedding network, PLDA or GMM backend) and
exposes the per-utterance scoring chain:

    features -> SAD mask -> sliding embeddings -> gaussianize ->
    per-window detection score -> average and interleaved-aware pooling

The GMM route replaces the embedding/backend steps with per-frame
log-likelihood ratios over the masked filterbank features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer
from .backend import (
    EnrollmentStats,
    GmmModel,
    LdaGaussianizer,
    PldaModel,
    detection_score,
    gmm_frame_llr,
)
from .config import PipelineConfig
from .errors import InvalidConfig
from .features import FeatureMatrix, extract_lfb, extract_mfcc, mvn_sliding
from .nnet import XResNetModel, extract_embeddings
from .sad import (
    SadModel,
    apply_mask,
    sad_forward,
    scores_to_segments,
    smooth_scores,
    stack_context,
)
from .scoring import ScoreSeries, interleaved_aware, score_average


@dataclass
class DetectionPipeline:
    config: PipelineConfig
    sad_model: SadModel = None
    embedder: XResNetModel = None
    lda: LdaGaussianizer = None
    plda: PldaModel = None
    pristine_stats: EnrollmentStats = None
    spoof_stats: EnrollmentStats = None
    spoof_gmm: GmmModel = None
    pristine_gmm: GmmModel = None
    _fb_cache: dict = field(default_factory=dict, repr=False)

    # ---- feature front end ----

    def lfb(self, audio: AudioBuffer) -> FeatureMatrix:
        f = self.config.features
        return extract_lfb(
            audio,
            n_filters=f.n_filters,
            frame_len_s=f.frame_len_s,
            hop_s=f.frame_shift_s,
            n_fft=f.n_fft,
        )

    def mfcc(self, audio: AudioBuffer) -> FeatureMatrix:
        f = self.config.features
        return extract_mfcc(
            audio,
            n_coeffs=f.n_mfcc,
            n_mel_filters=f.n_mel_filters,
            frame_len_s=f.frame_len_s,
            hop_s=f.frame_shift_s,
            n_fft=f.n_fft,
        )

    # ---- speech activity ----

    def sad_scores(self, audio: AudioBuffer) -> ScoreSeries:
        if self.sad_model is None:
            raise InvalidConfig("no SAD model loaded; pass one or disable sad.enabled")
        s = self.config.sad
        feats = mvn_sliding(self.mfcc(audio), s.mvn_window_s)
        stacked = stack_context(feats, s.context_frames)
        raw = sad_forward(self.sad_model, stacked)
        return smooth_scores(raw, s.smooth_window_s, self.config.features.frame_shift_s)

    def sad_segments(self, audio: AudioBuffer):
        s = self.config.sad
        return scores_to_segments(
            self.sad_scores(audio),
            threshold=s.threshold,
            pad_s=s.pad_s,
            frame_shift_s=self.config.features.frame_shift_s,
        )

    def masked_lfb(self, audio: AudioBuffer) -> FeatureMatrix:
        feats = self.lfb(audio)
        if self.config.sad.enabled:
            feats = apply_mask(feats, self.sad_segments(audio))
        return feats

    # ---- embeddings and scoring ----

    def embeddings(self, features, shift=None):
        if self.embedder is None:
            raise InvalidConfig("no embedding model loaded")
        e = self.config.embedding
        return extract_embeddings(
            self.embedder,
            features,
            window=e.window,
            shift=e.shift if shift is None else shift,
        )

    def window_scores(self, features) -> ScoreSeries:
        """Per-window (PLDA route) or per-frame (GMM route) scores over
        already-masked filterbank features; higher = more spoof-like."""
        route = self.config.backend.route
        if route == "gmm":
            if self.spoof_gmm is None or self.pristine_gmm is None:
                raise InvalidConfig("GMM route selected but no GMM pair loaded")
            return gmm_frame_llr(self.spoof_gmm, self.pristine_gmm, features)
        if self.lda is None or self.plda is None:
            raise InvalidConfig("PLDA route selected but no backend model loaded")
        if self.pristine_stats is None or self.spoof_stats is None:
            raise InvalidConfig("backend model lacks enrollment statistics")
        embs, _ = self.embeddings(features)
        values = np.empty(len(embs))
        for i, emb in enumerate(embs):
            g = self.lda.transform(emb)
            values[i] = detection_score(self.plda, self.pristine_stats, self.spoof_stats, g)
        return ScoreSeries(values, shift_frames=self.config.embedding.shift, origin="plda")

    def score_utterance(self, audio: AudioBuffer):
        """(average score, interleaved-aware score, full window series)."""
        series = self.window_scores(self.masked_lfb(audio))
        s = self.config.scoring
        avg = score_average(series)
        inter = interleaved_aware(series, s.smooth_len, s.top_frac, s.repeats)
        return avg, inter, series


def score_utterance(pipeline: DetectionPipeline, audio: AudioBuffer):
    return pipeline.score_utterance(audio)
