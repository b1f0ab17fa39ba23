"""Acoustic front end: framing, power spectra, filterbanks, MFCC, MVN.

Two feature kinds feed the pipeline: 70-dimensional log energies from
triangular filters equally spaced on a linear frequency axis (the
embedding network input) and 20-dimensional MFCCs (the speech-activity
detector input). Both run at 100 frames/sec from 25 ms Hamming frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
from sklearn.base import BaseEstimator, TransformerMixin

from .audio import AudioBuffer
from .errors import DimensionMismatch, EmptyFeatures, InvalidConfig, TooShort

LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8

FEATURE_KINDS = ("lfb", "mfcc", "embedding", "score")


@dataclass
class FeatureMatrix:
    """T x D feature values plus the frame shift that defines timestamps."""

    values: np.ndarray
    frame_shift_s: float = 0.010
    kind: str = "lfb"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatch(f"feature values must be 2-D, got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames * self.frame_shift_s

    def timestamps(self) -> np.ndarray:
        """Start time of each frame: t_k = k * frame_shift_s."""
        return np.arange(self.n_frames) * self.frame_shift_s


@dataclass
class FilterBank:
    """Triangular filter weights over FFT bins."""

    weights: np.ndarray  # n_filters x n_bins
    center_freqs: np.ndarray  # Hz
    scale: str  # "linear" or "mel"


def frame_signal(audio: AudioBuffer, frame_len_s=0.025, hop_s=0.010) -> np.ndarray:
    """Slice a signal into Hamming-windowed frames.

    Yields 1 + floor((N - L) / H) frames of L samples; raises TooShort
    when the signal does not cover a single frame.
    """
    x = audio.samples
    frame_len = int(round(frame_len_s * audio.sample_rate))
    hop = int(round(hop_s * audio.sample_rate))
    if len(x) < frame_len:
        raise TooShort(f"signal of {len(x)} samples shorter than one {frame_len}-sample frame")
    n_frames = 1 + (len(x) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx] * np.hamming(frame_len)[None, :]


def power_spectrum(frames: np.ndarray, n_fft=512) -> np.ndarray:
    """Squared-magnitude FFT per frame, bins 0..n_fft/2 inclusive."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[1] > n_fft:
        raise DimensionMismatch(
            f"frame length {frames.shape[1]} exceeds n_fft {n_fft}"
        )
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return np.abs(spec) ** 2


def _triangle_bin_weights(left, peak, right, n_bins, bin_hz):
    """Average the unit triangle over [left, peak, right] across each bin cell.

    Cell k spans [(k-0.5)*bin_hz, (k+0.5)*bin_hz]; the returned weight is
    the exact integral of the triangle over the cell divided by the cell
    width, so the weighted sum of a flat spectrum equals the triangle area
    over bin_hz regardless of how the grid lands on the triangle.
    """
    edges = (np.arange(n_bins + 1) - 0.5) * bin_hz
    lo, hi = edges[:-1], edges[1:]
    w = np.zeros(n_bins)
    if peak > left:
        a = np.clip(lo, left, peak)
        b = np.clip(hi, left, peak)
        w += ((b - left) ** 2 - (a - left) ** 2) / (2.0 * (peak - left))
    if right > peak:
        a = np.clip(lo, peak, right)
        b = np.clip(hi, peak, right)
        w += ((right - a) ** 2 - (right - b) ** 2) / (2.0 * (right - peak))
    return w / bin_hz


def build_linear_filterbank(n_filters=70, n_fft=512, sample_rate=16000) -> FilterBank:
    """Triangular filters with uniform spacing from 0 Hz to Nyquist.

    n_filters + 2 boundary points split [0, Nyquist] evenly; filter i
    rises over [b_i, b_{i+1}] and falls over [b_{i+1}, b_{i+2}].
    """
    if n_filters < 1:
        raise InvalidConfig("need at least one filter")
    nyquist = sample_rate / 2.0
    bounds = nyquist * np.arange(n_filters + 2) / (n_filters + 1)
    return _build_filterbank(bounds, n_fft, sample_rate, scale="linear")


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(n_filters=30, n_fft=512, sample_rate=16000) -> FilterBank:
    """Triangular filters with boundary points equally spaced in mel."""
    if n_filters < 1:
        raise InvalidConfig("need at least one filter")
    mel_bounds = np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_filters + 2)
    bounds = _mel_to_hz(mel_bounds)
    bounds[0] = 0.0
    bounds[-1] = sample_rate / 2.0
    return _build_filterbank(bounds, n_fft, sample_rate, scale="mel")


def _build_filterbank(bounds, n_fft, sample_rate, scale) -> FilterBank:
    n_bins = n_fft // 2 + 1
    bin_hz = sample_rate / n_fft
    n_filters = len(bounds) - 2
    weights = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        weights[i] = _triangle_bin_weights(
            bounds[i], bounds[i + 1], bounds[i + 2], n_bins, bin_hz
        )
    return FilterBank(weights=weights, center_freqs=np.array(bounds[1:-1]), scale=scale)


def apply_filterbank_log(spectrum: np.ndarray, fb: FilterBank, floor=LOG_FLOOR) -> np.ndarray:
    """log(filterbank energies), floored to keep digital silence finite."""
    spectrum = np.atleast_2d(np.asarray(spectrum, dtype=np.float64))
    if spectrum.shape[1] != fb.weights.shape[1]:
        raise DimensionMismatch(
            f"spectrum has {spectrum.shape[1]} bins, filterbank expects {fb.weights.shape[1]}"
        )
    energies = spectrum @ fb.weights.T
    return np.log(np.maximum(energies, floor))


def mvn_sliding(features, window_s=0.5):
    """Sliding mean/variance normalization over a centered window.

    The window covers [t - w//2, t + w//2] frames, clipped at the edges;
    the standard deviation is floored at 1e-8 so constant stretches map
    to zero. Accepts and returns either a FeatureMatrix or a raw array.
    """
    matrix = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if matrix.shape[0] == 0:
        raise EmptyFeatures("cannot normalize an empty feature matrix")
    shift = features.frame_shift_s if isinstance(features, FeatureMatrix) else 0.010
    half = int(round(window_s / shift)) // 2

    n = matrix.shape[0]
    t = np.arange(n)
    lo = np.maximum(t - half, 0)
    hi = np.minimum(t + half, n - 1)
    count = (hi - lo + 1).astype(np.float64)[:, None]

    zeros = np.zeros((1, matrix.shape[1]))
    c1 = np.vstack([zeros, np.cumsum(matrix, axis=0)])
    c2 = np.vstack([zeros, np.cumsum(matrix * matrix, axis=0)])
    mean = (c1[hi + 1] - c1[lo]) / count
    var = np.maximum((c2[hi + 1] - c2[lo]) / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)

    out = (matrix - mean) / std
    if isinstance(features, FeatureMatrix):
        return FeatureMatrix(out, features.frame_shift_s, features.kind)
    return out


def extract_lfb(
    audio: AudioBuffer,
    n_filters=70,
    frame_len_s=0.025,
    hop_s=0.010,
    n_fft=512,
    log_floor=LOG_FLOOR,
    filterbank: FilterBank | None = None,
) -> FeatureMatrix:
    """Full linear-filterbank front end for one utterance."""
    fb = filterbank or build_linear_filterbank(n_filters, n_fft, audio.sample_rate)
    frames = frame_signal(audio, frame_len_s, hop_s)
    values = apply_filterbank_log(power_spectrum(frames, n_fft), fb, log_floor)
    return FeatureMatrix(values, hop_s, "lfb")


def extract_mfcc(
    audio: AudioBuffer,
    n_coeffs=20,
    n_mel_filters=30,
    frame_len_s=0.025,
    hop_s=0.010,
    n_fft=512,
    log_floor=LOG_FLOOR,
    filterbank: FilterBank | None = None,
) -> FeatureMatrix:
    """Mel filterbank -> log -> orthonormal DCT-II, keeping n_coeffs cepstra."""
    fb = filterbank or build_mel_filterbank(n_mel_filters, n_fft, audio.sample_rate)
    frames = frame_signal(audio, frame_len_s, hop_s)
    log_mel = apply_filterbank_log(power_spectrum(frames, n_fft), fb, log_floor)
    cepstra = scipy.fft.dct(log_mel, type=2, axis=1, norm="ortho")[:, :n_coeffs]
    return FeatureMatrix(cepstra, hop_s, "mfcc")


class LfbExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer from AudioBuffer to linear-filterbank features."""

    def __init__(self, n_filters=70, frame_len_s=0.025, hop_s=0.010, n_fft=512, log_floor=LOG_FLOOR):
        self.n_filters = n_filters
        self.frame_len_s = frame_len_s
        self.hop_s = hop_s
        self.n_fft = n_fft
        self.log_floor = log_floor

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        if isinstance(X, AudioBuffer):
            return self._one(X)
        return [self._one(a) for a in X]

    def _one(self, audio: AudioBuffer) -> FeatureMatrix:
        fb = self._filterbank(audio.sample_rate)
        return extract_lfb(
            audio, self.n_filters, self.frame_len_s, self.hop_s, self.n_fft,
            self.log_floor, filterbank=fb,
        )

    def _filterbank(self, sample_rate) -> FilterBank:
        cached = getattr(self, "_fb_cache", None)
        if cached is None or cached[0] != sample_rate:
            fb = build_linear_filterbank(self.n_filters, self.n_fft, sample_rate)
            self._fb_cache = (sample_rate, fb)
        return self._fb_cache[1]


class MfccExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer from AudioBuffer to MFCC features."""

    def __init__(self, n_coeffs=20, n_mel_filters=30, frame_len_s=0.025, hop_s=0.010, n_fft=512, log_floor=LOG_FLOOR):
        self.n_coeffs = n_coeffs
        self.n_mel_filters = n_mel_filters
        self.frame_len_s = frame_len_s
        self.hop_s = hop_s
        self.n_fft = n_fft
        self.log_floor = log_floor

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        if isinstance(X, AudioBuffer):
            return self._one(X)
        return [self._one(a) for a in X]

    def _one(self, audio: AudioBuffer) -> FeatureMatrix:
        cached = getattr(self, "_fb_cache", None)
        if cached is None or cached[0] != audio.sample_rate:
            fb = build_mel_filterbank(self.n_mel_filters, self.n_fft, audio.sample_rate)
            self._fb_cache = (audio.sample_rate, fb)
        return extract_mfcc(
            audio, self.n_coeffs, self.n_mel_filters, self.frame_len_s,
            self.hop_s, self.n_fft, self.log_floor, filterbank=self._fb_cache[1],
        )
