"""Training-time augmentation: additive noise at a target SNR and
feature-domain frequency masking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer
from .errors import DimensionMismatch, InvalidConfig, ZeroPower
from .features import FeatureMatrix
from .validation import ensure_rng


@dataclass
class FreqMaskConfig:
    """Per-sample frequency masking policy."""

    n_masks: int = 2
    max_width: int = 7
    # masked channels are filled with the global mean of the input matrix

    def __post_init__(self):
        if self.n_masks < 0 or self.max_width < 1:
            raise InvalidConfig("n_masks must be >= 0 and max_width >= 1")


def _rms(x) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def mix_components(clean: AudioBuffer, noise: AudioBuffer, snr_db=5.0, seed=0):
    """Pick a noise crop and scale it to sit snr_db below the clean signal.

    Returns (clean_samples, scaled_noise_crop) before summation so the
    achieved SNR can be measured on the two addends. The gain is
    g = rms(clean) / rms(crop) * 10^(-snr_db / 20).
    """
    if clean.sample_rate != noise.sample_rate:
        raise DimensionMismatch("clean and noise sample rates differ")
    if len(noise) < len(clean):
        raise DimensionMismatch("noise must be at least as long as the clean signal")
    rng = ensure_rng(seed)
    offset = int(rng.integers(0, len(noise) - len(clean) + 1))
    crop = noise.samples[offset : offset + len(clean)]

    clean_rms = _rms(clean.samples)
    crop_rms = _rms(crop)
    if clean_rms == 0.0 or crop_rms == 0.0:
        raise ZeroPower("clean signal or noise crop has zero RMS")
    gain = clean_rms / crop_rms * 10.0 ** (-snr_db / 20.0)
    return clean.samples, gain * crop


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db=5.0, seed=0) -> AudioBuffer:
    """Additive mix at the target SNR.

    If the sum leaves [-1, 1] the whole signal is rescaled by its peak,
    which preserves the component ratio while restoring the range
    invariant.
    """
    clean_part, noise_part = mix_components(clean, noise, snr_db, seed)
    mixed = clean_part + noise_part
    peak = float(np.max(np.abs(mixed)))
    if peak > 1.0:
        mixed = mixed / peak
    return AudioBuffer(mixed, clean.sample_rate)


def frequency_mask(features, cfg: FreqMaskConfig = None, seed=0):
    """Blank random frequency bands with the pre-mask global mean.

    For each of cfg.n_masks masks: width f ~ Uniform{1..max_width},
    start f0 ~ Uniform{0..D-f}; channels f0..f0+f-1 are set to the mean
    of the original matrix. Deterministic given the seed. Accepts a
    FeatureMatrix or a raw (T, D) array and returns the same type; the
    frequency axis is the column axis.
    """
    cfg = cfg or FreqMaskConfig()
    matrix = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    t, d = matrix.shape
    if d < cfg.max_width:
        raise DimensionMismatch(
            f"feature dimension {d} smaller than max mask width {cfg.max_width}"
        )
    rng = ensure_rng(seed)
    fill = matrix.mean()
    out = matrix.copy()
    for _ in range(cfg.n_masks):
        width = int(rng.integers(1, cfg.max_width + 1))
        start = int(rng.integers(0, d - width + 1))
        out[:, start : start + width] = fill
    if isinstance(features, FeatureMatrix):
        return FeatureMatrix(out, features.frame_shift_s, features.kind)
    return out
