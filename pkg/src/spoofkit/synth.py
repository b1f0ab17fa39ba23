"""Synthetic desk-scale corpus for end-to-end exercises.

Pristine classes are low-band harmonic tone complexes; spoof classes
are high-band inharmonic complexes. Each utterance carries silence
padding (so speech-activity detection has work to do), per-utterance
amplitude and frequency jitter (so classes have within-class spread),
and a slow tremolo envelope. Partially spoofed utterances splice a
spoof-class segment into the speech region of a pristine utterance.

Everything is deterministic given the seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, ManifestEntry, save_manifest, write_wav
from .validation import ensure_rng

SAMPLE_RATE = 16000

# fundamental Hz per class; pristine harmonics stay under 2 kHz,
# spoof partials live above 2.5 kHz
PRISTINE_F0 = (260.0, 340.0, 430.0, 520.0)
SPOOF_F0 = (2700.0, 3250.0, 3900.0, 4600.0)
_PRISTINE_PARTIALS = ((1.0, 1.0), (2.0, 0.6), (3.0, 0.35))
_SPOOF_PARTIALS = ((1.0, 1.0), (1.41, 0.5))
_NOISE_FLOOR = 1e-4
_PEAK = 0.35


def _complex_tone(f0, partials, n, rng):
    t = np.arange(n) / SAMPLE_RATE
    wave = np.zeros(n)
    for ratio, amp in partials:
        freq = f0 * ratio * (1.0 + rng.uniform(-0.015, 0.015))
        wave += amp * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
    rate = rng.uniform(2.0, 5.0)
    tremolo = 1.0 + 0.25 * np.sin(2.0 * np.pi * rate * t + rng.uniform(0.0, 2.0 * np.pi))
    return wave * tremolo


def _speech_block(kind, class_idx, n, rng):
    if kind == "pristine":
        return _complex_tone(PRISTINE_F0[class_idx], _PRISTINE_PARTIALS, n, rng)
    return _complex_tone(SPOOF_F0[class_idx], _SPOOF_PARTIALS, n, rng)


@dataclass
class ToyUtterance:
    audio: AudioBuffer
    label: str
    class_id: str
    speech_start_s: float
    speech_end_s: float


def synth_utterance(kind, class_idx, duration_s=3.6, seed=0, spoof_fraction=0.0, spoof_class_idx=None):
    """One toy utterance.

    kind "pristine" or "spoof" builds a single-source utterance; a
    positive spoof_fraction splices that fraction of the speech region
    with material from spoof_class_idx (making a partial spoof; the
    label becomes "spoof")."""
    rng = ensure_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    lead = int(round(rng.uniform(0.35, 0.6) * SAMPLE_RATE))
    tail = int(round(rng.uniform(0.35, 0.6) * SAMPLE_RATE))
    n_speech = n - lead - tail

    speech = _speech_block(kind, class_idx, n_speech, rng)
    label = "pristine" if kind == "pristine" else "spoof"
    class_id = f"p{class_idx + 1}" if kind == "pristine" else f"g{class_idx + 1}"

    if spoof_fraction > 0.0:
        span = int(round(spoof_fraction * n_speech))
        offset = int(rng.integers(0, n_speech - span + 1))
        insert = _speech_block("spoof", spoof_class_idx, span, rng)
        speech[offset:offset + span] = insert
        label = "spoof"
        class_id = f"g{spoof_class_idx + 1}"

    gain = _PEAK * 10.0 ** rng.uniform(-0.2, 0.2)
    speech = speech * (gain / max(np.max(np.abs(speech)), 1e-9))
    samples = rng.normal(0.0, _NOISE_FLOOR, size=n)
    samples[lead:lead + n_speech] += speech
    samples = np.clip(samples, -1.0, 1.0)
    return ToyUtterance(
        AudioBuffer(samples, SAMPLE_RATE),
        label,
        class_id,
        lead / SAMPLE_RATE,
        (lead + n_speech) / SAMPLE_RATE,
    )


def synth_noise(duration_s, seed=0, level=0.1):
    """Band-passed noise buffer for augmentation exercises."""
    rng = ensure_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    noise = rng.normal(0.0, 1.0, size=n)
    kernel = np.hanning(9)
    noise = np.convolve(noise, kernel / kernel.sum(), mode="same")
    noise = noise * (level / max(np.std(noise), 1e-9))
    return AudioBuffer(np.clip(noise, -1.0, 1.0), SAMPLE_RATE)


def build_toy_corpus(
    out_dir,
    n_train=200,
    n_dev=40,
    n_eval_full=50,
    n_eval_partial=50,
    duration_s=3.6,
    spoof_fraction=0.2,
    seed=0,
):
    """Write wav files plus manifests; returns the manifest paths.

    train/dev/eval_full hold half pristine, half fully spoofed
    utterances; eval_partial holds half pristine and half partially
    spoofed (spoof_fraction of the speech region replaced). Class ids
    rotate across the four classes per group.
    """
    rng = ensure_rng(seed)
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)

    def make_split(name, count, partition, partial):
        entries = []
        for i in range(count):
            pristine = i % 2 == 0
            class_idx = (i // 2) % 4
            utt_seed = int(rng.integers(0, 2**31 - 1))
            if pristine:
                utt = synth_utterance("pristine", class_idx, duration_s, utt_seed)
            elif partial:
                utt = synth_utterance(
                    "pristine",
                    (i // 2 + 1) % 4,
                    duration_s,
                    utt_seed,
                    spoof_fraction=spoof_fraction,
                    spoof_class_idx=class_idx,
                )
            else:
                utt = synth_utterance("spoof", class_idx, duration_s, utt_seed)
            rel = os.path.join("wav", f"{name}_{i:04d}.wav")
            write_wav(os.path.join(out_dir, rel), utt.audio)
            entries.append(ManifestEntry(rel, utt.label, utt.class_id, partition))
        manifest_path = os.path.join(out_dir, f"{name}.tsv")
        save_manifest(entries, manifest_path)
        return manifest_path

    return {
        "train": make_split("train", n_train, "train", partial=False),
        "dev": make_split("dev", n_dev, "dev", partial=False),
        "eval_full": make_split("eval_full", n_eval_full, "eval", partial=False),
        "eval_partial": make_split("eval_partial", n_eval_partial, "eval", partial=True),
    }
