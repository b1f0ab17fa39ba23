"""Audio and manifest I/O.

Everything downstream works on float mono at 16 kHz; loading enforces
that contract instead of resampling. WAV support is deliberately
minimal: RIFF little-endian, PCM, 16-bit, one channel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFile, DuplicatePath, ParseError, UnsupportedFormat

PIPELINE_RATE = 16000
_INT16_SCALE = 32768.0

LABELS = ("pristine", "spoof")
PARTITIONS = ("train", "dev", "eval")


@dataclass
class AudioBuffer:
    """Mono sample sequence in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int = PIPELINE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


def read_wav(path) -> AudioBuffer:
    """Read a 16 kHz / 16-bit / mono PCM WAV file.

    Samples are scaled to [-1, 1] by dividing by 32768. Anything that is
    not the supported format raises UnsupportedFormat; structural damage
    (bad magic, truncated chunks) raises CorruptFile.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise CorruptFile(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise CorruptFile(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)

    if fmt is None or data is None:
        raise CorruptFile(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise CorruptFile(f"{path}: fmt chunk too small")

    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format != 1:
        raise UnsupportedFormat(f"{path}: not integer PCM (format tag {audio_format})")
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, expected mono")
    if bits != 16:
        raise UnsupportedFormat(f"{path}: {bits}-bit samples, expected 16")
    if rate != PIPELINE_RATE:
        raise UnsupportedFormat(f"{path}: sample rate {rate}, expected {PIPELINE_RATE}")
    if len(data) % 2:
        raise CorruptFile(f"{path}: odd data chunk length")

    ints = np.frombuffer(data, dtype="<i2")
    return AudioBuffer(ints.astype(np.float64) / _INT16_SCALE, rate)


def write_wav(path, audio: AudioBuffer):
    """Write an AudioBuffer as 16-bit mono PCM."""
    ints = np.clip(np.round(audio.samples * _INT16_SCALE), -32768, 32767)
    data = ints.astype("<i2").tobytes()
    fmt = struct.pack(
        "<HHIIHH", 1, 1, audio.sample_rate, audio.sample_rate * 2, 2, 16
    )
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(data)))
        fh.write(b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt)) + fmt)
        fh.write(b"data" + struct.pack("<I", len(data)) + data)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    class_id: str
    partition: str


@dataclass
class DatasetManifest:
    """Ordered dataset listing: (path, label, class_id, partition) rows."""

    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def filter(self, partition=None, label=None) -> "DatasetManifest":
        kept = [
            e
            for e in self.entries
            if (partition is None or e.partition == partition)
            and (label is None or e.label == label)
        ]
        return DatasetManifest(kept)

    def class_ids(self) -> list[str]:
        seen = dict.fromkeys(e.class_id for e in self.entries)
        return list(seen)


def load_manifest(path) -> DatasetManifest:
    """Parse a tab-separated manifest file.

    Format: ``<path>\\t<label>\\t<class_id>\\t<partition>`` per line, label
    in {pristine, spoof}, partition in {train, dev, eval}. Lines starting
    with ``#`` and blank lines are skipped. Errors name the offending
    1-based line number; duplicate paths are rejected.
    """
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(line_no, f"expected 4 tab-separated fields, got {len(fields)}")
            file_path, label, class_id, partition = fields
            if not file_path:
                raise ParseError(line_no, "empty path")
            if label not in LABELS:
                raise ParseError(line_no, f"unknown label {label!r}, expected one of {LABELS}")
            if not class_id:
                raise ParseError(line_no, "empty class_id")
            if partition not in PARTITIONS:
                raise ParseError(
                    line_no, f"unknown partition {partition!r}, expected one of {PARTITIONS}"
                )
            if file_path in seen:
                raise DuplicatePath(f"line {line_no}: duplicate path {file_path!r}")
            seen.add(file_path)
            entries.append(ManifestEntry(file_path, label, class_id, partition))
    return DatasetManifest(entries)


def save_manifest(manifest: DatasetManifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest:
            fh.write(f"{e.path}\t{e.label}\t{e.class_id}\t{e.partition}\n")
