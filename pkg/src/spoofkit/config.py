"""Pipeline configuration: one INI-style file covering every tunable.

Sections mirror the library modules. Unknown sections or keys are
rejected so a typo cannot silently fall back to a default. Values keep
the documented defaults unless the file (or a command-line override of
the form section.key=value) says otherwise.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .errors import InvalidConfig


@dataclass
class FeatureSection:
    n_filters: int = 70
    frame_len_s: float = 0.025
    frame_shift_s: float = 0.010
    n_fft: int = 512
    n_mfcc: int = 20
    n_mel_filters: int = 30


@dataclass
class SadSection:
    enabled: bool = True
    mvn_window_s: float = 0.5
    context_frames: int = 31
    hidden_dims: tuple = (500, 100)
    smooth_window_s: float = 0.5
    threshold: float = 0.5
    pad_s: float = 1.0 / 3.0
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 256


@dataclass
class AugmentSection:
    snr_db: float = 5.0
    n_masks: int = 2
    mask_max_width: int = 7


@dataclass
class NnetSection:
    width_multiplier: float = 1.0
    se_enabled: bool = True
    se_reduction: int = 16
    embedding_dim: int = 64
    stem_maxpool: bool = True
    alpha: float = 20.0
    margin_target: float = 0.9
    margin_spoof: float = 0.2


@dataclass
class OptimizerSection:
    learning_rate: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-5
    weight_decay: float = 0.01


@dataclass
class TrainingSection:
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 12
    crop_frames: int = 500


@dataclass
class EmbeddingSection:
    window: int = 500
    shift: int = 10
    backend_train_shift: int = 10


@dataclass
class BackendSection:
    route: str = "plda"
    lda_dim: int = 19
    plda_q: int = 16
    plda_iters: int = 20
    gmm_components: int = 64
    gmm_iters: int = 10


@dataclass
class ScoringSection:
    smooth_len: int = 10
    top_frac: float = 0.05
    repeats: int = 1


@dataclass
class PipelineConfig:
    features: FeatureSection = field(default_factory=FeatureSection)
    sad: SadSection = field(default_factory=SadSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    nnet: NnetSection = field(default_factory=NnetSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    backend: BackendSection = field(default_factory=BackendSection)
    scoring: ScoringSection = field(default_factory=ScoringSection)

    def section(self, name):
        if name not in _SECTION_FIELDS:
            raise InvalidConfig(f"unknown config section [{name}]")
        return getattr(self, name)


_SECTION_FIELDS = {
    f.name: {g.name: g for g in fields(f.default_factory)}
    for f in fields(PipelineConfig)
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _coerce(section, key, raw, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(part) for part in raw.split(",") if part.strip())
        return raw
    except ValueError as exc:
        raise InvalidConfig(f"[{section}] {key}: cannot parse {raw!r}") from exc


def _assign(config, section, key, raw):
    if section not in _SECTION_FIELDS:
        raise InvalidConfig(f"unknown config section [{section}]")
    if key not in _SECTION_FIELDS[section]:
        raise InvalidConfig(f"unknown key {key!r} in section [{section}]")
    target = getattr(config, section)
    value = _coerce(section, key, raw, getattr(target, key))
    setattr(target, key, value)


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Build a PipelineConfig from defaults, an optional file, and
    optional section.key=value override strings (applied last)."""
    config = PipelineConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise InvalidConfig(f"{path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                _assign(config, section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise InvalidConfig(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        _assign(config, section.strip(), key.strip(), raw)
    _validate(config)
    return config


def _validate(config: PipelineConfig):
    if config.backend.route not in ("plda", "gmm"):
        raise InvalidConfig(f"backend.route must be plda or gmm, got {config.backend.route!r}")
    if not config.nnet.margin_target > config.nnet.margin_spoof:
        raise InvalidConfig("nnet.margin_target must exceed nnet.margin_spoof")
    if config.embedding.window < 1 or config.embedding.shift < 1:
        raise InvalidConfig("embedding window and shift must be positive")
    if not 0.0 < config.scoring.top_frac <= 1.0:
        raise InvalidConfig("scoring.top_frac must lie in (0, 1]")


def render_config(config: PipelineConfig) -> str:
    """Config as INI text with every key explicit (stable ordering)."""
    lines = []
    for section_name, keys in _SECTION_FIELDS.items():
        lines.append(f"[{section_name}]")
        target = getattr(config, section_name)
        for key in keys:
            value = getattr(target, key)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
