"""Partial synthetic-speech detection toolkit.

Feature extraction (linear filterbank, MFCC), neural speech-activity
detection, a from-scratch residual embedding network with a one-class
margin loss, LDA/PLDA and GMM backends, and pooled utterance scoring
with EER evaluation. See the command line entry point ``spoofkit`` for
the end-to-end pipeline.
"""

from .audio import AudioBuffer, DatasetManifest, ManifestEntry, load_manifest, read_wav, save_manifest, write_wav
from .config import PipelineConfig, load_config
from .features import (
    FeatureMatrix,
    FilterBank,
    LfbExtractor,
    MfccExtractor,
    build_linear_filterbank,
    build_mel_filterbank,
    extract_lfb,
    extract_mfcc,
    mvn_sliding,
)
from .pipeline import DetectionPipeline, score_utterance
from .scoring import EvalReport, ScoreSeries, compute_eer, interleaved_aware, score_average

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "DatasetManifest",
    "DetectionPipeline",
    "EvalReport",
    "FeatureMatrix",
    "FilterBank",
    "LfbExtractor",
    "ManifestEntry",
    "MfccExtractor",
    "PipelineConfig",
    "ScoreSeries",
    "build_linear_filterbank",
    "build_mel_filterbank",
    "compute_eer",
    "extract_lfb",
    "extract_mfcc",
    "interleaved_aware",
    "load_config",
    "load_manifest",
    "mvn_sliding",
    "read_wav",
    "save_manifest",
    "score_average",
    "score_utterance",
    "write_wav",
    "__version__",
]
