"""Build a dialect speech corpus from raw recordings, one resumable stage at a time."""

from .config import PipelineConfig, load_config
from .records import AgeStage, Domain, Emotion, Gender, LabelTier, ManifestError, UtteranceRecord, read_manifest, write_manifest

__all__ = [
    "AgeStage",
    "Domain",
    "Emotion",
    "Gender",
    "LabelTier",
    "ManifestError",
    "PipelineConfig",
    "UtteranceRecord",
    "load_config",
    "read_manifest",
    "write_manifest",
]
__version__ = "0.1.0"
