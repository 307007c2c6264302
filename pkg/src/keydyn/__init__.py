"""Keystroke-dynamics authentication: feature extraction, transformer
encoders, metric losses, one-class scoring, and an EER evaluation harness."""

from .dataset import (
    KeyEvent,
    KeystrokeSession,
    generate_synthetic,
    import_sessions,
    read_sessions,
    split_subjects,
    write_sessions,
)
from .encoder import (
    EncoderConfig,
    KeystrokeEncoder,
    build_model,
    embed_sequences,
    load_checkpoint,
    save_checkpoint,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    DataError,
    KeydynError,
    NumericFailure,
    ProtocolError,
)
from .evaluation import ProtocolConfig, adaptive_eer, eer, evaluate, global_eer, run_protocol
from .features import NormStats, fit_norm_stats, vectorize
from .losses import LossConfig
from .metrics import Metric
from .scoring import ScorerConfig, fit_scorer
from .training import TrainConfig, desk_profile, paper_profile, train

__version__ = "0.1.0"

__all__ = [
    "KeyEvent",
    "KeystrokeSession",
    "generate_synthetic",
    "import_sessions",
    "read_sessions",
    "split_subjects",
    "write_sessions",
    "EncoderConfig",
    "KeystrokeEncoder",
    "build_model",
    "embed_sequences",
    "load_checkpoint",
    "save_checkpoint",
    "KeydynError",
    "ConfigurationError",
    "DataError",
    "CheckpointError",
    "ProtocolError",
    "NumericFailure",
    "ProtocolConfig",
    "adaptive_eer",
    "eer",
    "evaluate",
    "global_eer",
    "run_protocol",
    "NormStats",
    "fit_norm_stats",
    "vectorize",
    "LossConfig",
    "Metric",
    "ScorerConfig",
    "fit_scorer",
    "TrainConfig",
    "desk_profile",
    "paper_profile",
    "train",
]
