"""ProtoLens: prototype-based text classification with sub-sentence span
explanations, small enough to train on a desk machine and transparent enough
to audit gradient by gradient.
"""

__version__ = "0.1.0"

from .config import AblationFlags, AlignmentConfig, LossConfig, TrainConfig
from .data import Instance, generate_synthetic, load_corpus, save_corpus
from .errors import (
    CheckpointError,
    ConfigError,
    CorpusError,
    NotAlignedError,
    ProtoLensError,
)
from .model import ProtoLensModel
from .reporting import (
    ExplanationReport,
    PrototypeTable,
    explain_instance,
    prototype_table,
    render,
)
from .training import (
    baseline_tfidf_logreg,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    train_tfidf_baseline,
)

__all__ = [
    "AblationFlags",
    "AlignmentConfig",
    "CheckpointError",
    "ConfigError",
    "CorpusError",
    "ExplanationReport",
    "Instance",
    "LossConfig",
    "NotAlignedError",
    "ProtoLensError",
    "ProtoLensModel",
    "PrototypeTable",
    "TrainConfig",
    "baseline_tfidf_logreg",
    "evaluate",
    "explain_instance",
    "generate_synthetic",
    "load_checkpoint",
    "load_corpus",
    "prototype_table",
    "render",
    "save_checkpoint",
    "save_corpus",
    "train",
    "train_tfidf_baseline",
    "__version__",
]
