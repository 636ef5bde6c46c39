"""Bridge from emitted SFT datasets to launched fine-tuning runs."""

__version__ = "0.1.0"

from .bridge import (
    DEFAULT_MAX_STEPS,
    LEARNING_RATE,
    LORA_ALPHA,
    LORA_RANK,
    ManifestError,
    MissingDependencyError,
    RunHandle,
    StageSequenceError,
    TrainingError,
    emit_training_config,
    run_finetune,
)

__all__ = [
    "DEFAULT_MAX_STEPS",
    "LEARNING_RATE",
    "LORA_ALPHA",
    "LORA_RANK",
    "ManifestError",
    "MissingDependencyError",
    "RunHandle",
    "StageSequenceError",
    "TrainingError",
    "emit_training_config",
    "run_finetune",
]
