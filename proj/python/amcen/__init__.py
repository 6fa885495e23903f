"""Python bindings for the AMCEN forecasting core."""

from ._amcen import (
    CheckpointError,
    ContractViolation,
    DataError,
    Dataset,
    Error,
    HistoryIndex,
    Model,
    SequencingError,
    StalenessError,
    TrainingError,
    ValidationError,
    contrastive_loss,
    default_config,
    rank_of,
)

__all__ = [
    "CheckpointError",
    "ContractViolation",
    "DataError",
    "Dataset",
    "Error",
    "HistoryIndex",
    "Model",
    "SequencingError",
    "StalenessError",
    "TrainingError",
    "ValidationError",
    "contrastive_loss",
    "default_config",
    "rank_of",
]
