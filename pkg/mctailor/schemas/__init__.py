"""mctailor Schemas Package - data, sampling, report and error types."""

from .corpus import Corpus, Sentence, Vocab, EOS_ID, UNK_ID
from .errors import (
    MCTailorError,
    UsageError,
    DataError,
    TrainingDivergedError,
    EnumerationGuardError,
    StarvationError,
    BudgetExceededError,
    VerificationError,
)
from .pipeline import Stage, StageStatus, StageResult, RunLog
from .reports import MetricsReport, VerificationReport
from .sampling import SampleBatch, SampleStats, SamplingAlgorithm

__all__ = [
    "Corpus",
    "Sentence",
    "Vocab",
    "EOS_ID",
    "UNK_ID",
    "MCTailorError",
    "UsageError",
    "DataError",
    "TrainingDivergedError",
    "EnumerationGuardError",
    "StarvationError",
    "BudgetExceededError",
    "VerificationError",
    "Stage",
    "StageStatus",
    "StageResult",
    "RunLog",
    "MetricsReport",
    "VerificationReport",
    "SampleBatch",
    "SampleStats",
    "SamplingAlgorithm",
]
