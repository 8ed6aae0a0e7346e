"""
mctailor - Tailored Sampling for N-gram Language Models

Fine-tunes an interpolated n-gram model on a domain corpus, learns a stack
of ratio estimators that detect where the model over-estimates real text,
and samples from the tailored distribution with rejection sampling, SMC or
early rejection sampling.
"""

__version__ = "0.1.0"

from .core.lm import NGramModel, finetune, train
from .core.pipeline import PipelineRunner
from .core.ratio import EstimatorStack, build_stack
from .core.tailor import TailoredDistribution, ers_sample, rejection_sample, smc_sample
from .schemas.corpus import Corpus, Vocab
from .schemas.sampling import SampleBatch, SamplingAlgorithm

__all__ = [
    # Models
    "NGramModel",
    "train",
    "finetune",
    # Tailoring
    "EstimatorStack",
    "build_stack",
    "TailoredDistribution",
    "rejection_sample",
    "ers_sample",
    "smc_sample",
    # Data
    "Corpus",
    "Vocab",
    "SampleBatch",
    "SamplingAlgorithm",
    # Pipeline
    "PipelineRunner",
]
