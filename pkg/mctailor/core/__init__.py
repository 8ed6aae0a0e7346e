"""mctailor Core Module - models, estimators, samplers and the oracle."""

from .lm import NGramModel
from .ratio import EstimatorStack, RatioEstimator, PrefixRatioEstimator
from .tailor import TailoredDistribution, sample

__all__ = [
    "NGramModel",
    "EstimatorStack",
    "RatioEstimator",
    "PrefixRatioEstimator",
    "TailoredDistribution",
    "sample",
]
