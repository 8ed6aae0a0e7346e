"""Scorers with known ratios and small sentence helpers for the tests."""

from typing import Callable, Mapping, Sequence

from mctailor.core.fixtures import ORACLE_DOMAIN, ORACLE_MAX_LEN, ORACLE_WORDS
from mctailor.schemas.corpus import EOS_ID


MAX_LEN = 4
A, B, C = 2, 3, 4
WORD_OF = {A: "a", B: "b", C: "c"}


class RuleScorer:
    """gamma = high when the sentence starts with `first`, low otherwise."""

    def __init__(self, first: int = A, high: float = 3.0, low: float = 0.8):
        self.first = first
        self.high = high
        self.low = low

    def gamma(self, sentence: Sequence[int]) -> float:
        return self.high if sentence and sentence[0] == self.first else self.low


class RulePrefixScorer:
    """Exact continuation minimum of a RuleScorer: the first token decides."""

    def __init__(self, rule: RuleScorer):
        self.rule = rule

    def gamma_prefix(self, prefix: Sequence[int]) -> float:
        if not prefix:
            return min(self.rule.high, self.rule.low)
        return self.rule.gamma(prefix)


class EndScorer:
    """gamma = high when the last word is `last`, low otherwise."""

    def __init__(self, last: int = C, high: float = 3.0, low: float = 1.0):
        self.last = last
        self.high = high
        self.low = low

    def gamma(self, sentence: Sequence[int]) -> float:
        words = [t for t in sentence if t != EOS_ID]
        return self.high if words and words[-1] == self.last else self.low


class LengthScorer:
    """gamma grows with sentence length."""

    def gamma(self, sentence: Sequence[int]) -> float:
        return 0.5 * (len(sentence) - 1) + 0.5


class ConstantPrefixScorer:
    def __init__(self, value: float):
        self.value = value

    def gamma_prefix(self, prefix: Sequence[int]) -> float:
        return self.value


def domain_probability(sentence: Sequence[int]) -> float:
    """Exact probability of a sentence under the oracle domain generator."""
    p, previous = 1.0, ""
    words = sentence[:-1]
    for token in words:
        word = WORD_OF.get(token)
        if word is None:
            return 0.0
        p *= ORACLE_DOMAIN[previous][ORACLE_WORDS.index(word)]
        previous = word
    if len(words) < ORACLE_MAX_LEN:
        p *= ORACLE_DOMAIN[previous][3]
    return p


class ExactRatioScorer:
    """gamma = P(x) / P_domain(x) clamped to [1 / gamma_max, gamma_max]."""

    def __init__(
        self,
        probabilities: Mapping[tuple, float],
        target: Callable[[Sequence[int]], float] = domain_probability,
        gamma_max: float = 20.0,
    ):
        self.probabilities = probabilities
        self.target = target
        self.gamma_max = gamma_max

    def gamma(self, sentence: Sequence[int]) -> float:
        p = self.probabilities.get(tuple(sentence), 0.0)
        q = self.target(sentence)
        if q <= 0.0:
            return self.gamma_max
        return min(max(p / q, 1.0 / self.gamma_max), self.gamma_max)


def eos_terminated(sentence: Sequence[int]) -> bool:
    return len(sentence) > 0 and sentence[-1] == EOS_ID and EOS_ID not in sentence[:-1]
