"""
mctailor Enumeration Oracle

Brute-force ground truth for small vocabularies: exact model and tailored
distributions under the forced-EOS length cap, exact continuation minima of
the composite ratio, and the statistical tests used to check the samplers.
"""

from __future__ import annotations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy import stats as sps

from ..schemas.corpus import Sentence, Vocab, EOS_ID
from ..schemas.errors import DataError, EnumerationGuardError
from ..schemas.sampling import SampleBatch
from .lm import NGramModel, sentence_logprob
from .ratio import EstimatorStack, StackLayer


logger = logging.getLogger(__name__)

ENUMERATION_GUARD = 10_000_000
MIN_EXPECTED = 5.0


# =============================================================================
# Exact Distribution
# =============================================================================

@dataclass
class ExactDistribution:
    """
    Exact probabilities of every sentence up to max_len.

    leftover_mass is the model mass not accounted for by the entries;
    forced_eos_mass is the mass the uncapped model would have put on longer
    sequences, folded into the cap-length sentences.
    """
    entries: Dict[Sentence, float]
    leftover_mass: float = 0.0
    forced_eos_mass: float = 0.0
    Z: Optional[float] = None
    _cdf: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def probability(self, sentence: Sentence) -> float:
        return self.entries.get(tuple(sentence), 0.0)

    @property
    def support(self) -> List[Sentence]:
        """Sentences in lexicographic id order."""
        return sorted(self.entries)

    def sample(self, n: int, rng: np.random.Generator) -> List[Sentence]:
        """Inverse-CDF draws over the lexicographic support."""
        support = self.support
        if self._cdf is None:
            self._cdf = np.cumsum([self.entries[s] for s in support])
        u = rng.random(n) * self._cdf[-1]
        idx = np.minimum(np.searchsorted(self._cdf, u, side="right"), len(support) - 1)
        return [support[int(i)] for i in idx]

    def dump(self, vocab: Vocab) -> str:
        """'decoded sentence<TAB>probability' lines sorted by decoded text."""
        rows = sorted((vocab.render(s), p) for s, p in self.entries.items())
        return "".join(f"{text}\t{p!r}\n" for text, p in rows)


def _check_guard(vocab_size: int, depth: int) -> None:
    if depth > 0 and vocab_size ** depth > ENUMERATION_GUARD:
        raise EnumerationGuardError(
            "E_ENUM_GUARD",
            f"|V|^max_len = {vocab_size}^{depth} exceeds the enumeration guard "
            f"of {ENUMERATION_GUARD}",
            {"vocab_size": vocab_size, "depth": depth},
        )


def _walk(model: NGramModel, max_len: int) -> Tuple[Dict[Sentence, float], float]:
    """Depth-first enumeration; returns (entries, forced mass)."""
    entries: Dict[Sentence, float] = {}
    forced = 0.0
    stack: List[Tuple[Sentence, float]] = [((), 1.0)]
    while stack:
        prefix, p = stack.pop()
        d = model.dist(model.history_key(prefix))
        if len(prefix) >= max_len:
            entries[prefix + (EOS_ID,)] = p
            forced += p * (1.0 - float(d[EOS_ID]))
            continue
        entries[prefix + (EOS_ID,)] = p * float(d[EOS_ID])
        for w in range(model.vocab_size - 1, -1, -1):
            if w != EOS_ID:
                stack.append((prefix + (w,), p * float(d[w])))
    return entries, forced


def enumerate_model(
    model: NGramModel,
    max_len: int,
    max_forced_mass: Optional[float] = None,
) -> ExactDistribution:
    """
    Exact P_Model over all sentences of length <= max_len, EOS forced at the cap.

    leftover_mass is recomputed from the model's own capped sentence
    probabilities, so a walk that loses or double-counts mass shows up there.
    With max_forced_mass set, a cap that truncates that much mass or more
    raises E_FORCED_MASS.
    """
    _check_guard(model.vocab_size, max_len)
    entries, forced = _walk(model, max_len)
    entries = dict(sorted(entries.items()))
    scored = math.fsum(math.exp(sentence_logprob(model, s, max_len)) for s in entries)
    leftover = 1.0 - scored
    logger.debug(
        f"Enumerated {len(entries)} sentences (leftover {leftover:.3e}, forced {forced:.3e})"
    )
    if max_forced_mass is not None and forced >= max_forced_mass:
        raise DataError(
            "E_FORCED_MASS",
            f"Forced-EOS mass {forced:.3e} at max_len={max_len} is not below "
            f"{max_forced_mass:.1e}",
            {"forced_eos_mass": forced, "max_len": max_len},
        )
    return ExactDistribution(entries, leftover, forced)


def exact_tailored(
    model: NGramModel,
    stack: EstimatorStack,
    max_len: int,
) -> ExactDistribution:
    """P_Tailor = P_Model * a(x) / Z with the exact Z = sum_x P_Model(x) a(x)."""
    base = enumerate_model(model, max_len)
    unnorm = {s: p * stack.acceptance(s) for s, p in base.entries.items()}
    z = float(np.sum(list(unnorm.values())))
    entries = {s: u / z for s, u in unnorm.items()}
    leftover = 1.0 - float(np.sum(list(entries.values())))
    return ExactDistribution(entries, leftover, base.forced_eos_mass, Z=z)


def _completions(prefix: Sentence, vocab_size: int, max_len: int) -> List[Sentence]:
    out: List[Sentence] = []
    pending = [tuple(prefix)]
    while pending:
        p = pending.pop()
        out.append(p + (EOS_ID,))
        if len(p) < max_len:
            pending.extend(p + (w,) for w in range(vocab_size) if w != EOS_ID)
    return out


def exact_prefix_min_gamma(
    stack: EstimatorStack,
    prefix: Sequence[int],
    model: NGramModel,
    max_len: int,
) -> float:
    """Minimum composite gamma over every completion of prefix."""
    prefix = tuple(prefix)
    if prefix and prefix[-1] == EOS_ID:
        return stack.composite_gamma(prefix)
    _check_guard(model.vocab_size, max_len - len(prefix))
    return min(stack.composite_gamma(s) for s in _completions(prefix, model.vocab_size, max_len))


# =============================================================================
# Oracle prefix scorers
# =============================================================================

class OraclePrefixScorer:
    """
    Exact gamma'(p) = min over completions of the composite gamma.

    Minima for every prefix are computed in one bottom-up pass.
    """

    def __init__(self, stack: EstimatorStack, vocab_size: int, max_len: int):
        _check_guard(vocab_size, max_len)
        self.stack = stack
        self.max_len = max_len
        self._min: Dict[Sentence, float] = {}
        self._fill((), vocab_size)

    def _fill(self, root: Sentence, vocab_size: int) -> None:
        order: List[Sentence] = []
        pending = [root]
        while pending:
            p = pending.pop()
            order.append(p)
            if len(p) < self.max_len:
                pending.extend(p + (w,) for w in range(vocab_size) if w != EOS_ID)
        for p in reversed(order):
            best = self.stack.composite_gamma(p + (EOS_ID,))
            if len(p) < self.max_len:
                for w in range(vocab_size):
                    if w != EOS_ID:
                        best = min(best, self._min[p + (w,)])
            self._min[p] = best

    def gamma_prefix(self, prefix: Sequence[int]) -> float:
        key = tuple(prefix)
        if key and key[-1] == EOS_ID:
            return self.stack.composite_gamma(key)
        return self._min[key]


class UnitScorer:
    """gamma = gamma' = 1 everywhere."""

    def gamma(self, sentence: Sentence) -> float:
        return 1.0

    def gamma_prefix(self, prefix: Sequence[int]) -> float:
        return 1.0


def with_oracle_duals(stack: EstimatorStack, model: NGramModel, max_len: int) -> EstimatorStack:
    """
    Same full-sentence layers, with the exact continuation minimum as the
    composite prefix ratio (carried by layer 0, unit duals elsewhere).
    """
    oracle = OraclePrefixScorer(stack.truncated(len(stack)), model.vocab_size, max_len)
    layers = [
        StackLayer(layer.estimator, oracle if k == 0 else UnitScorer())
        for k, layer in enumerate(stack.layers)
    ]
    return EstimatorStack(layers, stack.gamma_max)


@dataclass
class ViolationReport:
    """Prefixes where the learned gamma' exceeds the exact continuation minimum."""
    n_prefixes: int
    n_violations: int
    violation_mass: float
    total_mass: float

    @property
    def count_rate(self) -> float:
        return self.n_violations / self.n_prefixes if self.n_prefixes else 0.0

    @property
    def mass_rate(self) -> float:
        return self.violation_mass / self.total_mass if self.total_mass else 0.0

    def to_dict(self) -> Dict[str, float]:
        return {
            "n_prefixes": self.n_prefixes,
            "n_violations": self.n_violations,
            "count_rate": self.count_rate,
            "mass_rate": self.mass_rate,
        }


def prefix_violation_report(
    stack: EstimatorStack,
    model: NGramModel,
    max_len: int,
    rtol: float = 1e-12,
) -> ViolationReport:
    """Scan all EOS-free prefixes, weighting each by its model prefix probability."""
    oracle = OraclePrefixScorer(stack, model.vocab_size, max_len)
    n = violations = 0
    bad_mass = total_mass = 0.0
    pending: List[Tuple[Sentence, float]] = [((), 1.0)]
    while pending:
        prefix, p = pending.pop()
        n += 1
        total_mass += p
        if stack.prefix_gamma(prefix) > oracle.gamma_prefix(prefix) * (1.0 + rtol):
            violations += 1
            bad_mass += p
        if len(prefix) < max_len:
            d = model.dist(model.history_key(prefix))
            pending.extend(
                (prefix + (w,), p * float(d[w])) for w in range(model.vocab_size) if w != EOS_ID
            )
    report = ViolationReport(n, violations, bad_mass, total_mass)
    logger.info(
        f"Prefix violations: {violations}/{n} (count rate {report.count_rate:.4f}, "
        f"mass rate {report.mass_rate:.4f})"
    )
    return report


# =============================================================================
# Statistical tests
# =============================================================================

Distribution = Union[ExactDistribution, SampleBatch, Mapping[Sentence, float]]


def _as_probs(d: Distribution) -> Dict[Sentence, float]:
    if isinstance(d, ExactDistribution):
        return dict(d.entries)
    raw: Mapping[Sentence, float] = d.histogram() if isinstance(d, SampleBatch) else d
    total = float(sum(raw.values()))
    if total <= 0:
        raise DataError("E_EMPTY_DISTRIBUTION", "Cannot normalise an empty histogram")
    return {tuple(s): v / total for s, v in raw.items()}


def tv_distance(d1: Distribution, d2: Distribution) -> float:
    """Total variation 0.5 * sum |p - q| over the union of supports."""
    p, q = _as_probs(d1), _as_probs(d2)
    keys = set(p) | set(q)
    return 0.5 * float(sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys))


def _counts(samples: Union[SampleBatch, Mapping[Sentence, int]]) -> Dict[Sentence, int]:
    if isinstance(samples, SampleBatch):
        return samples.histogram()
    return {tuple(s): int(c) for s, c in samples.items()}


def chi_square_gof(
    samples: Union[SampleBatch, Mapping[Sentence, int]],
    exact: ExactDistribution,
    min_expected: float = MIN_EXPECTED,
) -> Tuple[float, float]:
    """
    Pearson goodness of fit against exact probabilities.

    Cells with expected count below min_expected are pooled into one bucket
    (which also collects any observation outside the exact support).

    Returns:
        (statistic, p-value)
    """
    counts = _counts(samples)
    n = sum(counts.values())
    mass = float(np.sum(list(exact.entries.values())))
    obs: List[float] = []
    exp: List[float] = []
    pooled_obs = float(sum(c for s, c in counts.items() if s not in exact.entries))
    pooled_exp = 0.0
    for s in exact.support:
        e = n * exact.entries[s] / mass
        if e < min_expected:
            pooled_obs += counts.get(s, 0)
            pooled_exp += e
        else:
            obs.append(counts.get(s, 0))
            exp.append(e)
    if pooled_exp > 0 or pooled_obs > 0:
        if pooled_exp < min_expected and exp:
            j = int(np.argmin(exp))
            obs[j] += pooled_obs
            exp[j] += pooled_exp
        else:
            obs.append(pooled_obs)
            exp.append(pooled_exp)
    if len(obs) < 2:
        raise DataError(
            "E_CHI2_CELLS",
            f"Only {len(obs)} cell(s) left after pooling {n} samples; draw more samples",
        )
    result = sps.chisquare(np.array(obs), np.array(exp))
    return float(result.statistic), float(result.pvalue)


def chi_square_two_sample(
    a: Union[SampleBatch, Mapping[Sentence, int]],
    b: Union[SampleBatch, Mapping[Sentence, int]],
    min_expected: float = MIN_EXPECTED,
) -> Tuple[float, float]:
    """
    Homogeneity test of two samples over the union of their supports.

    Columns whose smaller expected count falls below min_expected are pooled.

    Returns:
        (statistic, p-value)
    """
    ca, cb = _counts(a), _counts(b)
    na, nb = sum(ca.values()), sum(cb.values())
    n = na + nb
    keep: List[Tuple[int, int]] = []
    pooled = [0, 0]
    for s in sorted(set(ca) | set(cb)):
        col = (ca.get(s, 0), cb.get(s, 0))
        total = col[0] + col[1]
        if total * min(na, nb) / n < min_expected:
            pooled[0] += col[0]
            pooled[1] += col[1]
        else:
            keep.append(col)
    if sum(pooled):
        keep.append((pooled[0], pooled[1]))
    if len(keep) < 2:
        raise DataError("E_CHI2_CELLS", "Fewer than two columns after pooling; draw more samples")
    table = np.array(keep, dtype=np.float64).T
    stat, p_value, _, _ = sps.chi2_contingency(table, correction=False)
    return float(stat), float(p_value)
