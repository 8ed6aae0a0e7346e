"""
mctailor Metrics

Perplexity, reverse perplexity, earth mover distances over sentence lengths
and word-frequency ranks, diversity, and per-sentence NLL comparisons.
"""

from __future__ import annotations
from typing import Dict, List, Optional, Sequence, Union
from collections import Counter
from dataclasses import dataclass
import logging
import math

from scipy.stats import wasserstein_distance

from ..schemas.corpus import Corpus, Sentence, Vocab, EOS_ID
from ..schemas.errors import BudgetExceededError, DataError
from ..schemas.reports import MetricsReport, NLLRow
from ..schemas.sampling import SamplingAlgorithm
from . import lm
from .lm import NGramModel
from .ratio import EstimatorStack
from .tailor import (
    DEFAULT_BUDGET,
    TailoredDistribution,
    estimate_log_normalizer,
    sample,
    tailored_logprob,
)


logger = logging.getLogger(__name__)

MIN_GENERATED = 100


@dataclass(frozen=True)
class EvalLMConfig:
    """Evaluator LM for reverse perplexity, independent of the base model."""
    order: int = 2
    alpha: float = 0.1


def is_degenerate(corpus: Corpus) -> bool:
    """All sentences identical."""
    return len(set(corpus.sentences)) <= 1


def rev_ppl(
    generated: Corpus,
    test: Corpus,
    vocab: Vocab,
    lm_config: Optional[EvalLMConfig] = None,
) -> float:
    """Perplexity of test under a fresh n-gram model trained on generated."""
    if len(generated) < MIN_GENERATED:
        raise DataError(
            "E_REV_PPL_SMALL",
            f"Reverse perplexity needs at least {MIN_GENERATED} generated sentences, "
            f"got {len(generated)}",
        )
    lm_config = lm_config or EvalLMConfig()
    if is_degenerate(generated):
        logger.warning("Generated corpus is degenerate (all sentences identical)")
    evaluator = lm.train(generated, vocab, lm_config.order, lm_config.alpha)
    return lm.perplexity(evaluator, test)


def emd_lengths(real: Corpus, gen: Corpus) -> float:
    """1-D EMD between sentence-length distributions (EOS excluded)."""
    if len(real) == 0 or len(gen) == 0:
        raise DataError("E_EMD_EMPTY", "EMD needs two non-empty corpora")
    return float(wasserstein_distance(real.lengths(), gen.lengths()))


def _token_counts(corpus: Corpus) -> Counter:
    return Counter(tok for s in corpus for tok in s if tok != EOS_ID)


def emd_word_freq(real: Corpus, gen: Corpus, vocab_size: Optional[int] = None) -> float:
    """
    1-D EMD over word-frequency ranks.

    Every non-EOS id below ``vocab_size`` (default: one past the largest id
    seen) is ranked by descending real-corpus frequency, ties by id; each
    corpus spreads its token occurrences over these rank positions.
    """
    real_counts, gen_counts = _token_counts(real), _token_counts(gen)
    if not real_counts or not gen_counts:
        raise DataError("E_EMD_EMPTY", "EMD-f needs at least one token in each corpus")
    top = max(max(real_counts), max(gen_counts)) + 1
    if vocab_size is not None:
        if vocab_size < top:
            raise DataError(
                "E_EMD_VOCAB", f"token id {top - 1} outside a vocabulary of {vocab_size}"
            )
        top = vocab_size
    ids = sorted((i for i in range(top) if i != EOS_ID), key=lambda i: (-real_counts[i], i))
    ranks = list(range(len(ids)))
    return float(
        wasserstein_distance(
            ranks,
            ranks,
            [real_counts[i] for i in ids],
            [gen_counts[i] for i in ids],
        )
    )


# =============================================================================
# Evaluation
# =============================================================================

def _as_tailored(
    target: Union[TailoredDistribution, NGramModel],
    max_len: int,
) -> TailoredDistribution:
    if isinstance(target, TailoredDistribution):
        return target
    return TailoredDistribution(target, EstimatorStack(), max_len, log_Z=0.0)


def corpus_ppl(t: TailoredDistribution, corpus: Corpus) -> float:
    """Perplexity under the normalised tailored distribution."""
    logp = sum(tailored_logprob(t, s) for s in corpus)
    return math.exp(-logp / corpus.token_count)


def evaluate(
    target: Union[TailoredDistribution, NGramModel],
    test: Corpus,
    algorithm: SamplingAlgorithm,
    n_samples: int,
    seed: int = 0,
    max_len: int = 20,
    lm_config: Optional[EvalLMConfig] = None,
    n_is: int = 10_000,
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
    fingerprint: str = "",
) -> MetricsReport:
    """
    Sample n_samples sentences and compute every metric against test.

    A bare model is evaluated as a tailored distribution with an empty stack;
    its sampler is then plain ancestral sampling.
    """
    if n_samples < MIN_GENERATED:
        raise DataError("E_N_SAMPLES", f"n_samples must be >= {MIN_GENERATED}, got {n_samples}")
    t = _as_tailored(target, max_len)
    if len(t.stack) == 0:
        algorithm = SamplingAlgorithm.RS
    if t.log_Z is None:
        estimate_log_normalizer(t, n_is, seed)

    batch = sample(t, algorithm, n_samples, seed, budget, workers)
    if batch.stats.budget_exhausted:
        raise BudgetExceededError(
            "E_BUDGET",
            f"Sampler accepted {batch.stats.accepted}/{n_samples} within {budget} proposals",
            batch.stats.to_dict(),
        )
    generated = Corpus.of(batch.accepted, source_path=f"<{algorithm.value}>")
    report = MetricsReport(
        ppl=corpus_ppl(t, test),
        rev_ppl=rev_ppl(generated, test, t.model.vocab, lm_config),
        emd_l=emd_lengths(test, generated),
        emd_f=emd_word_freq(test, generated, t.model.vocab_size),
        distinct_fraction=batch.stats.distinct_fraction,
        n_samples=len(generated),
        sampler=algorithm.value if len(t.stack) else "model",
        fingerprint=fingerprint,
        degenerate_generated=is_degenerate(generated),
    )
    logger.info(f"Evaluated {report.sampler}: rev_ppl={report.rev_ppl:.4f} ppl={report.ppl:.4f}")
    return report


def nll_table(
    model: NGramModel,
    t: TailoredDistribution,
    sentences: Sequence[Sentence],
) -> List[NLLRow]:
    """Fine-tuned NLL next to normalised tailored NLL for each sentence."""
    rows = []
    for s in sentences:
        rows.append(
            NLLRow(
                sentence=model.vocab.render(s),
                model_nll=-lm.sentence_logprob(model, s, t.max_len),
                tailored_nll=-tailored_logprob(t, s),
            )
        )
    return rows


def metric_summary(reports: Dict[str, MetricsReport]) -> str:
    """One line per labelled report, for side-by-side comparisons."""
    width = max((len(k) for k in reports), default=5)
    lines = [f"{'label'.ljust(width)}  {'rev_ppl':>10}  {'ppl':>10}  {'emd_l':>8}  {'emd_f':>8}"]
    for label, r in reports.items():
        lines.append(
            f"{label.ljust(width)}  {r.rev_ppl:10.4f}  {r.ppl:10.4f}  "
            f"{r.emd_l:8.4f}  {r.emd_f:8.4f}"
        )
    return "\n".join(lines) + "\n"
