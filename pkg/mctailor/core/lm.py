"""
mctailor Language Model

Enumerable autoregressive n-gram model with interpolated add-alpha smoothing.

A model is a mixture of count tables. A trained model has a single table;
fine-tuning appends the domain table and rescales the mixture weights, so
P_ft = (1 - mu) * P_base + mu * P_domain holds exactly at every context.
"""

from __future__ import annotations
from typing import Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field
import bisect
import logging
import math

import numpy as np

from ..schemas.corpus import Corpus, Sentence, Vocab, EOS_ID
from ..schemas.errors import DataError


logger = logging.getLogger(__name__)

Context = Tuple[int, ...]

DEFAULT_ORDER = 3
DEFAULT_ALPHA = 0.1
MU_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


# =============================================================================
# Count Table
# =============================================================================

@dataclass(frozen=True, eq=False)
class CountTable:
    """n-gram counts of one corpus: context (0..n-1 ids) -> per-token counts."""
    counts: Dict[Context, np.ndarray]

    @classmethod
    def from_corpus(cls, corpus: Corpus, order: int, vocab_size: int) -> "CountTable":
        counts: Dict[Context, np.ndarray] = {}
        pad = (EOS_ID,) * (order - 1)
        for sentence in corpus:
            history = pad
            for token in sentence:
                for j in range(order):
                    ctx = history[len(history) - j:] if j else ()
                    row = counts.get(ctx)
                    if row is None:
                        row = counts[ctx] = np.zeros(vocab_size, dtype=np.uint64)
                    row[token] += 1
                if order > 1:
                    history = history[1:] + (token,)
        return cls(counts=counts)

    def add_alpha(self, ctx: Context, alpha: float, vocab_size: int) -> np.ndarray:
        row = self.counts.get(ctx)
        if row is None:
            row = np.zeros(vocab_size, dtype=np.uint64)
        c = row.astype(np.float64)
        return (c + alpha) / (float(row.sum()) + alpha * vocab_size)


# =============================================================================
# N-gram Model
# =============================================================================

@dataclass(frozen=True, eq=False)
class NGramModel:
    """
    Smoothed autoregressive model over a fixed vocab.

    Immutable after construction; distribution caches are filled lazily and
    are safe to share between readers.
    """
    order: int
    vocab: Vocab
    alpha: float
    lambdas: Tuple[float, ...]
    tables: Tuple[CountTable, ...]
    mixture: Tuple[float, ...]
    _dists: Dict[Context, np.ndarray] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )
    _cdfs: Dict[Context, List[float]] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def history_key(self, prefix: Sequence[int]) -> Context:
        """Last order-1 tokens of prefix, left-padded with EOS."""
        k = self.order - 1
        if k == 0:
            return ()
        tail = tuple(prefix[-k:]) if prefix else ()
        return (EOS_ID,) * (k - len(tail)) + tail

    def dist(self, key: Context) -> np.ndarray:
        """Next-token distribution for a history key."""
        cached = self._dists.get(key)
        if cached is not None:
            return cached
        V = self.vocab_size
        components = []
        for table in self.tables:
            p = np.zeros(V, dtype=np.float64)
            for j, lam in enumerate(self.lambdas):
                ctx = key[len(key) - j:] if j else ()
                p = p + lam * table.add_alpha(ctx, self.alpha, V)
            components.append(p)
        out = self.mixture[0] * components[0]
        for weight, comp in zip(self.mixture[1:], components[1:]):
            out = out + weight * comp
        out.flags.writeable = False
        self._dists[key] = out
        return out

    def cdf(self, key: Context) -> List[float]:
        cached = self._cdfs.get(key)
        if cached is None:
            cached = np.cumsum(self.dist(key)).tolist()
            self._cdfs[key] = cached
        return cached

    def draw_token(self, prefix: Sequence[int], u: float) -> int:
        """Inverse-CDF draw of the next token for a uniform u in [0, 1)."""
        cdf = self.cdf(self.history_key(prefix))
        idx = bisect.bisect_right(cdf, u * cdf[-1])
        return min(idx, len(cdf) - 1)

    def generate(self, uniforms: Sequence[float], max_len: int) -> Sentence:
        """Ancestral sample driven by pre-drawn uniforms; EOS forced at max_len."""
        prefix: List[int] = []
        for step in range(max_len):
            token = self.draw_token(prefix, uniforms[step])
            if token == EOS_ID:
                return tuple(prefix) + (EOS_ID,)
            prefix.append(token)
        return tuple(prefix) + (EOS_ID,)


def _check_lambdas(lambdas: Optional[Sequence[float]], order: int) -> Tuple[float, ...]:
    if lambdas is None:
        return tuple([1.0 / order] * order)
    lam = tuple(float(x) for x in lambdas)
    if len(lam) != order or any(x < 0 for x in lam) or abs(sum(lam) - 1.0) > 1e-9:
        raise DataError(
            "E_LM_LAMBDAS",
            f"Need {order} non-negative interpolation weights summing to 1, got {lam}",
        )
    return lam


# =============================================================================
# Operations
# =============================================================================

def train(
    corpus: Corpus,
    vocab: Vocab,
    order: int = DEFAULT_ORDER,
    alpha: float = DEFAULT_ALPHA,
    lambdas: Optional[Sequence[float]] = None,
) -> NGramModel:
    """Count every n-gram window (EOS included) and return the smoothed model."""
    if len(corpus) == 0:
        raise DataError("E_LM_EMPTY", "Cannot train a language model on an empty corpus")
    if order < 1:
        raise DataError("E_LM_ORDER", f"order must be >= 1, got {order}")
    if alpha <= 0:
        raise DataError("E_LM_ALPHA", f"alpha must be > 0, got {alpha}")
    corpus.check_ids(len(vocab))

    table = CountTable.from_corpus(corpus, order, len(vocab))
    logger.info(
        f"Trained order-{order} model on {len(corpus)} sentences "
        f"({corpus.token_count} tokens, {len(table.counts)} contexts)"
    )
    return NGramModel(
        order=order,
        vocab=vocab,
        alpha=alpha,
        lambdas=_check_lambdas(lambdas, order),
        tables=(table,),
        mixture=(1.0,),
    )


def finetune(base: NGramModel, domain: Corpus, mu: float) -> NGramModel:
    """Interpolate the base model with a model trained on the domain corpus alone."""
    if not 0.0 <= mu <= 1.0:
        raise DataError("E_LM_MU", f"mu must lie in [0, 1], got {mu}")
    domain_model = train(domain, base.vocab, base.order, base.alpha, base.lambdas)
    return interpolate(base, domain_model, mu)


def interpolate(base: NGramModel, domain: NGramModel, mu: float) -> NGramModel:
    """(1 - mu) * base + mu * domain over identical vocab and order."""
    if base.vocab.tokens != domain.vocab.tokens:
        raise DataError("E_LM_VOCAB", "Fine-tuning requires the base vocab")
    if base.order != domain.order:
        raise DataError("E_LM_ORDER", "Fine-tuning requires the base order")
    mixture = tuple((1.0 - mu) * w for w in base.mixture) + tuple(mu * w for w in domain.mixture)
    return NGramModel(
        order=base.order,
        vocab=base.vocab,
        alpha=base.alpha,
        lambdas=base.lambdas,
        tables=base.tables + domain.tables,
        mixture=mixture,
    )


def select_mu(
    base: NGramModel,
    domain: Corpus,
    eval_corpus: Corpus,
    grid: Sequence[float] = MU_GRID,
) -> Tuple[float, Dict[float, float]]:
    """
    Pick the interpolation weight with the lowest eval perplexity.

    Returns:
        (best mu, eval perplexity for every grid point)
    """
    domain_model = train(domain, base.vocab, base.order, base.alpha, base.lambdas)
    sweep: Dict[float, float] = {}
    for mu in grid:
        sweep[mu] = perplexity(interpolate(base, domain_model, mu), eval_corpus)
        logger.info(f"mu={mu:.2f} eval_ppl={sweep[mu]:.4f}")
    best = min(grid, key=lambda m: (sweep[m], m))
    return best, sweep


def next_dist(model: NGramModel, prefix: Sequence[int]) -> np.ndarray:
    """Strictly positive next-token distribution (read-only array)."""
    return model.dist(model.history_key(prefix))


def sentence_logprob(
    model: NGramModel,
    sentence: Sentence,
    max_len: Optional[int] = None,
) -> float:
    """
    Log-probability in nats, EOS factor included.

    With max_len given, a sentence of exactly max_len tokens has its EOS
    factor set to 1, matching samplers that force EOS at the cap.
    """
    total = 0.0
    body = len(sentence) - 1
    for i, token in enumerate(sentence):
        if token == EOS_ID and max_len is not None and body == max_len:
            break
        total += math.log(model.dist(model.history_key(sentence[:i]))[token])
    return total


def sample_sentence(model: NGramModel, rng: np.random.Generator, max_len: int) -> Sentence:
    """Ancestral sample; EOS is forced once max_len tokens are emitted."""
    if max_len < 1:
        raise DataError("E_MAX_LEN", f"max_len must be >= 1, got {max_len}")
    return model.generate(rng.random(max_len), max_len)


def perplexity(model: NGramModel, corpus: Corpus, max_len: Optional[int] = None) -> float:
    """exp(-sum log P / token count), EOS counted as a token."""
    if len(corpus) == 0:
        raise DataError("E_PPL_EMPTY", "Perplexity of an empty corpus is undefined")
    logp = sum(sentence_logprob(model, s, max_len) for s in corpus)
    return math.exp(-logp / corpus.token_count)
