"""
mctailor Ratio Estimators

Learned discriminators between real sentences and model samples:

- RatioEstimator: full-sentence ratio gamma(x) ~ P_Model(x) / P_True(x)
- PrefixRatioEstimator: prefix ratio gamma'(p), trained through its dual
  form gamma''(x) = max_i gamma'(x[:i])
- EstimatorStack: hierarchical composition of layers, each trained against
  samples from the distribution tailored by the layers below it
"""

from __future__ import annotations
from typing import Dict, List, Optional, Protocol, Sequence, Tuple
from dataclasses import dataclass, field
import logging
import math
import threading

import numpy as np

from ..schemas.corpus import Corpus, Sentence
from ..schemas.errors import DataError, StarvationError, TrainingDivergedError
from .lm import NGramModel
from .network import ConvScorer, NetworkConfig, Params, pad_batch


logger = logging.getLogger(__name__)

MIN_REAL_SENTENCES = 100
STARVATION_RATE = 1e-4
CACHE_LIMIT = 200_000


# =============================================================================
# Configuration / Reports
# =============================================================================

@dataclass(frozen=True)
class EstimatorConfig:
    """Architecture and optimisation settings shared by both estimator types."""
    embed_dim: int = 16
    conv_layers: Tuple[Tuple[int, int], ...] = ((10, 5), (5, 5))
    gamma_max: float = 20.0
    lr: float = 0.05
    patience: int = 5
    max_epochs: int = 50
    batch_size: int = 32
    holdout_fraction: float = 0.1
    init_scale: float = 0.1
    dual_temperature: Optional[float] = None
    min_real: int = MIN_REAL_SENTENCES

    def network(self, vocab_size: int) -> NetworkConfig:
        return NetworkConfig(vocab_size, self.embed_dim, self.conv_layers)


@dataclass
class TrainingReport:
    """Outcome of one estimator fit."""
    epochs: int
    best_holdout_loss: float
    holdout_accuracy: float
    n_real: int
    n_negative: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "epochs": self.epochs,
            "best_holdout_loss": self.best_holdout_loss,
            "holdout_accuracy": self.holdout_accuracy,
            "n_real": self.n_real,
            "n_negative": self.n_negative,
        }


# =============================================================================
# Scorer protocols
# =============================================================================

class SentenceScorer(Protocol):
    def gamma(self, sentence: Sentence) -> float: ...


class PrefixScorer(Protocol):
    def gamma_prefix(self, prefix: Sequence[int]) -> float: ...


class SampleSource(Protocol):
    """Anything that can produce i.i.d. negative sentences."""
    def draw(self, n: int, rng: np.random.Generator) -> List[Sentence]: ...


@dataclass
class ModelSource:
    """Ancestral samples from a language model."""
    model: NGramModel
    max_len: int

    def draw(self, n: int, rng: np.random.Generator) -> List[Sentence]:
        uniforms = rng.random((n, self.max_len))
        return [self.model.generate(row, self.max_len) for row in uniforms]


@dataclass
class CorpusSource:
    """Draws with replacement from a fixed corpus."""
    corpus: Corpus

    def draw(self, n: int, rng: np.random.Generator) -> List[Sentence]:
        picks = rng.integers(0, len(self.corpus), size=n)
        return [self.corpus[int(i)] for i in picks]


def gamma_from_score(d: float, gamma_max: float) -> float:
    """gamma = d / (1 - d), clamped to [1/gamma_max, gamma_max]."""
    if d >= 1.0:
        return gamma_max
    if d <= 0.0:
        return 1.0 / gamma_max
    return float(min(max(d / (1.0 - d), 1.0 / gamma_max), gamma_max))


def _clamped_exp(logits: np.ndarray, log_clip: float) -> np.ndarray:
    return np.exp(np.clip(logits, -log_clip, log_clip))


# =============================================================================
# Estimators
# =============================================================================

@dataclass(eq=False)
class RatioEstimator:
    """Full-sentence estimator; the EOS-terminated sentence is the input."""
    scorer: ConvScorer
    gamma_max: float = 20.0
    report: Optional[TrainingReport] = None

    def score(self, sentence: Sentence) -> float:
        """Classifier output d(x)."""
        z = float(self.scorer.logits([sentence])[0])
        return 1.0 / (1.0 + math.exp(-z))

    def gamma(self, sentence: Sentence) -> float:
        return float(self.gammas([sentence])[0])

    def gammas(self, sentences: Sequence[Sentence]) -> np.ndarray:
        return _clamped_exp(self.scorer.logits(sentences), math.log(self.gamma_max))


@dataclass(eq=False)
class PrefixRatioEstimator:
    """Prefix estimator with gamma'(p) = exp(s(p)) under the same clamp."""
    scorer: ConvScorer
    gamma_max: float = 20.0
    report: Optional[TrainingReport] = None

    def gamma_prefix(self, prefix: Sequence[int]) -> float:
        logits = self.scorer.logits([tuple(prefix)])
        return float(_clamped_exp(logits, math.log(self.gamma_max))[0])

    def prefix_gammas(self, sentence: Sentence) -> np.ndarray:
        """gamma' of x[:1], x[:2], ..., x (the last one EOS-terminated)."""
        prefixes = [sentence[:i] for i in range(1, len(sentence) + 1)]
        return _clamped_exp(self.scorer.logits(prefixes), math.log(self.gamma_max))

    def gamma_dual(self, sentence: Sentence) -> float:
        """gamma''(x) = max_i gamma'(x[:i])."""
        return float(self.prefix_gammas(sentence).max())

    def running_max(self, sentence: Sentence) -> np.ndarray:
        return np.maximum.accumulate(self.prefix_gammas(sentence))


# =============================================================================
# Training
# =============================================================================

def balanced_batches(
    n_real: int,
    n_negative: int,
    batch_size: int,
    rng: np.random.Generator,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    One epoch of (real indices, negative indices) minibatches.

    Every batch holds batch_size // 2 of each class; leftovers of the larger
    class are dropped for the epoch.
    """
    half = max(1, batch_size // 2)
    real_order = rng.permutation(n_real)
    neg_order = rng.permutation(n_negative)
    n_batches = min(n_real, n_negative) // half
    return [
        (real_order[b * half:(b + 1) * half], neg_order[b * half:(b + 1) * half])
        for b in range(n_batches)
    ]


def _expand_prefixes(sequences: Sequence[Sentence]) -> Tuple[List[Sentence], List[int]]:
    prefixes: List[Sentence] = []
    offsets = [0]
    for seq in sequences:
        prefixes.extend(seq[:i] for i in range(1, len(seq) + 1))
        offsets.append(len(prefixes))
    return prefixes, offsets


def estimator_loss(
    scorer: ConvScorer,
    sequences: Sequence[Sentence],
    labels: np.ndarray,
    dual: bool = False,
    temperature: Optional[float] = None,
) -> Tuple[float, Params, np.ndarray]:
    """
    Mean binary cross-entropy and its parameter gradients.

    Label 1 marks a model sample, label 0 a real sentence. In dual mode the
    example logit is the max over prefix logits (subgradient to the earliest
    arg-max), or a temperature log-sum-exp when a temperature is given.

    Returns:
        (loss, gradients, example logits)
    """
    n = len(sequences)
    if not dual:
        ids, lengths = pad_batch(sequences)
        z, cache = scorer.forward(ids, lengths)
        g = (1.0 / (1.0 + np.exp(-z)) - labels) / n
        loss = float(np.mean(np.logaddexp(0.0, z) - labels * z))
        return loss, scorer.backward(cache, g), z

    prefixes, offsets = _expand_prefixes(sequences)
    ids, lengths = pad_batch(prefixes)
    pz, cache = scorer.forward(ids, lengths)
    z = np.empty(n)
    weights = np.zeros_like(pz)
    for i in range(n):
        seg = pz[offsets[i]:offsets[i + 1]]
        if temperature:
            m = seg.max()
            e = np.exp((seg - m) / temperature)
            z[i] = m + temperature * math.log(e.sum())
            weights[offsets[i]:offsets[i + 1]] = e / e.sum()
        else:
            j = int(np.argmax(seg))
            z[i] = seg[j]
            weights[offsets[i] + j] = 1.0
    g = (1.0 / (1.0 + np.exp(-z)) - labels) / n
    owner = np.repeat(np.arange(n), np.diff(offsets))
    loss = float(np.mean(np.logaddexp(0.0, z) - labels * z))
    return loss, scorer.backward(cache, weights * g[owner]), z


def _split_holdout(
    items: List[Sentence],
    fraction: float,
    rng: np.random.Generator,
) -> Tuple[List[Sentence], List[Sentence]]:
    order = rng.permutation(len(items))
    n_hold = max(1, int(round(len(items) * fraction)))
    hold = [items[int(i)] for i in order[:n_hold]]
    train = [items[int(i)] for i in order[n_hold:]]
    return train, hold


def _fit(
    real: Corpus,
    negatives: SampleSource,
    config: EstimatorConfig,
    rng: np.random.Generator,
    dual: bool,
    vocab_size: Optional[int],
) -> Tuple[ConvScorer, TrainingReport]:
    if len(real) < config.min_real:
        raise DataError(
            "E_TOO_FEW_REAL",
            f"Ratio estimator needs at least {config.min_real} real sentences, got {len(real)}",
        )
    neg = negatives.draw(len(real), rng)
    if vocab_size is None:
        vocab_size = 1 + max(max(s) for s in list(real) + neg)

    real_train, real_hold = _split_holdout(list(real), config.holdout_fraction, rng)
    neg_train, neg_hold = _split_holdout(neg, config.holdout_fraction, rng)
    hold_seqs = real_hold + neg_hold
    hold_labels = np.concatenate([np.zeros(len(real_hold)), np.ones(len(neg_hold))])

    scorer = ConvScorer.initialize(config.network(vocab_size), rng, config.init_scale)
    temperature = config.dual_temperature if dual else None

    def holdout() -> Tuple[float, float]:
        loss, _, z = estimator_loss(scorer, hold_seqs, hold_labels, dual, temperature)
        acc = float(np.mean((z > 0).astype(float) == hold_labels))
        return loss, acc

    best_loss, best_acc = holdout()
    best_params = {k: v.copy() for k, v in scorer.params.items()}
    stale = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        for real_idx, neg_idx in balanced_batches(
            len(real_train), len(neg_train), config.batch_size, rng
        ):
            seqs = [real_train[int(i)] for i in real_idx] + [neg_train[int(i)] for i in neg_idx]
            labels = np.concatenate([np.zeros(len(real_idx)), np.ones(len(neg_idx))])
            loss, grads, _ = estimator_loss(scorer, seqs, labels, dual, temperature)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    "E_TRAIN_DIVERGED",
                    f"Non-finite training loss at epoch {epoch}; "
                    f"the learning rate {config.lr} is likely too high",
                    {"epoch": epoch, "lr": config.lr},
                )
            for name, grad in grads.items():
                scorer.params[name] -= config.lr * grad

        hold_loss, hold_acc = holdout()
        if not math.isfinite(hold_loss):
            raise TrainingDivergedError(
                "E_TRAIN_DIVERGED",
                f"Non-finite held-out loss at epoch {epoch}; lower the learning rate {config.lr}",
                {"epoch": epoch, "lr": config.lr},
            )
        logger.debug(f"epoch {epoch}: holdout_loss={hold_loss:.5f} holdout_acc={hold_acc:.3f}")
        if hold_loss < best_loss:
            best_loss, best_acc = hold_loss, hold_acc
            best_params = {k: v.copy() for k, v in scorer.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    scorer.params.update(best_params)
    report = TrainingReport(epoch, best_loss, best_acc, len(real), len(neg))
    kind = "dual" if dual else "ratio"
    logger.info(
        f"Trained {kind} estimator: epochs={epoch} holdout_loss={best_loss:.4f} "
        f"holdout_acc={best_acc:.3f}"
    )
    return scorer, report


def train_ratio_estimator(
    real: Corpus,
    negatives: SampleSource,
    config: Optional[EstimatorConfig] = None,
    rng: Optional[np.random.Generator] = None,
    vocab_size: Optional[int] = None,
) -> RatioEstimator:
    """Fit a full-sentence discriminator; negatives are drawn |real| times."""
    config = config or EstimatorConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    scorer, report = _fit(real, negatives, config, rng, False, vocab_size)
    return RatioEstimator(scorer, config.gamma_max, report)


def train_dual_estimator(
    real: Corpus,
    negatives: SampleSource,
    config: Optional[EstimatorConfig] = None,
    rng: Optional[np.random.Generator] = None,
    vocab_size: Optional[int] = None,
) -> PrefixRatioEstimator:
    """Fit a prefix scorer through the max over its prefix scores."""
    config = config or EstimatorConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    scorer, report = _fit(real, negatives, config, rng, True, vocab_size)
    return PrefixRatioEstimator(scorer, config.gamma_max, report)


def gamma(est: SentenceScorer, sentence: Sentence) -> float:
    return est.gamma(sentence)


def gamma_prefix(est: PrefixScorer, prefix: Sequence[int]) -> float:
    return est.gamma_prefix(prefix)


# =============================================================================
# Estimator Stack
# =============================================================================

@dataclass
class StackLayer:
    estimator: SentenceScorer
    dual: Optional[PrefixScorer] = None


@dataclass
class LayerReport:
    layer: int
    ratio: Optional[TrainingReport]
    dual: Optional[TrainingReport]
    negative_acceptance_rate: float

    def to_dict(self) -> Dict[str, object]:
        return {
            "layer": self.layer,
            "ratio": self.ratio.to_dict() if self.ratio else None,
            "dual": self.dual.to_dict() if self.dual else None,
            "negative_acceptance_rate": self.negative_acceptance_rate,
        }


@dataclass
class StackReport:
    layers: List[LayerReport] = field(default_factory=list)

    @property
    def holdout_accuracies(self) -> List[float]:
        return [lr.ratio.holdout_accuracy for lr in self.layers if lr.ratio is not None]


class EstimatorStack:
    """
    Ordered estimator layers with composite ratios.

    Composite gamma is the product of layer gammas; acceptance is
    a(x) = prod_k 1 / max(gamma_k(x), 1). Per-sentence results are memoised
    in caches shared by sampler threads; a cache is dropped whole once it
    holds ``cache_limit`` entries.
    """

    def __init__(
        self,
        layers: Optional[List[StackLayer]] = None,
        gamma_max: float = 20.0,
        report: Optional[StackReport] = None,
        cache_limit: int = CACHE_LIMIT,
    ):
        self.layers: List[StackLayer] = list(layers or [])
        self.gamma_max = gamma_max
        self.report = report or StackReport()
        self.cache_limit = cache_limit
        self._gammas: Dict[Sentence, Tuple[float, ...]] = {}
        self._prefix: Dict[Tuple[int, ...], float] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def has_duals(self) -> bool:
        return bool(self.layers) and all(layer.dual is not None for layer in self.layers)

    @property
    def cache_size(self) -> int:
        with self._lock:
            return len(self._gammas) + len(self._prefix)

    def truncated(self, k: int) -> "EstimatorStack":
        """Stack of the first k layers."""
        return EstimatorStack(self.layers[:k], self.gamma_max, cache_limit=self.cache_limit)

    def clear_cache(self) -> None:
        with self._lock:
            self._gammas.clear()
            self._prefix.clear()

    def add_layer(self, layer: StackLayer) -> None:
        with self._lock:
            self.layers.append(layer)
            self._gammas.clear()
            self._prefix.clear()

    def _remember(self, cache: Dict, key: Tuple[int, ...], value) -> None:
        with self._lock:
            if len(cache) >= self.cache_limit:
                cache.clear()
            cache[key] = value

    def gammas(self, sentence: Sentence) -> Tuple[float, ...]:
        key = tuple(sentence)
        with self._lock:
            cached = self._gammas.get(key)
        if cached is None:
            cached = tuple(layer.estimator.gamma(key) for layer in self.layers)
            self._remember(self._gammas, key, cached)
        return cached

    def composite_gamma(self, sentence: Sentence) -> float:
        return float(np.prod(self.gammas(sentence)))

    def acceptance(self, sentence: Sentence) -> float:
        out = 1.0
        for g in self.gammas(sentence):
            out /= max(g, 1.0)
        return out

    def prefix_gamma(self, prefix: Sequence[int]) -> float:
        """Composite prefix ratio prod_k gamma'_k(prefix)."""
        key = tuple(prefix)
        with self._lock:
            cached = self._prefix.get(key)
        if cached is None:
            if not self.has_duals:
                raise DataError("E_NO_DUAL", "Stack has no dual estimators")
            cached = 1.0
            for layer in self.layers:
                assert layer.dual is not None
                cached *= layer.dual.gamma_prefix(key)
            self._remember(self._prefix, key, cached)
        return cached


@dataclass
class PoolSource:
    """Hands out a pre-drawn pool in order, never repeating a sentence."""
    pool: List[Sentence]
    cursor: int = 0

    def draw(self, n: int, rng: np.random.Generator) -> List[Sentence]:
        if self.cursor + n > len(self.pool):
            raise DataError(
                "E_POOL_EXHAUSTED",
                f"Negative pool of {len(self.pool)} cannot serve {n} more sentences",
            )
        out = self.pool[self.cursor:self.cursor + n]
        self.cursor += n
        return out


def build_stack(
    model: NGramModel,
    real: Corpus,
    n_layers: int,
    config: Optional[EstimatorConfig] = None,
    seed: int = 0,
    max_len: int = 20,
    with_duals: bool = True,
    budget: int = 10_000_000,
    workers: int = 1,
) -> EstimatorStack:
    """
    Boosted stack: layer k is trained against fresh samples from the model
    tailored by layers 0..k-1 (layer 0 against raw model samples).

    Raises:
        StarvationError: the partial stack accepts less than 1e-4 of proposals
    """
    from .tailor import TailoredDistribution, rejection_sample

    if n_layers < 1:
        raise DataError("E_STACK_LAYERS", f"n_layers must be >= 1, got {n_layers}")
    config = config or EstimatorConfig()
    stack = EstimatorStack(gamma_max=config.gamma_max)
    n_need = (2 if with_duals else 1) * len(real)

    for k in range(n_layers):
        rng = np.random.default_rng([seed, k])
        if k == 0:
            pool = ModelSource(model, max_len).draw(n_need, rng)
            rate = 1.0
        else:
            partial = TailoredDistribution(model, stack.truncated(k), max_len)
            layer_budget = min(budget, int(math.ceil(n_need / STARVATION_RATE)))
            batch = rejection_sample(
                partial,
                n_need,
                seed=int(rng.integers(2**31)),
                budget=layer_budget,
                workers=workers,
            )
            rate = batch.stats.acceptance_rate
            if batch.stats.budget_exhausted:
                raise StarvationError(
                    "E_STARVATION",
                    f"Collecting negatives for layer {k} accepted {batch.stats.accepted} of "
                    f"{batch.stats.proposals} proposals (rate {rate:.2e})",
                    {"layer": k, "acceptance_rate": rate},
                )
            pool = list(batch.accepted)

        source = PoolSource(pool)
        ratio = train_ratio_estimator(real, source, config, rng, model.vocab_size)
        dual = None
        if with_duals:
            dual = train_dual_estimator(real, source, config, rng, model.vocab_size)
        stack.add_layer(StackLayer(ratio, dual))
        stack.report.layers.append(
            LayerReport(k, ratio.report, dual.report if dual else None, rate)
        )
        logger.info(f"Stack layer {k} built (negative acceptance rate {rate:.4f})")

    return stack
