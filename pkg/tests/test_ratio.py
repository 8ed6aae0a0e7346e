"""
Ratio Estimator Tests

Clamping, the classification loss and its gradients, minibatching,
training on separable data and the estimator stack.
"""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from mctailor.core.corpus import corpus_from_lines
from mctailor.core.fixtures import oracle_corpora
from mctailor.core.network import ConvScorer, NetworkConfig
from mctailor.core.ratio import (
    CorpusSource,
    EstimatorConfig,
    EstimatorStack,
    PoolSource,
    PrefixRatioEstimator,
    RatioEstimator,
    StackLayer,
    balanced_batches,
    build_stack,
    estimator_loss,
    gamma_from_score,
    train_dual_estimator,
    train_ratio_estimator,
)
from mctailor.schemas.corpus import Corpus, EOS_ID
from mctailor.schemas.errors import DataError, StarvationError, TrainingDivergedError

from .helpers import MAX_LEN, A, B, C, ConstantPrefixScorer, LengthScorer, RuleScorer


REAL = (2, 2, EOS_ID)
FAKE = (3, 3, EOS_ID)

SEPARABLE = EstimatorConfig(embed_dim=8, conv_layers=((6, 3),), lr=0.5, max_epochs=40)


@pytest.fixture
def small_scorer():
    config = NetworkConfig(vocab_size=5, embed_dim=3, conv_layers=((4, 2),))
    scorer = ConvScorer.initialize(config, np.random.default_rng(21), scale=0.5)
    rng = np.random.default_rng(22)
    for name in ("conv0.bias", "out.bias"):
        scorer.params[name] = rng.normal(0.0, 0.5, size=scorer.params[name].shape)
    return scorer


@pytest.fixture(scope="module")
def separable_real():
    return Corpus.of([REAL] * 200)


class TestGammaClamp:
    """Mapping classifier outputs to ratios."""

    @pytest.mark.parametrize(
        "d,expected",
        [(0.5, 1.0), (0.75, 3.0), (1.0, 20.0), (0.0, 1 / 20.0), (0.999, 20.0), (1e-6, 1 / 20.0)],
    )
    def test_gamma_from_score(self, d, expected):
        """gamma = d / (1 - d) within [1/gamma_max, gamma_max]."""
        assert gamma_from_score(d, 20.0) == pytest.approx(expected)

    def test_huge_logit_hits_gamma_max(self, small_scorer):
        """Estimator ratios never leave the clamp interval."""
        small_scorer.params["out.bias"][0] = 1e6
        est = RatioEstimator(small_scorer, gamma_max=7.0)
        assert est.gamma((A, EOS_ID)) == pytest.approx(7.0)
        small_scorer.params["out.bias"][0] = -1e6
        assert est.gamma((A, EOS_ID)) == pytest.approx(1 / 7.0)

    def test_prefix_estimator_views(self, small_scorer):
        """Dual ratio is the max over prefixes; running max is monotone."""
        est = PrefixRatioEstimator(small_scorer, gamma_max=20.0)
        sentence = (A, B, C, EOS_ID)
        prefix = est.prefix_gammas(sentence)
        assert len(prefix) == len(sentence)
        assert prefix[1] == pytest.approx(est.gamma_prefix((A, B)))
        assert est.gamma_dual(sentence) == pytest.approx(prefix.max())
        running = est.running_max(sentence)
        assert np.all(np.diff(running) >= 0)
        assert running[-1] == pytest.approx(prefix.max())


class TestLoss:
    """Binary cross-entropy and its gradients."""

    SEQS = [(2, 3, EOS_ID), (4, EOS_ID), (3, 3, 2, 4, EOS_ID), (EOS_ID,)]
    LABELS = np.array([0.0, 1.0, 1.0, 0.0])

    @pytest.mark.parametrize("dual,temperature", [(False, None), (True, None), (True, 0.5)])
    def test_gradients_match_finite_differences(self, small_scorer, dual, temperature):
        """Loss gradients agree with central differences in every mode."""
        _, grads, _ = estimator_loss(small_scorer, self.SEQS, self.LABELS, dual, temperature)
        rng = np.random.default_rng(8)
        eps = 1e-6
        for name, param in small_scorer.params.items():
            flat = param.reshape(-1)
            for idx in rng.choice(flat.size, size=min(5, flat.size), replace=False):
                old = flat[idx]
                flat[idx] = old + eps
                up, _, _ = estimator_loss(small_scorer, self.SEQS, self.LABELS, dual, temperature)
                flat[idx] = old - eps
                down, _, _ = estimator_loss(
                    small_scorer, self.SEQS, self.LABELS, dual, temperature
                )
                flat[idx] = old
                numeric = (up - down) / (2 * eps)
                assert grads[name].reshape(-1)[idx] == pytest.approx(numeric, rel=1e-4, abs=1e-7)

    def test_zero_logits_give_log_two(self, small_scorer):
        """A scorer that outputs 0 everywhere has loss log 2."""
        for name in small_scorer.params:
            small_scorer.params[name][...] = 0.0
        loss, _, z = estimator_loss(small_scorer, self.SEQS, self.LABELS)
        assert loss == pytest.approx(math.log(2.0))
        assert np.allclose(z, 0.0)


class TestBatching:
    """Class-balanced minibatches."""

    def test_balanced_batches(self):
        """Each batch holds half of each class and no index repeats in an epoch."""
        batches = balanced_batches(50, 37, 10, np.random.default_rng(0))
        assert len(batches) == 37 // 5
        seen_real = set()
        for real_idx, neg_idx in batches:
            assert len(real_idx) == len(neg_idx) == 5
            assert not seen_real & set(real_idx.tolist())
            seen_real |= set(real_idx.tolist())
            assert max(neg_idx) < 37

    def test_pool_source_never_repeats(self):
        """A pool hands out each sentence once, then refuses."""
        source = PoolSource([(A, EOS_ID), (B, EOS_ID), (C, EOS_ID)])
        rng = np.random.default_rng(0)
        assert source.draw(2, rng) == [(A, EOS_ID), (B, EOS_ID)]
        with pytest.raises(DataError) as exc:
            source.draw(2, rng)
        assert exc.value.code == "E_POOL_EXHAUSTED"


class TestTraining:
    """Fitting discriminators."""

    def test_too_few_real_sentences(self):
        """Training needs min_real real sentences."""
        with pytest.raises(DataError) as exc:
            train_ratio_estimator(Corpus.of([REAL] * 10), CorpusSource(Corpus.of([FAKE])))
        assert exc.value.code == "E_TOO_FEW_REAL"

    def test_separable_ratio_estimator(self, separable_real):
        """Model samples get a higher ratio than real sentences."""
        est = train_ratio_estimator(
            separable_real, CorpusSource(Corpus.of([FAKE])), SEPARABLE,
            np.random.default_rng(1), vocab_size=5,
        )
        assert est.gamma(FAKE) > 1.0 > est.gamma(REAL)
        assert est.report.holdout_accuracy > 0.8
        assert est.report.n_negative == len(separable_real)

    def test_separable_dual_estimator(self, separable_real):
        """The dual estimator separates through its prefix maximum."""
        est = train_dual_estimator(
            separable_real, CorpusSource(Corpus.of([FAKE])), SEPARABLE,
            np.random.default_rng(2), vocab_size=5,
        )
        assert est.gamma_dual(FAKE) > est.gamma_dual(REAL)
        assert est.report.holdout_accuracy > 0.8

    @pytest.mark.slow
    def test_self_play_is_calibrated(self, vocab):
        """Real against real: ratios stay near one and the classifier near chance."""
        lines = oracle_corpora(n_general=0, n_domain=5000, seed=4)["domain"]
        real = corpus_from_lines(lines[:4000], vocab, MAX_LEN)
        held = corpus_from_lines(lines[4000:], vocab, MAX_LEN)
        config = EstimatorConfig(embed_dim=4, conv_layers=((4, 2),), max_epochs=5)
        est = train_ratio_estimator(
            real, CorpusSource(real), config, np.random.default_rng(5), vocab_size=len(vocab)
        )
        mean_log_gamma = float(np.mean([math.log(est.gamma(s)) for s in held]))
        assert -0.2 <= mean_log_gamma <= 0.2
        assert est.report.holdout_accuracy == pytest.approx(0.5, abs=0.05)

    def test_divergence_raises(self, separable_real):
        """An infinite learning rate produces a non-finite loss."""
        config = EstimatorConfig(embed_dim=4, conv_layers=((3, 2),), lr=float("inf"))
        with pytest.raises(TrainingDivergedError) as exc:
            train_ratio_estimator(
                separable_real, CorpusSource(Corpus.of([FAKE])), config, vocab_size=5
            )
        assert exc.value.code == "E_TRAIN_DIVERGED"


class TestStack:
    """Composition of estimator layers."""

    def test_composite_and_acceptance(self, two_layer_stack):
        """Composite is the product; acceptance divides by max(gamma, 1)."""
        assert two_layer_stack.gammas((A, EOS_ID)) == (3.0, 1.0)
        assert two_layer_stack.composite_gamma((A, EOS_ID)) == pytest.approx(3.0)
        assert two_layer_stack.acceptance((A, EOS_ID)) == pytest.approx(1 / 3)
        assert two_layer_stack.composite_gamma((B, C, EOS_ID)) == pytest.approx(0.8 * 1.5)
        assert two_layer_stack.acceptance((B, C, EOS_ID)) == pytest.approx(1 / 1.5)

    def test_acceptance_in_unit_interval(self, two_layer_stack):
        """a(x) lies in (0, 1] for every sentence."""
        for s in [(EOS_ID,), (A, EOS_ID), (C, C, C, C, EOS_ID)]:
            assert 0.0 < two_layer_stack.acceptance(s) <= 1.0

    def test_truncated(self, two_layer_stack):
        """truncated(k) keeps the first k layers."""
        first = two_layer_stack.truncated(1)
        assert len(first) == 1
        assert first.acceptance((B, C, EOS_ID)) == 1.0

    def test_prefix_gamma_needs_duals(self, rule_stack):
        """Prefix ratios require a dual on every layer."""
        assert not rule_stack.has_duals
        with pytest.raises(DataError) as exc:
            rule_stack.prefix_gamma((A,))
        assert exc.value.code == "E_NO_DUAL"

    def test_prefix_gamma_is_product(self):
        """Composite prefix ratio multiplies the layer duals."""
        stack = EstimatorStack([
            StackLayer(RuleScorer(), ConstantPrefixScorer(2.0)),
            StackLayer(LengthScorer(), ConstantPrefixScorer(1.5)),
        ])
        assert stack.has_duals
        assert stack.prefix_gamma((A, B)) == pytest.approx(3.0)

    def test_add_layer_clears_cache(self, rule_stack):
        """Adding a layer invalidates memoised ratios."""
        assert rule_stack.acceptance((B, B, EOS_ID)) == 1.0
        rule_stack.add_layer(StackLayer(LengthScorer()))
        assert rule_stack.acceptance((B, B, EOS_ID)) == pytest.approx(1 / 1.5)

    def test_caches_are_bounded(self):
        """A full cache is dropped before it grows past its limit."""
        stack = EstimatorStack(
            [StackLayer(RuleScorer(), ConstantPrefixScorer(2.0))], cache_limit=8
        )
        sentences = [(A,) * k + (B,) * j + (EOS_ID,) for k in range(5) for j in range(5)]
        for s in sentences:
            stack.acceptance(s)
            stack.prefix_gamma(s[:-1])
            assert stack.cache_size <= 16
        assert stack.acceptance((A, EOS_ID)) == pytest.approx(1 / 3)
        stack.clear_cache()
        assert stack.cache_size == 0

    def test_concurrent_readers_agree(self):
        """Threads sharing one stack see the same ratios as a serial pass."""
        stack = EstimatorStack(
            [StackLayer(RuleScorer(), ConstantPrefixScorer(2.0)), StackLayer(LengthScorer())],
            cache_limit=16,
        )
        sentences = [
            tuple(int(t) for t in row) + (EOS_ID,)
            for row in np.random.default_rng(3).integers(2, 5, size=(400, 3))
        ]
        serial = [RuleScorer().gamma(s) * LengthScorer().gamma(s) for s in sentences]
        with ThreadPoolExecutor(max_workers=8) as pool:
            shared = list(pool.map(stack.composite_gamma, sentences * 4))
        assert shared == pytest.approx(serial * 4)
        assert stack.cache_size <= 32


class TestBuildStack:
    """Boosted stack construction."""

    def test_rejects_zero_layers(self, model, domain):
        """At least one layer is required."""
        with pytest.raises(DataError):
            build_stack(model, domain, 0)

    def test_starvation_when_budget_is_tiny(self, model, domain):
        """Layer negatives that cannot be collected raise StarvationError."""
        config = EstimatorConfig(embed_dim=4, conv_layers=((3, 2),), max_epochs=1)
        real = Corpus.of(domain.sentences[:200])
        with pytest.raises(StarvationError) as exc:
            build_stack(model, real, 2, config, max_len=4, with_duals=False, budget=10)
        assert exc.value.code == "E_STARVATION"

    @pytest.mark.slow
    def test_two_layer_stack_with_duals(self, model, domain):
        """Every layer gets a ratio and a dual estimator plus a report."""
        config = EstimatorConfig(embed_dim=4, conv_layers=((4, 2),), max_epochs=2)
        real = Corpus.of(domain.sentences[:300])
        stack = build_stack(model, real, 2, config, seed=3, max_len=4)
        assert len(stack) == 2
        assert stack.has_duals
        reports = stack.report.layers
        assert [r.layer for r in reports] == [0, 1]
        assert reports[0].negative_acceptance_rate == 1.0
        assert 0.0 < reports[1].negative_acceptance_rate <= 1.0
        assert 0.0 < stack.acceptance((A, B, EOS_ID)) <= 1.0

    @pytest.mark.slow
    def test_holdout_accuracy_falls_with_depth(self, model, vocab):
        """Each layer faces a harder task; accuracy never rises by more than 0.05."""
        lines = oracle_corpora(n_general=0, n_domain=3000, seed=6)["domain"]
        real = corpus_from_lines(lines, vocab, MAX_LEN)
        config = EstimatorConfig(embed_dim=4, conv_layers=((4, 2),), max_epochs=5)
        stack = build_stack(model, real, 3, config, seed=2, max_len=MAX_LEN, with_duals=False)
        accuracies = stack.report.holdout_accuracies
        assert len(accuracies) == 3
        for shallow, deep in zip(accuracies, accuracies[1:]):
            assert deep <= shallow + 0.05


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
