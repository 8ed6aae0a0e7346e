"""
Language Model Tests

Smoothed n-gram distributions, fine-tuning by interpolation, capped
sentence probabilities and perplexity.
"""

import math

import numpy as np
import pytest

from mctailor.core import lm
from mctailor.core.oracle import enumerate_model
from mctailor.schemas.corpus import Corpus, EOS_ID
from mctailor.schemas.errors import DataError

from .helpers import MAX_LEN, A, B, C, eos_terminated


class TestDistributions:
    """Next-token distributions."""

    @pytest.mark.parametrize("prefix", [(), (A,), (A, B), (C, C, C), (B, A, C, A)])
    def test_strictly_positive_and_normalised(self, model, prefix):
        """Every next-token distribution is positive and sums to one."""
        d = lm.next_dist(model, prefix)
        assert d.shape == (model.vocab_size,)
        assert np.all(d > 0)
        assert d.sum() == pytest.approx(1.0, abs=1e-12)

    def test_history_is_left_padded_with_eos(self, base_model):
        """Short histories are padded with EOS up to order - 1 tokens."""
        assert base_model.history_key(()) == (EOS_ID,)
        assert base_model.history_key((A, B)) == (B,)

    def test_unigram_model_has_empty_history(self, general, vocab):
        """An order-1 model ignores the prefix."""
        unigram = lm.train(general, vocab, order=1)
        assert unigram.history_key((A, B, C)) == ()
        assert np.allclose(lm.next_dist(unigram, ()), lm.next_dist(unigram, (A, B)))

    def test_add_alpha_on_unseen_context(self, general, vocab):
        """A context never seen falls back to the uniform add-alpha row."""
        bigram_only = lm.train(general, vocab, order=2, lambdas=(0.0, 1.0))
        d = bigram_only.dist((0,))
        assert np.allclose(d, np.full(len(vocab), 1.0 / len(vocab)))


class TestTraining:
    """Argument validation."""

    def test_empty_corpus(self, vocab):
        """Training needs at least one sentence."""
        with pytest.raises(DataError) as exc:
            lm.train(Corpus.of([]), vocab)
        assert exc.value.code == "E_LM_EMPTY"

    def test_bad_lambdas(self, general, vocab):
        """Interpolation weights must match the order and sum to one."""
        with pytest.raises(DataError):
            lm.train(general, vocab, order=2, lambdas=(0.5, 0.6))
        with pytest.raises(DataError):
            lm.train(general, vocab, order=2, lambdas=(1.0,))

    def test_bad_alpha(self, general, vocab):
        """alpha must be positive."""
        with pytest.raises(DataError):
            lm.train(general, vocab, alpha=0.0)


class TestFinetune:
    """Fine-tuning as exact interpolation."""

    @pytest.mark.parametrize("prefix", [(), (A,), (B, C)])
    def test_mixture_identity(self, base_model, domain, prefix):
        """P_ft = (1 - mu) P_base + mu P_domain at every context."""
        mu = 0.3
        tuned = lm.finetune(base_model, domain, mu)
        domain_only = lm.train(domain, base_model.vocab, 2, base_model.alpha, base_model.lambdas)
        expected = (1 - mu) * lm.next_dist(base_model, prefix) + mu * lm.next_dist(
            domain_only, prefix
        )
        assert np.allclose(lm.next_dist(tuned, prefix), expected, atol=1e-12)

    @pytest.mark.parametrize("prefix", [(), (A,), (B, C), (C, C, A)])
    def test_mu_extremes_are_identities(self, base_model, domain, prefix):
        """mu = 0 is the base model and mu = 1 the domain model, bit for bit."""
        domain_only = lm.train(domain, base_model.vocab, 2, base_model.alpha, base_model.lambdas)
        untouched = lm.finetune(base_model, domain, 0.0)
        replaced = lm.finetune(base_model, domain, 1.0)
        assert np.array_equal(lm.next_dist(untouched, prefix), lm.next_dist(base_model, prefix))
        assert np.array_equal(lm.next_dist(replaced, prefix), lm.next_dist(domain_only, prefix))
        s = tuple(prefix) + (EOS_ID,)
        assert lm.sentence_logprob(replaced, s) == lm.sentence_logprob(domain_only, s)

    def test_mu_out_of_range(self, base_model, domain):
        """mu outside [0, 1] is rejected."""
        with pytest.raises(DataError):
            lm.finetune(base_model, domain, 1.5)

    def test_finetune_lowers_domain_perplexity(self, base_model, domain):
        """Moving mass toward the domain corpus lowers its perplexity."""
        tuned = lm.finetune(base_model, domain, 0.8)
        assert lm.perplexity(tuned, domain) < lm.perplexity(base_model, domain)

    def test_select_mu_returns_lowest_sweep_point(self, base_model, domain):
        """select_mu picks the grid point with the lowest eval perplexity."""
        train = Corpus.of(domain.sentences[:600])
        held = Corpus.of(domain.sentences[600:])
        best, sweep = lm.select_mu(base_model, train, held, grid=(0.1, 0.5, 0.9))
        assert set(sweep) == {0.1, 0.5, 0.9}
        assert sweep[best] == min(sweep.values())


class TestSentenceProbability:
    """Capped sentence probabilities and sampling."""

    def test_capped_probabilities_sum_to_one(self, model):
        """With the cap applied, probabilities over all sentences sum to one."""
        exact = enumerate_model(model, MAX_LEN)
        total = sum(math.exp(lm.sentence_logprob(model, s, MAX_LEN)) for s in exact.support)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_cap_removes_only_final_eos_factor(self, model):
        """At the cap the EOS factor is one; below it nothing changes."""
        full = (A, B, C, A, EOS_ID)
        uncapped = lm.sentence_logprob(model, full)
        capped = lm.sentence_logprob(model, full, MAX_LEN)
        eos = math.log(lm.next_dist(model, (A, B, C, A))[EOS_ID])
        assert capped == pytest.approx(uncapped - eos)
        short = (A, EOS_ID)
        assert lm.sentence_logprob(model, short, MAX_LEN) == lm.sentence_logprob(model, short)

    def test_generate_is_driven_by_uniforms(self, model):
        """The same uniforms give the same sentence."""
        u = np.random.default_rng(5).random(MAX_LEN)
        assert model.generate(u, MAX_LEN) == model.generate(u.copy(), MAX_LEN)

    def test_samples_respect_cap(self, model):
        """Samples are EOS-terminated and at most max_len tokens long."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            s = lm.sample_sentence(model, rng, MAX_LEN)
            assert eos_terminated(s)
            assert len(s) - 1 <= MAX_LEN

    def test_near_one_uniform_draws_last_token(self, model):
        """Inverse-CDF draws stay in range at the top of the unit interval."""
        assert model.draw_token((), 1.0 - 1e-16) == model.vocab_size - 1

    def test_uniform_model_perplexity_is_vocab_size(self, vocab, domain):
        """Every token at 1 / |V| gives perplexity |V|."""
        uniform = lm.NGramModel(
            order=1,
            vocab=vocab,
            alpha=1.0,
            lambdas=(1.0,),
            tables=(lm.CountTable(counts={}),),
            mixture=(1.0,),
        )
        assert np.allclose(lm.next_dist(uniform, (A, B)), 1.0 / len(vocab))
        assert lm.perplexity(uniform, domain) == pytest.approx(len(vocab), rel=1e-12)

    def test_perplexity_of_empty_corpus(self, model):
        """Perplexity needs at least one sentence."""
        with pytest.raises(DataError):
            lm.perplexity(model, Corpus.of([]))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
