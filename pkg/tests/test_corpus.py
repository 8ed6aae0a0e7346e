"""
Corpus Tests

Loading, vocab construction, sentence invariants and deterministic splits.
"""

import pytest

from mctailor.core.corpus import (
    load_corpus,
    load_vocab,
    save_vocab,
    split,
    vocab_from_files,
)
from mctailor.schemas.corpus import (
    Corpus,
    Vocab,
    make_sentence,
    validate_sentence,
    EOS_ID,
    UNK_ID,
)
from mctailor.schemas.errors import DataError


@pytest.fixture
def corpus_file(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("the cat sat\n\n  dog ran far away today  \nthe dog\n", encoding="utf-8")
    return path


class TestVocab:
    """Token inventory and encoding."""

    def test_reserved_tokens_first(self):
        """Reserved tokens take ids 0 and 1, the rest follow sorted."""
        vocab = Vocab.from_words(["b", "a", "b"])
        assert vocab.tokens == ("<unk>", "<eos>", "a", "b")
        assert vocab.id_of["a"] == 2

    def test_unknown_and_reserved_surface_forms_map_to_unk(self):
        """Out-of-vocabulary words and a literal <eos> both become UNK."""
        vocab = Vocab.from_words(["a"])
        assert vocab.encode(["a", "zzz", "<eos>"]) == [2, UNK_ID, UNK_ID]

    def test_rejects_bad_reserved_prefix(self):
        """A vocab that does not start with <unk>, <eos> is refused."""
        with pytest.raises(DataError) as exc:
            Vocab(tokens=("a", "<unk>", "<eos>"))
        assert exc.value.code == "E_VOCAB_RESERVED"

    def test_render_drops_eos(self):
        """Rendering joins words and omits the terminal EOS."""
        vocab = Vocab.from_words(["a", "b"])
        assert vocab.render((2, 3, EOS_ID)) == "a b"
        assert vocab.render((EOS_ID,)) == ""

    def test_vocab_file_roundtrip(self, tmp_path):
        """save_vocab writes one token per line that load_vocab reads back."""
        vocab = Vocab.from_words(["x", "y"])
        save_vocab(vocab, str(tmp_path / "vocab.txt"))
        assert load_vocab(str(tmp_path / "vocab.txt")) == vocab

    def test_vocab_file_without_reserved_tokens(self, tmp_path):
        """A vocab file must begin with the reserved tokens."""
        path = tmp_path / "vocab.txt"
        path.write_text("a\nb\n", encoding="utf-8")
        with pytest.raises(DataError):
            load_vocab(str(path))


class TestSentence:
    """Sentence construction invariants."""

    def test_make_sentence_truncates_and_terminates(self):
        """Bodies longer than max_len are cut and EOS appended."""
        assert make_sentence([2, 3, 4, 2], 2) == (2, 3, EOS_ID)

    def test_eos_inside_rejected(self):
        """EOS may only terminate a sentence."""
        with pytest.raises(DataError) as exc:
            make_sentence([2, EOS_ID, 3], 5)
        assert exc.value.code == "E_EOS_INSIDE"

    def test_validate_sentence(self):
        """validate_sentence checks termination, length and id range."""
        validate_sentence((2, 3, EOS_ID), vocab_size=5, max_len=2)
        with pytest.raises(DataError):
            validate_sentence((2, 3), vocab_size=5, max_len=4)
        with pytest.raises(DataError):
            validate_sentence((2, 3, 4, EOS_ID), vocab_size=5, max_len=2)
        with pytest.raises(DataError):
            validate_sentence((7, EOS_ID), vocab_size=5, max_len=2)


class TestLoadCorpus:
    """Reading corpora from disk."""

    def test_skips_blank_lines_and_truncates(self, corpus_file):
        """Blank lines vanish and long lines are truncated to max_len."""
        corpus, vocab = load_corpus(str(corpus_file), max_len=3)
        assert len(corpus) == 3
        assert corpus.lengths() == [3, 3, 2]
        assert all(s[-1] == EOS_ID for s in corpus)
        assert vocab.render(corpus[1]) == "dog ran far"

    def test_min_count_maps_rare_words_to_unk(self, corpus_file):
        """Words below min_count are left out of the built vocab."""
        corpus, vocab = load_corpus(str(corpus_file), max_len=10, min_count=2)
        assert set(vocab.tokens) == {"<unk>", "<eos>", "the", "dog"}
        assert corpus[0] == (vocab.id_of["the"], UNK_ID, UNK_ID, EOS_ID)

    def test_lowercase(self, tmp_path):
        """lowercase folds case before tokenizing."""
        path = tmp_path / "c.txt"
        path.write_text("The THE the\n", encoding="utf-8")
        _, vocab = load_corpus(str(path), lowercase=True)
        assert vocab.tokens == ("<unk>", "<eos>", "the")

    def test_empty_corpus(self, tmp_path):
        """A file without sentences is a data error."""
        path = tmp_path / "empty.txt"
        path.write_text("\n  \n", encoding="utf-8")
        with pytest.raises(DataError) as exc:
            load_corpus(str(path))
        assert exc.value.code == "E_CORPUS_EMPTY"

    def test_missing_file(self, tmp_path):
        """An unreadable path is a data error."""
        with pytest.raises(DataError) as exc:
            load_corpus(str(tmp_path / "nope.txt"))
        assert exc.value.code == "E_CORPUS_READ"

    def test_vocab_from_files_pools_corpora(self, tmp_path):
        """A shared vocab covers the words of every file."""
        (tmp_path / "g.txt").write_text("a b\n", encoding="utf-8")
        (tmp_path / "d.txt").write_text("c\n", encoding="utf-8")
        vocab = vocab_from_files([str(tmp_path / "g.txt"), str(tmp_path / "d.txt")])
        assert vocab.tokens == ("<unk>", "<eos>", "a", "b", "c")


class TestSplit:
    """Deterministic train/eval/test partitions."""

    @pytest.fixture
    def corpus(self):
        return Corpus.of([(2 + i % 3,) * (1 + i % 4) + (EOS_ID,) for i in range(103)])

    def test_sizes_floor_eval_and_test(self, corpus):
        """Eval and test sizes are floored; train takes the remainder."""
        train, dev, test = split(corpus, (0.8, 0.1, 0.1), seed=0)
        assert (len(train), len(dev), len(test)) == (83, 10, 10)

    def test_partition_covers_corpus(self, corpus):
        """The three parts together are a permutation of the corpus."""
        parts = split(corpus, (0.6, 0.2, 0.2), seed=3)
        merged = sorted(s for part in parts for s in part)
        assert merged == sorted(corpus.sentences)

    def test_same_seed_same_split(self, corpus):
        """A seed fully determines the split."""
        assert split(corpus, (0.8, 0.1, 0.1), 7) == split(corpus, (0.8, 0.1, 0.1), 7)

    def test_different_seed_different_order(self, corpus):
        """Different seeds shuffle differently."""
        a = split(corpus, (0.8, 0.1, 0.1), 1)[0].sentences
        b = split(corpus, (0.8, 0.1, 0.1), 2)[0].sentences
        assert a != b

    def test_invalid_fractions(self, corpus):
        """Fractions must be valid and sum to one."""
        with pytest.raises(DataError):
            split(corpus, (0.5, 0.1, 0.1), 0)
        with pytest.raises(DataError):
            split(corpus, (0.0, 0.5, 0.5), 0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
