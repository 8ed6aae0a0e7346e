"""
mctailor Corpus Loading

Reads whitespace-tokenized text corpora, builds vocabularies and splits corpora
into train/eval/test partitions.
"""

from __future__ import annotations
from typing import Dict, List, Optional, Sequence, Tuple
from collections import Counter
from pathlib import Path
import logging
import math

import numpy as np

from ..schemas.corpus import Corpus, Sentence, Vocab, make_sentence, EOS_TOKEN, UNK_TOKEN
from ..schemas.errors import DataError


logger = logging.getLogger(__name__)

SPLIT_TOLERANCE = 1e-9


def _read_lines(path: Path, lowercase: bool) -> List[List[str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DataError("E_CORPUS_READ", f"Cannot read corpus {path}: {e}") from e

    rows = []
    for line in text.split("\n"):
        words = (line.lower() if lowercase else line).split()
        if words:
            rows.append(words)
    if not rows:
        raise DataError("E_CORPUS_EMPTY", f"Corpus {path} contains no sentences")
    return rows


def build_vocab(rows: Sequence[Sequence[str]], min_count: int = 1) -> Vocab:
    """Vocab of every token seen at least min_count times."""
    counts = Counter(w for row in rows for w in row)
    return Vocab.from_words(w for w, c in counts.items() if c >= min_count)


def vocab_from_files(paths: Sequence[str], min_count: int = 1, lowercase: bool = False) -> Vocab:
    """One vocab covering several corpora (token counts are pooled)."""
    rows: List[List[str]] = []
    for path in paths:
        rows.extend(_read_lines(Path(path), lowercase))
    return build_vocab(rows, min_count)


def load_corpus(
    path: str,
    vocab: Optional[Vocab] = None,
    max_len: int = 20,
    min_count: int = 1,
    lowercase: bool = False,
) -> Tuple[Corpus, Vocab]:
    """
    Load a one-sentence-per-line corpus.

    Args:
        path: UTF-8 text file, tokens separated by whitespace
        vocab: Existing vocab; built from the file when absent
        max_len: Longer lines are truncated to max_len tokens
        min_count: Minimum token count for a built vocab
        lowercase: Lowercase before tokenizing

    Returns:
        The encoded corpus and the vocab used
    """
    if max_len < 1:
        raise DataError("E_MAX_LEN", f"max_len must be positive, got {max_len}")

    rows = _read_lines(Path(path), lowercase)
    if vocab is None:
        vocab = build_vocab(rows, min_count)

    truncated = sum(1 for row in rows if len(row) > max_len)
    if truncated:
        logger.info(f"Truncated {truncated} of {len(rows)} lines to max_len={max_len}")

    sentences = [make_sentence(vocab.encode(row), max_len) for row in rows]
    logger.debug(f"Loaded {len(sentences)} sentences from {path} (|V|={len(vocab)})")
    return Corpus.of(sentences, source_path=str(path)), vocab


def corpus_from_lines(
    lines: Sequence[str],
    vocab: Vocab,
    max_len: int,
    source_path: str = "<memory>",
) -> Corpus:
    """Encode in-memory lines with an existing vocab."""
    rows = [line.split() for line in lines]
    sentences = [make_sentence(vocab.encode(row), max_len) for row in rows if row]
    return Corpus.of(sentences, source_path=source_path)


def write_corpus(corpus: Corpus, vocab: Vocab, path: str) -> None:
    """Write decoded sentences one per line."""
    lines = [vocab.render(s) for s in corpus]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# =============================================================================
# Vocab file
# =============================================================================

def save_vocab(vocab: Vocab, path: str) -> None:
    """One token per line; the line number is the id."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(tok + "\n" for tok in vocab.tokens), encoding="utf-8")


def load_vocab(path: str) -> Vocab:
    try:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
    except OSError as e:
        raise DataError("E_VOCAB_READ", f"Cannot read vocab {path}: {e}") from e
    tokens = [line for line in lines if line]
    if tokens[:2] != [UNK_TOKEN, EOS_TOKEN]:
        raise DataError("E_VOCAB_RESERVED", f"Vocab file {path} must begin with <unk>, <eos>")
    return Vocab(tokens=tuple(tokens))


# =============================================================================
# Split
# =============================================================================

def split(
    corpus: Corpus,
    fractions: Tuple[float, float, float],
    seed: int,
) -> Tuple[Corpus, Corpus, Corpus]:
    """
    Deterministically shuffle and partition a corpus into (train, eval, test).

    Eval and test sizes are floored; the remainder goes to train.
    """
    f_train, f_eval, f_test = fractions
    if f_train <= 0 or f_eval < 0 or f_test < 0:
        raise DataError("E_SPLIT_FRACTIONS", f"Invalid split fractions {fractions}")
    if abs(f_train + f_eval + f_test - 1.0) > SPLIT_TOLERANCE:
        raise DataError("E_SPLIT_FRACTIONS", f"Split fractions must sum to 1, got {fractions}")
    n = len(corpus)
    if n < 3:
        raise DataError("E_SPLIT_SMALL", f"Cannot split a corpus of {n} sentences")

    n_eval = math.floor(n * f_eval + SPLIT_TOLERANCE)
    n_test = math.floor(n * f_test + SPLIT_TOLERANCE)
    n_train = n - n_eval - n_test

    order = np.random.default_rng(seed).permutation(n)
    parts: Dict[str, List[Sentence]] = {"train": [], "eval": [], "test": []}
    for rank, idx in enumerate(order):
        key = "train" if rank < n_train else ("eval" if rank < n_train + n_eval else "test")
        parts[key].append(corpus.sentences[int(idx)])

    src = corpus.source_path
    return (
        Corpus.of(parts["train"], source_path=f"{src}#train"),
        Corpus.of(parts["eval"], source_path=f"{src}#eval"),
        Corpus.of(parts["test"], source_path=f"{src}#test"),
    )
