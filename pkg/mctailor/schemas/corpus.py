"""
mctailor Corpus Schemas

Token inventory, encoded sentences and corpora.
"""

from __future__ import annotations
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple
from dataclasses import dataclass, field

from .errors import DataError


UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"
UNK_ID = 0
EOS_ID = 1

# A sentence is a tuple of token ids whose last (and only) EOS is the terminal id.
Sentence = Tuple[int, ...]


# =============================================================================
# Vocab
# =============================================================================

@dataclass(frozen=True)
class Vocab:
    """
    Ordered token inventory.

    Ids are dense (0..|V|-1); id 0 is UNK and id 1 is EOS.
    """
    tokens: Tuple[str, ...]
    id_of: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.tokens[:2] != (UNK_TOKEN, EOS_TOKEN):
            raise DataError(
                "E_VOCAB_RESERVED",
                f"Vocab must start with {UNK_TOKEN!r} and {EOS_TOKEN!r}",
            )
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("E_VOCAB_DUPLICATE", "Vocab tokens must be unique")
        object.__setattr__(self, "id_of", {tok: i for i, tok in enumerate(self.tokens)})

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocab":
        """Build a vocab from surface words; reserved tokens are prepended."""
        kept = sorted({w for w in words if w not in (UNK_TOKEN, EOS_TOKEN)})
        return cls(tokens=(UNK_TOKEN, EOS_TOKEN, *kept))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: Sequence[str]) -> List[int]:
        """Map words to ids; out-of-vocabulary and reserved surface forms become UNK."""
        out = []
        for w in words:
            idx = self.id_of.get(w, UNK_ID)
            out.append(UNK_ID if idx == EOS_ID else idx)
        return out

    def decode(self, ids: Sequence[int]) -> List[str]:
        """Map ids back to surface strings (EOS is dropped)."""
        return [self.tokens[i] for i in ids if i != EOS_ID]

    def render(self, sentence: Sentence) -> str:
        """Decoded sentence as a single space-joined line."""
        return " ".join(self.decode(sentence))


# =============================================================================
# Sentence helpers
# =============================================================================

def make_sentence(ids: Sequence[int], max_len: int) -> Sentence:
    """Truncate to max_len tokens and terminate with EOS."""
    body = list(ids[:max_len])
    if EOS_ID in body:
        raise DataError("E_EOS_INSIDE", "EOS may only appear at the end of a sentence")
    return tuple(body) + (EOS_ID,)


def validate_sentence(sentence: Sentence, vocab_size: int, max_len: int) -> None:
    """Raise DataError unless sentence satisfies the Sentence invariants."""
    if not sentence or sentence[-1] != EOS_ID:
        raise DataError("E_SENTENCE_EOS", f"Sentence must end with EOS: {sentence}")
    if EOS_ID in sentence[:-1]:
        raise DataError("E_EOS_INSIDE", f"EOS inside sentence: {sentence}")
    if len(sentence) - 1 > max_len:
        raise DataError("E_SENTENCE_LEN", f"Sentence longer than max_len={max_len}")
    if any(i < 0 or i >= vocab_size for i in sentence):
        raise DataError("E_SENTENCE_ID", f"Token id out of range for |V|={vocab_size}")


# =============================================================================
# Corpus
# =============================================================================

@dataclass(frozen=True)
class Corpus:
    """Immutable list of encoded sentences with provenance."""
    sentences: Tuple[Sentence, ...]
    source_path: str = ""

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)

    def __getitem__(self, index: int) -> Sentence:
        return self.sentences[index]

    @property
    def token_count(self) -> int:
        """Number of tokens including one EOS per sentence."""
        return sum(len(s) for s in self.sentences)

    def lengths(self) -> List[int]:
        """Sentence lengths excluding EOS."""
        return [len(s) - 1 for s in self.sentences]

    def check_ids(self, vocab_size: int) -> None:
        for s in self.sentences:
            if any(i >= vocab_size for i in s):
                raise DataError(
                    "E_CORPUS_ID",
                    f"Corpus {self.source_path!r} has ids outside vocab of size {vocab_size}",
                )

    @classmethod
    def of(cls, sentences: Iterable[Sentence], source_path: str = "") -> "Corpus":
        return cls(sentences=tuple(tuple(s) for s in sentences), source_path=source_path)
