"""
mctailor Fixtures

Deterministic synthetic corpora shipped with the tool:

- oracle: three words (|V| = 5 with <unk> and <eos>) and sentences of at most
  four tokens, small enough for exhaustive enumeration.
- benchmark: a general corpus drawn from a random order-3 generator with the
  short sentence "yes ." injected at a high rate, and a domain corpus from a
  different generator where "yes ." is rare. Fine-tuning on the domain keeps
  much of the general model's mass on "yes .", which the tailor should remove.
"""

from __future__ import annotations
from typing import Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field
from pathlib import Path
import logging

import numpy as np

from ..schemas.errors import UsageError


logger = logging.getLogger(__name__)

ORACLE_WORDS = ("a", "b", "c")
ORACLE_MAX_LEN = 4
PATTERN = ("yes", ".")

GENERAL_WORDS = (
    "the", "a", "cat", "dog", "sat", "ran", "on", "mat", "park", "big",
    "small", "saw", "bird", "tree", "near", "house", "red", "old", "and", "it",
)
DOMAIN_WORDS = (
    "the", "a", "patient", "doctor", "saw", "took", "dose", "daily", "pain", "mild",
    "severe", "and", "it", "was", "reported", "after", "test", "result", "normal", "high",
)


# =============================================================================
# Generators
# =============================================================================

@dataclass
class MarkovGenerator:
    """
    Sentence source with random next-word tables per context.

    Each context of the last order-1 words gets a Dirichlet(concentration)
    distribution over words, drawn on first use from the generator's own
    stream. A sentence stops with probability stop_prob after each word.
    """
    words: Tuple[str, ...]
    order: int = 3
    stop_prob: float = 0.2
    concentration: float = 0.3
    seed: int = 0
    _tables: Dict[Tuple[str, ...], np.ndarray] = field(default_factory=dict, repr=False)
    _table_rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def _dist(self, context: Tuple[str, ...]) -> np.ndarray:
        if self._table_rng is None:
            self._table_rng = np.random.default_rng([self.seed, len(self.words)])
        p = self._tables.get(context)
        if p is None:
            p = self._table_rng.dirichlet(np.full(len(self.words), self.concentration))
            self._tables[context] = p
        return p

    def sentence(self, rng: np.random.Generator, max_len: int) -> List[str]:
        out: List[str] = []
        while len(out) < max_len:
            context = tuple(out[-(self.order - 1):]) if self.order > 1 else ()
            idx = int(rng.choice(len(self.words), p=self._dist(context)))
            out.append(self.words[idx])
            if rng.random() < self.stop_prob:
                break
        return out


# Oracle transition tables over (a, b, c, <stop>) keyed by the previous word.
ORACLE_GENERAL = {
    "": (0.5, 0.3, 0.2, 0.0),
    "a": (0.2, 0.3, 0.1, 0.4),
    "b": (0.3, 0.1, 0.2, 0.4),
    "c": (0.2, 0.2, 0.1, 0.5),
}
ORACLE_DOMAIN = {
    "": (0.2, 0.3, 0.5, 0.0),
    "a": (0.1, 0.1, 0.4, 0.4),
    "b": (0.5, 0.1, 0.1, 0.3),
    "c": (0.1, 0.4, 0.2, 0.3),
}


def _oracle_sentence(table: Dict[str, Sequence[float]], rng: np.random.Generator) -> List[str]:
    out: List[str] = []
    while len(out) < ORACLE_MAX_LEN:
        p = table[out[-1] if out else ""]
        idx = int(rng.choice(4, p=p))
        if idx == 3:
            break
        out.append(ORACLE_WORDS[idx])
    return out


# =============================================================================
# Fixture corpora
# =============================================================================

def oracle_corpora(
    n_general: int = 2000,
    n_domain: int = 800,
    seed: int = 0,
) -> Dict[str, List[str]]:
    rng = np.random.default_rng([seed, 1])
    general = [" ".join(_oracle_sentence(ORACLE_GENERAL, rng)) for _ in range(n_general)]
    domain = [" ".join(_oracle_sentence(ORACLE_DOMAIN, rng)) for _ in range(n_domain)]
    return {"general": general, "domain": domain}


def benchmark_corpora(
    n_general: int = 3000,
    n_domain: int = 1200,
    general_pattern_rate: float = 0.4,
    domain_pattern_rate: float = 0.02,
    max_len: int = 12,
    seed: int = 0,
) -> Dict[str, List[str]]:
    rng = np.random.default_rng([seed, 2])
    general_gen = MarkovGenerator(GENERAL_WORDS, seed=seed + 11)
    domain_gen = MarkovGenerator(DOMAIN_WORDS, seed=seed + 23)

    def draw(gen: MarkovGenerator, n: int, rate: float) -> List[str]:
        lines = []
        for _ in range(n):
            if rng.random() < rate:
                lines.append(" ".join(PATTERN))
            else:
                lines.append(" ".join(gen.sentence(rng, max_len)))
        return lines

    return {
        "general": draw(general_gen, n_general, general_pattern_rate),
        "domain": draw(domain_gen, n_domain, domain_pattern_rate),
    }


FIXTURES = {
    "oracle": oracle_corpora,
    "benchmark": benchmark_corpora,
}


def write_fixture(name: str, out_dir: str) -> Dict[str, str]:
    """
    Write general.txt and domain.txt for a named fixture.

    Returns:
        Corpus role -> written path
    """
    if name not in FIXTURES:
        raise UsageError(
            "E_FIXTURE_NAME",
            f"Unknown fixture {name!r}; choose one of {', '.join(sorted(FIXTURES))}",
        )
    corpora = FIXTURES[name]()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    paths = {}
    for role, lines in corpora.items():
        path = root / f"{role}.txt"
        # Empty oracle sentences would vanish as blank lines.
        path.write_text("".join(line + "\n" for line in lines if line), encoding="utf-8")
        paths[role] = str(path)
    logger.info(f"Wrote fixture {name} to {root}")
    return paths
