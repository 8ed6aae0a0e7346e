"""
mctailor Sampling Schemas

Particles, sampler statistics and sample batches.
"""

from __future__ import annotations
from typing import Any, Dict, List, Optional
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

from .corpus import Sentence


# =============================================================================
# Algorithm
# =============================================================================

class SamplingAlgorithm(str, Enum):
    """Samplers for the tailored distribution."""
    RS = "rs"
    SMC = "smc"
    ERS = "ers"


# =============================================================================
# Particle
# =============================================================================

@dataclass
class Particle:
    """
    One in-progress sequence.

    A killed particle consumes no further token steps. The weight fields and
    the lineage node are SMC bookkeeping.
    """
    prefix: List[int] = field(default_factory=list)
    r: float = 1.0
    alive: bool = True
    finished: bool = False
    token_steps: int = 0
    log_weight: float = 0.0
    last_gamma: float = 1.0
    step_log_weights: List[float] = field(default_factory=list)
    node: int = -1

    def advance(self, token: int) -> None:
        if not self.alive:
            raise RuntimeError("Cannot advance a killed particle")
        self.prefix.append(token)
        self.token_steps += 1

    def kill(self) -> None:
        self.alive = False


# =============================================================================
# Statistics
# =============================================================================

@dataclass
class SampleStats:
    """Compute accounting for one sampling run."""
    proposals: int = 0
    accepted: int = 0
    token_steps_total: int = 0
    token_steps_wasted: int = 0
    kills: int = 0
    distinct_fraction: float = 0.0
    budget_exhausted: bool = False
    log_Z: Optional[float] = None
    log_Z_stderr: Optional[float] = None

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0

    def merge(self, other: "SampleStats") -> None:
        """Add another run's counters (distinct_fraction is recomputed by the caller)."""
        self.proposals += other.proposals
        self.accepted += other.accepted
        self.token_steps_total += other.token_steps_total
        self.token_steps_wasted += other.token_steps_wasted
        self.kills += other.kills

    def to_dict(self) -> Dict[str, Any]:
        return {
            "proposals": self.proposals,
            "accepted": self.accepted,
            "acceptance_rate": self.acceptance_rate,
            "token_steps_total": self.token_steps_total,
            "token_steps_wasted": self.token_steps_wasted,
            "kills": self.kills,
            "distinct_fraction": self.distinct_fraction,
            "budget_exhausted": self.budget_exhausted,
            "log_Z": self.log_Z,
            "log_Z_stderr": self.log_Z_stderr,
        }

    def to_text(self) -> str:
        """Key-value block, one 'key: value' per line."""
        return "".join(f"{k}: {v}\n" for k, v in self.to_dict().items())


def distinct_fraction(sentences: List[Sentence]) -> float:
    """|unique| / |all|; 0 for an empty list."""
    if not sentences:
        return 0.0
    return len(set(sentences)) / len(sentences)


# =============================================================================
# Batch
# =============================================================================

@dataclass
class SampleBatch:
    """Accepted sentences with the run's statistics."""
    accepted: List[Sentence]
    stats: SampleStats
    algorithm: SamplingAlgorithm = SamplingAlgorithm.RS
    particles: List[Particle] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.accepted)

    def histogram(self) -> Dict[Sentence, int]:
        return dict(Counter(self.accepted))
