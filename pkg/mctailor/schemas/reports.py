"""
mctailor Report Schemas

Metric reports, NLL tables and oracle verification results.
"""

from __future__ import annotations
from typing import Any, Dict, List, Optional
from dataclasses import dataclass, field
from enum import Enum
import json
import math

from pydantic import BaseModel, field_validator


# =============================================================================
# Metrics
# =============================================================================

class MetricsReport(BaseModel):
    """Automatic evaluation metrics of one sampler configuration."""
    ppl: float
    rev_ppl: float
    emd_l: float
    emd_f: float
    distinct_fraction: float
    n_samples: int
    sampler: str
    fingerprint: str = ""
    degenerate_generated: bool = False

    @field_validator("ppl", "rev_ppl", "emd_l", "emd_f", "distinct_fraction")
    @classmethod
    def finite_non_negative(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"Metric must be finite and >= 0, got {v}")
        return v

    def to_text(self) -> str:
        """Aligned two-column table."""
        rows = [
            ("sampler", self.sampler),
            ("n_samples", str(self.n_samples)),
            ("ppl", f"{self.ppl:.4f}"),
            ("rev_ppl", f"{self.rev_ppl:.4f}"),
            ("emd_l", f"{self.emd_l:.6f}"),
            ("emd_f", f"{self.emd_f:.6f}"),
            ("distinct_fraction", f"{self.distinct_fraction:.4f}"),
            ("degenerate_generated", str(self.degenerate_generated).lower()),
            ("fingerprint", self.fingerprint),
        ]
        width = max(len(k) for k, _ in rows)
        return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), sort_keys=True) + "\n"


class NLLRow(BaseModel):
    """Per-sentence NLL under the fine-tuned model and the tailored distribution."""
    sentence: str
    model_nll: float
    tailored_nll: float

    @property
    def delta(self) -> float:
        return self.tailored_nll - self.model_nll


def render_nll_table(rows: List[NLLRow]) -> str:
    if not rows:
        return ""
    width = max(8, max(len(r.sentence) for r in rows))
    lines = [f"{'sentence'.ljust(width)}  {'model':>8}  {'tailored':>8}"]
    for r in rows:
        lines.append(f"{r.sentence.ljust(width)}  {r.model_nll:8.3f}  {r.tailored_nll:8.3f}")
    return "\n".join(lines) + "\n"


# =============================================================================
# Verification
# =============================================================================

class VerificationSeverity(str, Enum):
    """Severity of a verification finding."""
    BREACH = "breach"
    WARNING = "warning"
    INFO = "info"


@dataclass
class VerificationIssue:
    """A single oracle check outcome."""
    code: str
    severity: VerificationSeverity
    message: str
    value: Optional[float] = None
    threshold: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "code": self.code,
            "severity": self.severity.value,
            "message": self.message,
            "value": self.value,
            "threshold": self.threshold,
        }


@dataclass
class VerificationReport:
    """Result of the oracle suite."""
    checks: List[VerificationIssue] = field(default_factory=list)

    def add(self, issue: VerificationIssue) -> None:
        self.checks.append(issue)

    @property
    def breaches(self) -> List[VerificationIssue]:
        return [c for c in self.checks if c.severity == VerificationSeverity.BREACH]

    @property
    def passed(self) -> bool:
        return not self.breaches

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            value = "" if c.value is None else f" value={c.value:.6g}"
            limit = "" if c.threshold is None else f" threshold={c.threshold:.6g}"
            lines.append(f"[{c.severity.value}] {c.code}: {c.message}{value}{limit}")
        lines.append("PASSED" if self.passed else f"FAILED ({len(self.breaches)} breach(es))")
        return "\n".join(lines) + "\n"
