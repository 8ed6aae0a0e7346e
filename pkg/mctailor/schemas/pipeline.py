"""
mctailor Pipeline Schemas

Stage names, per-stage results and the run log.
"""

from __future__ import annotations
from typing import Any, Dict, List, Optional
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum


class Stage(str, Enum):
    """Pipeline stages in canonical order."""
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"
    BUILD_TAILOR = "build-tailor"
    SAMPLE = "sample"
    EVALUATE = "evaluate"
    VERIFY = "verify"


# Upstream artifacts each stage reads.
STAGE_DEPENDENCIES: Dict[Stage, List[Stage]] = {
    Stage.PRETRAIN: [],
    Stage.FINETUNE: [Stage.PRETRAIN],
    Stage.BUILD_TAILOR: [Stage.FINETUNE],
    Stage.SAMPLE: [Stage.BUILD_TAILOR],
    Stage.EVALUATE: [Stage.BUILD_TAILOR],
    Stage.VERIFY: [Stage.BUILD_TAILOR],
}


class StageStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    SKIPPED = "skipped"


@dataclass
class StageOutput:
    """What a stage hands back: stdout text and a JSON-able payload."""
    text: str
    payload: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)


@dataclass
class StageResult:
    """Result of a single stage execution."""
    stage: Stage
    status: StageStatus
    started_at: datetime
    completed_at: Optional[datetime] = None
    duration_ms: Optional[int] = None
    artifacts: List[str] = field(default_factory=list)
    error: Optional[Dict[str, Any]] = None

    @property
    def success(self) -> bool:
        return self.status == StageStatus.COMPLETED

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage.value,
            "status": self.status.value,
            "started_at": self.started_at.isoformat(),
            "completed_at": self.completed_at.isoformat() if self.completed_at else None,
            "duration_ms": self.duration_ms,
            "artifacts": self.artifacts,
            "error": self.error,
        }


@dataclass
class RunLog:
    """Complete log for one pipeline invocation."""
    run_id: str
    fingerprint: str
    started_at: datetime
    completed_at: Optional[datetime] = None
    status: StageStatus = StageStatus.PENDING
    stages: List[StageResult] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "fingerprint": self.fingerprint,
            "started_at": self.started_at.isoformat(),
            "completed_at": self.completed_at.isoformat() if self.completed_at else None,
            "status": self.status.value,
            "stages": [s.to_dict() for s in self.stages],
        }
