"""
ArtifactStore Base Interface

Abstract interface for pipeline artifacts (models, vocab, estimator stacks,
samples and JSON records). Backends only move bytes; encoding lives here and
in the codec module.
"""

from __future__ import annotations
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence
import hashlib
import json
import logging

from ..core.lm import NGramModel
from ..core.ratio import EstimatorStack, LayerReport, StackLayer, StackReport, TrainingReport
from ..schemas.corpus import Sentence, Vocab, EOS_TOKEN, UNK_TOKEN
from ..schemas.errors import DataError
from . import codec


logger = logging.getLogger(__name__)

STACK_MANIFEST = "stack.json"


class ArtifactRecord:
    """
    Serializable description of one stored artifact.

    The digest makes byte-identity across reruns checkable.
    """
    def __init__(
        self,
        name: str,
        kind: str,
        sha256: str,
        size: int,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.name = name
        self.kind = kind
        self.sha256 = sha256
        self.size = size
        self.metadata = metadata or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "sha256": self.sha256,
            "size": self.size,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArtifactRecord":
        return cls(
            name=data["name"],
            kind=data["kind"],
            sha256=data["sha256"],
            size=data["size"],
            metadata=data.get("metadata", {}),
        )


def _report_from_dict(data: Optional[Dict[str, Any]]) -> Optional[TrainingReport]:
    if data is None:
        return None
    return TrainingReport(
        epochs=int(data["epochs"]),
        best_holdout_loss=float(data["best_holdout_loss"]),
        holdout_accuracy=float(data["holdout_accuracy"]),
        n_real=int(data["n_real"]),
        n_negative=int(data["n_negative"]),
    )


class ArtifactStore(ABC):
    """
    Abstract artifact storage.

    Implementations:
    - FileArtifactStore: files under an output directory (default)
    - InMemoryArtifactStore: for tests
    """

    def __init__(self) -> None:
        self.records: Dict[str, ArtifactRecord] = {}

    @abstractmethod
    def write_bytes(self, name: str, data: bytes) -> None:
        """Create or replace an artifact."""

    @abstractmethod
    def read_bytes(self, name: str) -> bytes:
        """Read an artifact; raises DataError when missing."""

    @abstractmethod
    def exists(self, name: str) -> bool:
        pass

    @abstractmethod
    def list(self) -> List[str]:
        """Artifact names, sorted."""

    # =========================================================================
    # Typed helpers
    # =========================================================================

    def put(self, name: str, data: bytes, kind: str, **metadata: Any) -> ArtifactRecord:
        self.write_bytes(name, data)
        record = ArtifactRecord(name, kind, hashlib.sha256(data).hexdigest(), len(data), metadata)
        self.records[name] = record
        logger.debug(f"Stored {kind} artifact {name} ({len(data)} bytes)")
        return record

    def require(self, name: str, hint: str = "") -> bytes:
        if not self.exists(name):
            extra = f"; {hint}" if hint else ""
            raise DataError("E_ARTIFACT_MISSING", f"Missing artifact {name}{extra}")
        return self.read_bytes(name)

    def save_model(self, name: str, model: NGramModel) -> ArtifactRecord:
        return self.put(name, codec.encode_model(model), "model", order=model.order)

    def load_model(self, name: str, hint: str = "") -> NGramModel:
        return codec.decode_model(self.require(name, hint))

    def save_vocab(self, name: str, vocab: Vocab) -> ArtifactRecord:
        data = "".join(tok + "\n" for tok in vocab.tokens).encode("utf-8")
        return self.put(name, data, "vocab", size=len(vocab))

    def load_vocab(self, name: str, hint: str = "") -> Vocab:
        tokens = [t for t in self.require(name, hint).decode("utf-8").split("\n") if t]
        if tokens[:2] != [UNK_TOKEN, EOS_TOKEN]:
            raise DataError("E_VOCAB_RESERVED", f"Vocab artifact {name} lacks <unk>/<eos>")
        return Vocab(tokens=tuple(tokens))

    def save_text(self, name: str, text: str, kind: str = "text") -> ArtifactRecord:
        return self.put(name, text.encode("utf-8"), kind)

    def load_text(self, name: str, hint: str = "") -> str:
        return self.require(name, hint).decode("utf-8")

    def save_json(self, name: str, payload: Any, kind: str = "record") -> ArtifactRecord:
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        return self.save_text(name, text, kind)

    def load_json(self, name: str, hint: str = "") -> Any:
        return json.loads(self.load_text(name, hint))

    def save_samples(
        self,
        name: str,
        sentences: Sequence[Sentence],
        vocab: Vocab,
    ) -> ArtifactRecord:
        data = codec.encode_samples(sentences, vocab).encode("utf-8")
        return self.put(name, data, "samples", count=len(sentences))

    def load_samples(self, name: str, vocab: Vocab, max_len: int) -> List[Sentence]:
        return codec.decode_samples(self.load_text(name), vocab, max_len)

    def save_stack(self, prefix: str, stack: EstimatorStack) -> ArtifactRecord:
        """One estimator file per layer and kind, plus a JSON manifest."""
        layers = []
        for k, layer in enumerate(stack.layers):
            entry: Dict[str, Any] = {"ratio": f"{prefix}/layer{k}.ratio.mcre", "dual": None}
            self.put(entry["ratio"], codec.encode_estimator(layer.estimator), "estimator")
            if layer.dual is not None:
                entry["dual"] = f"{prefix}/layer{k}.dual.mcre"
                self.put(entry["dual"], codec.encode_estimator(layer.dual), "estimator")
            layers.append(entry)
        manifest = {
            "gamma_max": stack.gamma_max,
            "layers": layers,
            "report": [lr.to_dict() for lr in stack.report.layers],
        }
        return self.save_json(f"{prefix}/{STACK_MANIFEST}", manifest, "stack")

    def load_stack(self, prefix: str, hint: str = "") -> EstimatorStack:
        manifest = self.load_json(f"{prefix}/{STACK_MANIFEST}", hint)
        layers = []
        for entry in manifest["layers"]:
            ratio = codec.decode_estimator(self.require(entry["ratio"]))
            dual = codec.decode_estimator(self.require(entry["dual"])) if entry["dual"] else None
            layers.append(StackLayer(ratio, dual))
        report = StackReport([
            LayerReport(
                layer=int(r["layer"]),
                ratio=_report_from_dict(r.get("ratio")),
                dual=_report_from_dict(r.get("dual")),
                negative_acceptance_rate=float(r["negative_acceptance_rate"]),
            )
            for r in manifest.get("report", [])
        ])
        return EstimatorStack(layers, float(manifest["gamma_max"]), report)
