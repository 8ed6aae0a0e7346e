"""
In-Memory Artifact Store

Non-persistent storage for tests.
"""

from __future__ import annotations
from typing import Dict, List

from .base import ArtifactStore
from ..schemas.errors import DataError


class InMemoryArtifactStore(ArtifactStore):
    """
    Dict-backed store.

    WARNING: all artifacts are lost when the process exits.
    """

    def __init__(self) -> None:
        super().__init__()
        self._blobs: Dict[str, bytes] = {}

    def write_bytes(self, name: str, data: bytes) -> None:
        self._blobs[name] = bytes(data)

    def read_bytes(self, name: str) -> bytes:
        if name not in self._blobs:
            raise DataError("E_ARTIFACT_MISSING", f"Missing artifact {name}")
        return self._blobs[name]

    def exists(self, name: str) -> bool:
        return name in self._blobs

    def list(self) -> List[str]:
        return sorted(self._blobs)
