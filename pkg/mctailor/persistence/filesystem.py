"""
Filesystem Artifact Store

Artifacts as plain files under the run's output directory.
"""

from __future__ import annotations
from pathlib import Path
from typing import List

from .base import ArtifactStore
from ..schemas.errors import DataError


class FileArtifactStore(ArtifactStore):
    """
    File-backed store rooted at a directory.

    Names may contain '/' and map to subdirectories. Writes go through a
    temporary sibling and a rename so readers never see partial files.
    """

    def __init__(self, root: str):
        super().__init__()
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    def write_bytes(self, name: str, data: bytes) -> None:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(target)

    def read_bytes(self, name: str) -> bytes:
        try:
            return self.path(name).read_bytes()
        except OSError as e:
            raise DataError("E_ARTIFACT_READ", f"Cannot read artifact {name}: {e}") from e

    def exists(self, name: str) -> bool:
        return self.path(name).is_file()

    def list(self) -> List[str]:
        return sorted(
            p.relative_to(self.root).as_posix() for p in self.root.rglob("*") if p.is_file()
        )
