"""mctailor Persistence Module - artifact storage."""

from .base import ArtifactRecord, ArtifactStore
from .filesystem import FileArtifactStore
from .memory import InMemoryArtifactStore

__all__ = [
    "ArtifactRecord",
    "ArtifactStore",
    "FileArtifactStore",
    "InMemoryArtifactStore",
    "get_artifact_store",
]


def get_artifact_store(backend: str, out_dir: str) -> ArtifactStore:
    """
    Store for the configured backend:
    - file: FileArtifactStore under out_dir (default)
    - memory: InMemoryArtifactStore
    """
    if backend == "memory":
        return InMemoryArtifactStore()
    return FileArtifactStore(out_dir)
