"""
Lokaler Inhalts-Korpus: URI → Bytes. Dateiname = sha256(uri) hex.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Mapping, Optional, Protocol

logger = logging.getLogger(__name__)


class Resolver(Protocol):
    def resolve(self, uri: str) -> Optional[bytes]: ...


def corpus_filename(uri: str) -> str:
    return hashlib.sha256(uri.encode("utf-8")).hexdigest()


class CorpusResolver:
    """Liest Ressourcen aus einem Verzeichnis; merkt sich, was schon ausgeliefert wurde (Cache)."""

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)
        self._served: set[str] = set()

    def add(self, uri: str, content: bytes) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / corpus_filename(uri)
        path.write_bytes(content)
        return path

    def resolve(self, uri: str) -> Optional[bytes]:
        path = self.directory / corpus_filename(uri)
        if not path.exists():
            logger.info("[Corpus] %s nicht im Korpus", uri)
            return None
        return path.read_bytes()

    def is_cached(self, uri: str) -> bool:
        return uri in self._served

    def mark_served(self, uri: str) -> None:
        self._served.add(uri)


class MemoryResolver(CorpusResolver):
    def __init__(self, content: Mapping[str, bytes]) -> None:
        super().__init__(Path("."))
        self._content = dict(content)

    def add(self, uri: str, content: bytes) -> Path:
        self._content[uri] = content
        return Path(corpus_filename(uri))

    def resolve(self, uri: str) -> Optional[bytes]:
        return self._content.get(uri)
