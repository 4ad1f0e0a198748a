"""
Base ingestor class with common functionality for all evidence sources.
"""

import asyncio
import logging
from abc import ABC, abstractmethod
from concurrent.futures import Executor
from pathlib import Path
from typing import Optional

from evidence_schema import EvidenceKind, IngestionError

logger = logging.getLogger(__name__)


class BaseIngestor(ABC):
    """Base class for all evidence ingestors."""

    kind: EvidenceKind

    def read_bytes(self, path: Path) -> bytes:
        """Read a whole evidence file, turning OS errors into fatal ingestion errors."""
        try:
            return Path(path).read_bytes()
        except OSError as e:
            logger.error(f"Cannot read {self.kind.label} evidence {path}: {e}")
            raise IngestionError(f"cannot read evidence file: {e.strerror or e}", path)

    @abstractmethod
    def ingest(self, path: Path):
        """Turn the evidence at ``path`` into its artifact model."""

    async def ingest_async(self, path: Path, executor: Optional[Executor] = None):
        """Run ``ingest`` off the event loop so independent sources proceed concurrently."""
        loop = asyncio.get_running_loop()
        logger.debug(f"Scheduling {self.kind.label} ingestion of {path}")
        return await loop.run_in_executor(executor, self.ingest, path)
