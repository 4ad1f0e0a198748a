"""
Parser for ps-style process listings.

Handles busybox output (``PID USER TIME COMMAND``, ``PID USER VSZ STAT
COMMAND``) and full-format output (``ps -ef``, ``ps aux``) by locating the
PID and command columns in the header. Headerless listings fall back to
"first field is the PID, last field is the command".
"""

import logging
import posixpath
from pathlib import Path
from typing import List, Optional, Tuple

from evidence_schema import (
    EvidenceKind,
    ProcessArtifacts,
    ProcessEntry,
    ProcessListingError,
    ProcessRejection,
)
from ingest.base_ingestor import BaseIngestor

logger = logging.getLogger(__name__)

COMMAND_COLUMNS = ('COMMAND', 'CMD', 'ARGS', 'COMM')


class _Columns:
    """Where the PID and command live in each data line."""

    def __init__(self, pid_index: int, command_index: Optional[int], command_is_last: bool):
        self.pid_index = pid_index
        self.command_index = command_index
        self.command_is_last = command_is_last

    @classmethod
    def from_header(cls, header: str) -> '_Columns':
        tokens = [token.upper() for token in header.split()]
        pid_index = tokens.index('PID')
        command_index = next((i for i, token in enumerate(tokens) if token in COMMAND_COLUMNS), None)
        if command_index is None:
            return cls(pid_index, None, True)
        return cls(pid_index, command_index, command_index == len(tokens) - 1)

    def split(self, line: str) -> Tuple[Optional[str], Optional[str]]:
        """Return (pid token, command field) or None for whichever is missing."""
        if self.command_index is None:
            # headerless (or header without a command column): last field is the command
            fields = line.split()
            pid = fields[self.pid_index] if len(fields) > self.pid_index else None
            command = fields[-1] if len(fields) > self.pid_index + 1 else None
            return pid, command

        if self.command_is_last:
            fields = line.split(None, self.command_index)
        else:
            fields = line.split()
        pid = fields[self.pid_index] if len(fields) > self.pid_index else None
        command = fields[self.command_index] if len(fields) > self.command_index else None
        return pid, command


def _command_name(command_field: str) -> Tuple[str, bool]:
    """Name used for correlation, and whether the process is a kernel thread."""
    token = command_field.split()[0]
    if token.startswith('[') and token.endswith(']') and len(token) > 2:
        return token[1:-1], True
    # busybox shows {name} when argv[0] differs from the executable name
    if token.startswith('{') and token.endswith('}') and len(token) > 2:
        return token[1:-1], False
    return posixpath.basename(token), False


def parse_ps(text: str) -> ProcessArtifacts:
    """Parse a process listing into p_list, keeping every unparsable line as a reject."""
    if not text.strip():
        raise ProcessListingError("empty process listing")

    lines = text.splitlines()
    header = None
    columns = _Columns(0, None, True)
    first_tokens = lines[0].upper().split()
    if 'PID' in first_tokens:
        header = lines[0]
        columns = _Columns.from_header(header)

    entries: List[ProcessEntry] = []
    rejects: List[ProcessRejection] = []
    seen_pids = set()

    for number, line in enumerate(lines, start=1):
        if number == 1 and header is not None:
            continue

        def reject(reason: str) -> None:
            rejects.append(ProcessRejection(line_number=number, raw_line=line, reason=reason))

        if not line.strip():
            reject("blank line")
            continue

        pid_token, command_field = columns.split(line)
        if pid_token is None or not (pid_token.isascii() and pid_token.isdigit()) or int(pid_token) == 0:
            reject(f"unparsable pid {pid_token!r}")
            continue
        if not command_field or not command_field.strip():
            reject("missing command")
            continue

        pid = int(pid_token)
        if pid in seen_pids:
            reject("duplicate pid")
            continue

        name, kernel_thread = _command_name(command_field)
        if not name:
            reject(f"empty command name in {command_field!r}")
            continue

        seen_pids.add(pid)
        entries.append(ProcessEntry(pid=pid, command_name=name, raw_line=line, kernel_thread=kernel_thread))

    artifacts = ProcessArtifacts(
        p_list=tuple(entries),
        rejects=tuple(rejects),
        header=header,
        line_count=len(lines),
    )
    if rejects:
        logger.warning(f"{len(rejects)} process listing line(s) rejected")
    return artifacts


class ProcessIngestor(BaseIngestor):
    """Ingests system process evidence."""

    kind = EvidenceKind.SYSTEM_PROCESSES

    def ingest(self, path: Path) -> ProcessArtifacts:
        text = self.read_bytes(path).decode('utf-8', errors='replace')
        try:
            artifacts = parse_ps(text)
        except ProcessListingError as e:
            raise ProcessListingError(str(e), Path(path))
        logger.info(f"Processes {path}: {len(artifacts.p_list)} processes, {len(artifacts.rejects)} rejected")
        return artifacts
