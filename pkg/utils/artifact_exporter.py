"""
Plain-text export of processed artifacts, one item per line.
"""

import logging
from pathlib import Path
from typing import Dict, List

from evidence_schema import ALL_ROLES, CaseArtifacts, FirmwareArtifacts, NetworkArtifacts, ProcessArtifacts
from utils.file_utils import atomic_write_text

logger = logging.getLogger(__name__)


def _lines(items: List[str]) -> str:
    return ''.join(f"{item}\n" for item in items)


def firmware_files(artifacts: FirmwareArtifacts) -> Dict[str, str]:
    f_list = []
    for entry in artifacts.f_list:
        line = f"{entry.path}\t{entry.file_type.value}\t{entry.size_bytes}\t{entry.digest}"
        if entry.link_target is not None:
            line += f"\t-> {entry.link_target}"
        f_list.append(line)
    return {
        'fd_list.txt': _lines(list(artifacts.fd_list)),
        'f_list.txt': _lines(f_list),
        # same layout as sha256sum and friends, so the file can be re-checked with them
        'fh_list.txt': _lines([f"{digest}  .{path}" for path, digest in artifacts.fh_list.items()]),
        'f_strings.txt': _lines([
            f"{path}\t{string}" for path, strings in artifacts.f_strings.items() for string in strings
        ]),
    }


def capture_files(artifacts: NetworkArtifacts) -> Dict[str, str]:
    td_port = '' if artifacts.td_port is None else f"{artifacts.td_port}\n"
    return {
        'dp_list.txt': _lines([f"{item.port}\t{item.count}" for item in artifacts.dp_list]),
        'td_port.txt': td_port,
    }


def process_files(artifacts: ProcessArtifacts) -> Dict[str, str]:
    return {
        'p_list.txt': _lines([
            f"{entry.pid}\t{entry.command_name}\t{entry.raw_line}" for entry in artifacts.p_list
        ]),
    }


def export_artifacts(artifacts: CaseArtifacts, out_dir: Path) -> List[Path]:
    """Write every present role's artifacts under out_dir/<role>/ and return the written paths."""
    out_dir = Path(out_dir)
    written = []
    for role in ALL_ROLES:
        role_artifacts = artifacts.get(role)
        if role_artifacts is None:
            continue
        if isinstance(role_artifacts, FirmwareArtifacts):
            files = firmware_files(role_artifacts)
        elif isinstance(role_artifacts, NetworkArtifacts):
            files = capture_files(role_artifacts)
        else:
            files = process_files(role_artifacts)
        for name, content in files.items():
            written.append(atomic_write_text(out_dir / role.value / name, content))
        logger.debug(f"Exported {len(files)} artifact file(s) for {role.value}")

    logger.info(f"Exported {len(written)} artifact file(s) to {out_dir}")
    return written


def artifact_dir(out_dir: Path, case_id: str) -> Path:
    return Path(out_dir) / f"{case_id}.artifacts"
