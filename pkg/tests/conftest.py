"""
Shared fixtures: isolated settings, small firmware trees, pcap bytes and a generated scenario.
"""

import os
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import pytest

from evidence_schema import FileEntry, FirmwareArtifacts, ancestor_directories
from ingest.firmware_ingestor import digest_bytes
from scenario_generator import ScenarioSpec, generate
from utils.pcap_writer import PcapWriter


def pytest_addoption(parser):
    parser.addoption(
        '--update-golden', action='store_true', default=False,
        help='rewrite tests/golden report snapshots from the current output',
    )


STITCHER_ENV = (
    'STITCHER_LOG_LEVEL',
    'STITCHER_HASH',
    'STITCHER_STRINGS_MIN_LEN',
    'STITCHER_MAX_STRINGS',
    'STITCHER_WORKERS',
    'STITCHER_NO_COLOR',
)


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch):
    """No STITCHER_* settings leak in from the host, and no log files are written."""
    for name in STITCHER_ENV:
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv('STITCHER_LOG_DIR', '')


def write_tree(root: Path, files: Dict[str, bytes], symlinks: Optional[Dict[str, str]] = None) -> Path:
    """Create a firmware tree from device paths."""
    root.mkdir(parents=True, exist_ok=True)
    for device_path, content in files.items():
        target = root / device_path.lstrip('/')
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(content)
    for device_path, link_target in (symlinks or {}).items():
        link = root / device_path.lstrip('/')
        link.parent.mkdir(parents=True, exist_ok=True)
        os.symlink(link_target, link)
    return root


def capture_bytes(frames: Sequence[bytes], byte_order: str = 'little', nanosecond: bool = False) -> bytes:
    writer = PcapWriter(byte_order=byte_order, nanosecond=nanosecond)
    for index, frame in enumerate(frames):
        writer.add(frame, ts_seconds=1614556800 + index, ts_fraction=index)
    return writer.to_bytes()


def firmware_artifacts(
    files: Dict[str, Tuple[bytes, Tuple[str, ...]]], algorithm: str = 'sha256'
) -> FirmwareArtifacts:
    """Build coherent FirmwareArtifacts from path -> (content, strings) without touching disk."""
    entries = []
    directories = {'/'}
    for path, (content, _) in files.items():
        entries.append(FileEntry(
            path=path,
            name=path.rsplit('/', 1)[-1],
            size_bytes=len(content),
            digest=digest_bytes(content, algorithm),
        ))
        directories.update(ancestor_directories(path))
    return FirmwareArtifacts(
        hash_algorithm=algorithm,
        fd_list=tuple(directories),
        f_list=tuple(entries),
        fh_list={entry.path: entry.digest for entry in entries},
        f_strings={path: strings for path, (_, strings) in files.items()},
    )


@pytest.fixture(scope='session')
def scenario_dir(tmp_path_factory) -> Path:
    """Default scenario written once per test session."""
    out = tmp_path_factory.mktemp('scenario')
    generate(ScenarioSpec(), out)
    return out
