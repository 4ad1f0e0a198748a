"""
Firmware filesystem ingestion.

Walks an already-extracted firmware tree (a directory or a tar archive of
one) and derives the directory list, file list, per-file digests and
per-file printable strings. The source is never modified and symlinks are
never followed.
"""

import hashlib
import logging
import os
import posixpath
import re
import stat
import tarfile
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache, partial
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from pydantic import Field

from evidence_schema import (
    DEFAULT_HASH_ALGORITHM,
    DIGEST_ERROR,
    HASH_DIGEST_LENGTHS,
    EvidenceKind,
    FileEntry,
    FileType,
    FirmwareArtifacts,
    FrozenModel,
    IngestionError,
    ancestor_directories,
)
from ingest.base_ingestor import BaseIngestor

logger = logging.getLogger(__name__)


class StringsConfig(FrozenModel):
    """Printable-string extraction parameters (7-bit printable plus tab)."""

    min_length: int = Field(default=4, ge=1)
    max_strings_per_file: int = Field(default=100000, gt=0)


@dataclass(frozen=True)
class FirmwareSource:
    """An extracted firmware tree: a directory root or a tar archive of one."""

    DIRECTORY = 'directory'
    TAR = 'tar'

    container: str
    path: Path

    @classmethod
    def from_path(cls, path: Path) -> 'FirmwareSource':
        path = Path(path)
        if path.is_dir():
            return cls(cls.DIRECTORY, path)
        if path.is_file():
            try:
                if tarfile.is_tarfile(path):
                    return cls(cls.TAR, path)
            except OSError as e:
                raise IngestionError(f"cannot read firmware source: {e}", path)
            raise IngestionError("firmware source is neither a directory nor a tar archive", path)
        raise IngestionError("firmware source does not exist", path)


@dataclass(frozen=True)
class RawFile:
    """A file found in the tree, not yet read."""

    path: str
    file_type: FileType
    size_bytes: int
    link_target: Optional[str] = None
    loader: Optional[Callable[[], bytes]] = field(default=None, compare=False, repr=False)

    @property
    def name(self) -> str:
        return posixpath.basename(self.path)

    def content(self) -> bytes:
        """Bytes that are hashed and scanned; symlinks use their target string."""
        if self.file_type is FileType.SYMLINK:
            return (self.link_target or '').encode('utf-8', 'surrogateescape')
        if self.file_type.is_special or self.loader is None:
            return b''
        return self.loader()


@dataclass
class TreeListing:
    fd_list: List[str]
    files: List[RawFile]
    skipped: int = 0
    archive: Optional[tarfile.TarFile] = field(default=None, repr=False)

    def close(self) -> None:
        if self.archive is not None:
            self.archive.close()
            self.archive = None

    def __enter__(self) -> 'TreeListing':
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


@dataclass(frozen=True)
class FileScan:
    path: str
    size_bytes: int
    digest: str
    strings: Tuple[str, ...]
    capped: bool = False
    failed: bool = False


def _read_host_file(path: str) -> bytes:
    with open(path, 'rb') as handle:
        return handle.read()


def display_name(name: str) -> str:
    """Host names with undecodable bytes keep them as backslash escapes (b'caf\\xe9' -> 'caf\\\\xe9')."""
    return os.fsencode(name).decode('utf-8', 'backslashreplace')


class _TarMemberReader:
    """Reads member data from one open archive on demand, one member at a time."""

    def __init__(self, tar: tarfile.TarFile):
        self.tar = tar
        self._lock = threading.Lock()

    def read(self, member: tarfile.TarInfo) -> bytes:
        with self._lock:
            try:
                handle = self.tar.extractfile(member)
                if handle is None:
                    raise OSError(f"no data for tar member {member.name}")
                return handle.read()
            except (tarfile.TarError, EOFError, KeyError, zlib.error) as e:
                raise OSError(f"unreadable tar member {member.name}: {e}") from e


def _special_type(mode: int) -> FileType:
    if stat.S_ISCHR(mode) or stat.S_ISBLK(mode):
        return FileType.DEVICE
    if stat.S_ISFIFO(mode):
        return FileType.FIFO
    return FileType.SOCKET


def _with_ancestors(directories: Iterable[str], files: Iterable[RawFile]) -> List[str]:
    result = set(directories) | {'/'}
    for raw in files:
        result.update(ancestor_directories(raw.path))
    return sorted(result)


def _walk_directory(root: Path) -> TreeListing:
    if not root.is_dir():
        raise IngestionError("firmware root is not a directory", root)

    directories = ['/']
    files: List[RawFile] = []
    skipped = 0
    pending = [(str(root), '/')]

    while pending:
        host_dir, device_dir = pending.pop()
        try:
            with os.scandir(host_dir) as iterator:
                entries = list(iterator)
        except OSError as e:
            if device_dir == '/':
                raise IngestionError(f"cannot read firmware root: {e.strerror or e}", root)
            logger.warning(f"Skipping unreadable directory {device_dir}: {e}")
            skipped += 1
            continue

        for entry in entries:
            device_path = posixpath.join(device_dir, display_name(entry.name))
            try:
                if entry.is_symlink():
                    target = os.readlink(entry.path)
                    files.append(RawFile(
                        device_path, FileType.SYMLINK,
                        len(target.encode('utf-8', 'surrogateescape')),
                        link_target=target,
                    ))
                elif entry.is_dir(follow_symlinks=False):
                    directories.append(device_path)
                    pending.append((entry.path, device_path))
                elif entry.is_file(follow_symlinks=False):
                    size = entry.stat(follow_symlinks=False).st_size
                    files.append(RawFile(
                        device_path, FileType.REGULAR, size,
                        loader=partial(_read_host_file, entry.path),
                    ))
                else:
                    mode = entry.stat(follow_symlinks=False).st_mode
                    files.append(RawFile(device_path, _special_type(mode), 0))
            except OSError as e:
                logger.warning(f"Skipping unreadable entry {device_path}: {e}")
                skipped += 1

    return TreeListing(_with_ancestors(directories, files), files, skipped)


def _tar_device_path(name: str) -> Optional[str]:
    """Map a member name to a device path; None for the archive root or escaping names."""
    relative = posixpath.normpath(display_name(name).lstrip('/'))
    if relative.startswith('./'):
        relative = relative[2:]
    if relative in ('.', ''):
        return None
    if relative == '..' or relative.startswith('../'):
        return None
    return '/' + relative


def _walk_tar(archive: Path) -> TreeListing:
    try:
        tar = tarfile.open(archive, 'r:*')
    except (tarfile.TarError, OSError) as e:
        raise IngestionError(f"cannot open tar archive: {e}", archive)

    directories = {'/'}
    files: Dict[str, RawFile] = {}
    skipped = 0
    reader = _TarMemberReader(tar)

    try:
        members = tar.getmembers()
    except (tarfile.TarError, OSError) as e:
        tar.close()
        raise IngestionError(f"corrupt tar archive: {e}", archive)

    for member in members:
        device_path = _tar_device_path(member.name)
        if device_path is None:
            if posixpath.normpath(member.name.lstrip('/')) not in ('.', ''):
                logger.warning(f"Skipping tar member outside the tree: {display_name(member.name)}")
                skipped += 1
            continue

        if member.isdir():
            directories.add(device_path)
        elif member.issym():
            target = member.linkname
            files[device_path] = RawFile(
                device_path, FileType.SYMLINK,
                len(target.encode('utf-8', 'surrogateescape')),
                link_target=target,
            )
        elif member.isfile() or member.islnk():
            # data stays in the archive until the file is scanned
            files[device_path] = RawFile(
                device_path, FileType.REGULAR, member.size, loader=partial(reader.read, member)
            )
        elif member.ischr() or member.isblk():
            files[device_path] = RawFile(device_path, FileType.DEVICE, 0)
        elif member.isfifo():
            files[device_path] = RawFile(device_path, FileType.FIFO, 0)
        else:
            logger.warning(f"Skipping tar member of unsupported type: {device_path}")
            skipped += 1

    listed = list(files.values())
    return TreeListing(_with_ancestors(directories, listed), listed, skipped, archive=tar)


def enumerate_tree(source: FirmwareSource) -> TreeListing:
    """List every directory and file of the tree, sorted by path."""
    if source.container == FirmwareSource.TAR:
        listing = _walk_tar(source.path)
    else:
        listing = _walk_directory(source.path)
    listing.files.sort(key=lambda raw: raw.path)
    unique: List[RawFile] = []
    for raw in listing.files:
        if unique and unique[-1].path == raw.path:
            logger.warning(f"Skipping {raw.path}: name collides with another entry once escaped")
            listing.skipped += 1
            continue
        unique.append(raw)
    listing.files = unique
    logger.debug(
        f"Enumerated {len(listing.files)} files in {len(listing.fd_list)} directories "
        f"from {source.container} {source.path}"
    )
    return listing


def digest_bytes(data: bytes, algorithm: str = DEFAULT_HASH_ALGORITHM) -> str:
    if algorithm not in HASH_DIGEST_LENGTHS:
        raise ValueError(f"unsupported hash algorithm '{algorithm}'")
    return hashlib.new(algorithm, data, usedforsecurity=False).hexdigest()


@lru_cache(maxsize=16)
def _strings_pattern(min_length: int) -> 're.Pattern[bytes]':
    return re.compile(rb'[\t\x20-\x7e]{%d,}' % min_length)


def scan_strings(data: bytes, cfg: StringsConfig) -> Tuple[Tuple[str, ...], bool]:
    """Maximal printable runs in file order; the flag reports whether the cap was hit."""
    found = []
    for match in _strings_pattern(cfg.min_length).finditer(data):
        if len(found) == cfg.max_strings_per_file:
            return tuple(found), True
        found.append(match.group().decode('ascii'))
    return tuple(found), False


def _scan_file(raw: RawFile, algorithm: str, cfg: StringsConfig) -> FileScan:
    try:
        data = raw.content()
    except OSError as e:
        logger.warning(f"Cannot read {raw.path}: {e}")
        return FileScan(raw.path, raw.size_bytes, DIGEST_ERROR, (), failed=True)

    strings, capped = scan_strings(data, cfg)
    if capped:
        logger.warning(f"{raw.path}: string cap of {cfg.max_strings_per_file} reached")
    return FileScan(raw.path, len(data), digest_bytes(data, algorithm), strings, capped=capped)


def _scan_all(
    files: List[RawFile], algorithm: str, cfg: StringsConfig, workers: int
) -> List[FileScan]:
    scan = partial(_scan_file, algorithm=algorithm, cfg=cfg)
    if workers <= 1:
        return [scan(raw) for raw in files]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(scan, files))


def hash_files(
    files: List[RawFile], algorithm: str = DEFAULT_HASH_ALGORITHM, workers: int = 1
) -> Dict[str, str]:
    """Digest of every file; unreadable files map to the error sentinel."""
    scans = _scan_all(files, algorithm, StringsConfig(), workers)
    return {scan.path: scan.digest for scan in sorted(scans, key=lambda s: s.path)}


def extract_strings(
    files: List[RawFile], cfg: Optional[StringsConfig] = None, workers: int = 1
) -> Dict[str, Tuple[str, ...]]:
    """Printable strings of every file; unreadable files yield no strings."""
    scans = _scan_all(files, DEFAULT_HASH_ALGORITHM, cfg or StringsConfig(), workers)
    return {scan.path: scan.strings for scan in sorted(scans, key=lambda s: s.path)}


def process_firmware(
    source: FirmwareSource,
    cfg: Optional[StringsConfig] = None,
    algorithm: str = DEFAULT_HASH_ALGORITHM,
    workers: int = 1,
) -> FirmwareArtifacts:
    """Enumerate, hash and scan a firmware tree in one read of each file."""
    cfg = cfg or StringsConfig()
    with enumerate_tree(source) as listing:
        scans = {scan.path: scan for scan in _scan_all(listing.files, algorithm, cfg, workers)}

    entries = []
    for raw in listing.files:
        scan = scans[raw.path]
        entries.append(FileEntry(
            path=raw.path,
            name=raw.name,
            size_bytes=scan.size_bytes,
            digest=scan.digest,
            file_type=raw.file_type,
            link_target=None if raw.link_target is None else display_name(raw.link_target),
        ))

    failures = sum(1 for scan in scans.values() if scan.failed)
    artifacts = FirmwareArtifacts(
        hash_algorithm=algorithm,
        fd_list=tuple(listing.fd_list),
        f_list=tuple(entries),
        fh_list={path: scan.digest for path, scan in scans.items() if not scan.failed},
        f_strings={path: scan.strings for path, scan in scans.items()},
        skipped_entries=listing.skipped + failures,
        capped_files=tuple(path for path, scan in scans.items() if scan.capped),
    )
    logger.info(
        f"Firmware {source.path}: {len(artifacts.f_list)} files, {len(artifacts.fd_list)} directories, "
        f"{artifacts.skipped_entries} skipped"
    )
    return artifacts


class FirmwareIngestor(BaseIngestor):
    """Ingests firmware image evidence."""

    kind = EvidenceKind.FIRMWARE_IMAGE

    def __init__(
        self,
        hash_algorithm: str = DEFAULT_HASH_ALGORITHM,
        strings_config: Optional[StringsConfig] = None,
        workers: int = 1,
    ):
        if hash_algorithm not in HASH_DIGEST_LENGTHS:
            raise ValueError(f"unsupported hash algorithm '{hash_algorithm}'")
        self.hash_algorithm = hash_algorithm
        self.strings_config = strings_config or StringsConfig()
        self.workers = workers

    def ingest(self, path: Path) -> FirmwareArtifacts:
        return process_firmware(
            FirmwareSource.from_path(path),
            self.strings_config,
            self.hash_algorithm,
            self.workers,
        )
