"""
Evidence schema shared by every stage of the pipeline.

Holds the artifact models derived from each evidence source, the ISO
classification table, the case bundle container and the error hierarchy.
All models are immutable and canonically sorted at construction so that
serialized output is byte-deterministic.
"""

import logging
import posixpath
import re
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

DIGEST_ERROR = "<error>"
DEFAULT_HASH_ALGORITHM = "sha256"
HASH_DIGEST_LENGTHS = {
    'sha256': 64,
    'sha1': 40,
    'md5': 32,
}

_HEX_DIGEST = re.compile(r'^[0-9a-f]+$')
_ISO27050_CODE = re.compile(r'^7\.\d\.\d$')
_ISO30141_CODE = re.compile(r'^8\.2\.3\.\d$')


class StitcherError(Exception):
    """Base class for all pipeline errors."""


class ManifestError(StitcherError):
    """Case manifest or command-line input cannot be used."""


class IngestionError(StitcherError):
    """Evidence source could not be parsed."""

    def __init__(self, message: str, path: Optional[Path] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class PcapFormatError(IngestionError):
    """Capture file is not a classic libpcap file."""


class PcapNgUnsupportedError(PcapFormatError):
    """Capture file is pcapng, which is detected but not decoded."""


class ProcessListingError(IngestionError):
    """Process listing cannot be parsed at all."""


class CorrelationError(StitcherError):
    """Artifacts cannot be correlated with each other."""


class HashAlgorithmMismatchError(CorrelationError):
    """Scenario and baseline firmware were hashed with different algorithms."""

    def __init__(self, scenario_algorithm: str, baseline_algorithm: str):
        self.scenario_algorithm = scenario_algorithm
        self.baseline_algorithm = baseline_algorithm
        super().__init__(
            f"hash algorithm mismatch: scenario firmware uses {scenario_algorithm}, "
            f"baseline firmware uses {baseline_algorithm}"
        )


class ReportConfigurationError(StitcherError):
    """Requested report configuration does not exist."""


class FrozenModel(BaseModel):
    """Immutable model base; unknown fields are rejected."""

    model_config = ConfigDict(frozen=True, extra='forbid')


class EvidenceKind(str, Enum):
    FIRMWARE_IMAGE = 'firmware_image'
    NETWORK_CAPTURE = 'network_capture'
    SYSTEM_PROCESSES = 'system_processes'

    @property
    def label(self) -> str:
        return self.value.replace('_', ' ')


class EvidenceRole(str, Enum):
    """Slot an evidence source occupies in a case bundle."""

    FIRMWARE = 'firmware'
    CAPTURE = 'capture'
    PROCESSES = 'processes'
    BASELINE_FIRMWARE = 'baseline_firmware'
    BASELINE_CAPTURE = 'baseline_capture'
    BASELINE_PROCESSES = 'baseline_processes'

    @property
    def is_baseline(self) -> bool:
        return self.value.startswith('baseline_')

    @property
    def counterpart(self) -> 'EvidenceRole':
        """Scenario role a baseline role is compared against (identity for scenario roles)."""
        if self.is_baseline:
            return EvidenceRole(self.value[len('baseline_'):])
        return self

    @property
    def kind(self) -> EvidenceKind:
        return ROLE_KINDS[self.counterpart]


ROLE_KINDS = {
    EvidenceRole.FIRMWARE: EvidenceKind.FIRMWARE_IMAGE,
    EvidenceRole.CAPTURE: EvidenceKind.NETWORK_CAPTURE,
    EvidenceRole.PROCESSES: EvidenceKind.SYSTEM_PROCESSES,
}

SCENARIO_ROLES = (EvidenceRole.FIRMWARE, EvidenceRole.CAPTURE, EvidenceRole.PROCESSES)
BASELINE_ROLES = (
    EvidenceRole.BASELINE_FIRMWARE,
    EvidenceRole.BASELINE_CAPTURE,
    EvidenceRole.BASELINE_PROCESSES,
)
ALL_ROLES = SCENARIO_ROLES + BASELINE_ROLES


class IsoCode(FrozenModel):
    code: str
    title: str


class ClassificationLabel(FrozenModel):
    """ISO 27050-1 and ISO 30141 codes assigned to one evidence source."""

    iso27050_codes: Tuple[IsoCode, ...] = Field(min_length=1)
    iso30141_code: IsoCode

    @field_validator('iso27050_codes')
    @classmethod
    def _check_iso27050(cls, codes: Tuple[IsoCode, ...]) -> Tuple[IsoCode, ...]:
        for iso in codes:
            if not _ISO27050_CODE.match(iso.code):
                raise ValueError(f"ISO 27050-1 code '{iso.code}' does not match 7.<d>.<d>")
        return codes

    @field_validator('iso30141_code')
    @classmethod
    def _check_iso30141(cls, iso: IsoCode) -> IsoCode:
        if not _ISO30141_CODE.match(iso.code):
            raise ValueError(f"ISO 30141 code '{iso.code}' does not match 8.2.3.<d>")
        return iso

    def codes(self) -> List[str]:
        return [iso.code for iso in self.iso27050_codes] + [self.iso30141_code.code]


_ACTIVE_DATA = IsoCode(code='7.2.2', title='Active data')
_INACTIVE_DATA = IsoCode(code='7.2.3', title='Inactive data')
_CUSTODIAN_SOURCE = IsoCode(code='7.3.2', title='Custodian data source')
_NON_CUSTODIAN_SOURCE = IsoCode(code='7.3.3', title='Non-custodian data source')
_NATIVE_FORMAT = IsoCode(code='7.4.2', title='Native format')

CLASSIFICATION_TABLE: Dict[EvidenceKind, ClassificationLabel] = {
    EvidenceKind.FIRMWARE_IMAGE: ClassificationLabel(
        iso27050_codes=(_ACTIVE_DATA, _CUSTODIAN_SOURCE, _NATIVE_FORMAT),
        iso30141_code=IsoCode(code='8.2.3.9', title='Data store'),
    ),
    EvidenceKind.NETWORK_CAPTURE: ClassificationLabel(
        iso27050_codes=(_INACTIVE_DATA, _NON_CUSTODIAN_SOURCE, _NATIVE_FORMAT),
        iso30141_code=IsoCode(code='8.2.3.8', title='Network'),
    ),
    EvidenceKind.SYSTEM_PROCESSES: ClassificationLabel(
        iso27050_codes=(_ACTIVE_DATA, _CUSTODIAN_SOURCE, _NATIVE_FORMAT),
        iso30141_code=IsoCode(code='8.2.3.5', title='Service'),
    ),
}


def classify_evidence(kind: EvidenceKind) -> ClassificationLabel:
    """Return the fixed ISO classification row for an evidence kind."""
    return CLASSIFICATION_TABLE[EvidenceKind(kind)]


def ancestor_directories(path: str) -> List[str]:
    """All ancestor directories of a device path, root first."""
    ancestors = []
    parent = posixpath.dirname(path)
    while True:
        ancestors.append(parent)
        if parent == '/':
            break
        parent = posixpath.dirname(parent)
    return list(reversed(ancestors))


class FileType(str, Enum):
    REGULAR = 'regular'
    SYMLINK = 'symlink'
    DEVICE = 'device'
    FIFO = 'fifo'
    SOCKET = 'socket'

    @property
    def is_special(self) -> bool:
        return self in (FileType.DEVICE, FileType.FIFO, FileType.SOCKET)


class FileEntry(FrozenModel):
    """One file of a firmware tree, addressed by its device-rooted path."""

    path: str
    name: str
    size_bytes: int = Field(ge=0)
    digest: str
    file_type: FileType = FileType.REGULAR
    link_target: Optional[str] = None

    @field_validator('path')
    @classmethod
    def _check_path(cls, path: str) -> str:
        if not path.startswith('/') or path == '/':
            raise ValueError(f"file path '{path}' must be absolute below the firmware root")
        if posixpath.normpath(path) != path:
            raise ValueError(f"file path '{path}' is not normalized")
        return path

    @field_validator('digest')
    @classmethod
    def _check_digest(cls, digest: str) -> str:
        if digest != DIGEST_ERROR and not _HEX_DIGEST.match(digest):
            raise ValueError(f"digest '{digest}' is not lowercase hex")
        return digest

    @model_validator(mode='after')
    def _check_name(self) -> 'FileEntry':
        if self.name != posixpath.basename(self.path):
            raise ValueError(f"name '{self.name}' is not the last component of '{self.path}'")
        return self

    @property
    def has_digest(self) -> bool:
        return self.digest != DIGEST_ERROR


class FirmwareArtifacts(FrozenModel):
    """fd_list, f_list, fh_list and f_strings derived from one firmware tree."""

    hash_algorithm: str = DEFAULT_HASH_ALGORITHM
    fd_list: Tuple[str, ...] = ('/',)
    f_list: Tuple[FileEntry, ...] = ()
    fh_list: Dict[str, str] = Field(default_factory=dict)
    f_strings: Dict[str, Tuple[str, ...]] = Field(default_factory=dict)
    skipped_entries: int = Field(default=0, ge=0)
    capped_files: Tuple[str, ...] = ()

    @field_validator('fd_list', 'capped_files')
    @classmethod
    def _sort_paths(cls, paths: Tuple[str, ...]) -> Tuple[str, ...]:
        return tuple(sorted(set(paths)))

    @field_validator('f_list')
    @classmethod
    def _sort_files(cls, entries: Tuple[FileEntry, ...]) -> Tuple[FileEntry, ...]:
        ordered = tuple(sorted(entries, key=lambda entry: entry.path))
        for previous, current in zip(ordered, ordered[1:]):
            if previous.path == current.path:
                raise ValueError(f"duplicate file path '{current.path}'")
        return ordered

    @field_validator('fh_list', 'f_strings')
    @classmethod
    def _sort_mapping(cls, mapping: Dict) -> Dict:
        return dict(sorted(mapping.items()))

    @model_validator(mode='after')
    def _check_coherence(self) -> 'FirmwareArtifacts':
        expected_length = HASH_DIGEST_LENGTHS.get(self.hash_algorithm)
        if expected_length is None:
            raise ValueError(f"unsupported hash algorithm '{self.hash_algorithm}'")

        paths = {entry.path for entry in self.f_list}
        if set(self.f_strings) != paths:
            raise ValueError("f_strings keys differ from f_list paths")

        hashed = {entry.path: entry.digest for entry in self.f_list if entry.has_digest}
        if self.fh_list != hashed:
            raise ValueError("fh_list differs from the digests recorded in f_list")
        for path, digest in hashed.items():
            if len(digest) != expected_length:
                raise ValueError(
                    f"digest of '{path}' has {len(digest)} hex chars, "
                    f"{self.hash_algorithm} needs {expected_length}"
                )

        directories = set(self.fd_list)
        if '/' not in directories:
            raise ValueError("fd_list must contain the root directory '/'")
        for path in paths:
            missing = [d for d in ancestor_directories(path) if d not in directories]
            if missing:
                raise ValueError(f"fd_list lacks ancestor {missing[0]} of '{path}'")
        return self


class PortCount(FrozenModel):
    port: int = Field(ge=0, le=65535)
    count: int = Field(ge=1)


class NetworkArtifacts(FrozenModel):
    """dp_list and td_port derived from one packet capture."""

    dp_list: Tuple[PortCount, ...] = ()
    td_port: Optional[int] = None
    tied_ports: Tuple[int, ...] = ()
    packet_total: int = Field(default=0, ge=0)
    portless_packets: int = Field(default=0, ge=0)
    decode_errors: int = Field(default=0, ge=0)
    truncated: bool = False
    notes: Tuple[str, ...] = ()

    @field_validator('dp_list')
    @classmethod
    def _sort_ports(cls, dp_list: Tuple[PortCount, ...]) -> Tuple[PortCount, ...]:
        ordered = tuple(sorted(dp_list, key=lambda item: item.port))
        for previous, current in zip(ordered, ordered[1:]):
            if previous.port == current.port:
                raise ValueError(f"port {current.port} listed twice in dp_list")
        return ordered

    @model_validator(mode='after')
    def _check_counts(self) -> 'NetworkArtifacts':
        counted = sum(item.count for item in self.dp_list)
        if counted > self.packet_total:
            raise ValueError(f"dp_list counts {counted} exceed packet_total {self.packet_total}")
        if counted + self.portless_packets + self.decode_errors != self.packet_total:
            raise ValueError("ported + portless + decode_errors must equal packet_total")

        if not self.dp_list:
            if self.td_port is not None or self.tied_ports:
                raise ValueError("td_port must be absent when dp_list is empty")
            return self

        top = max(item.count for item in self.dp_list)
        leaders = tuple(item.port for item in self.dp_list if item.count == top)
        if self.td_port != leaders[0]:
            raise ValueError(f"td_port must be {leaders[0]}, the smallest port with the top count")
        if self.tied_ports != (leaders if len(leaders) > 1 else ()):
            raise ValueError("tied_ports must list every port sharing the top count")
        return self

    @classmethod
    def from_port_counts(
        cls,
        counts: Mapping[int, int],
        portless_packets: int = 0,
        decode_errors: int = 0,
        truncated: bool = False,
        notes: Tuple[str, ...] = (),
    ) -> 'NetworkArtifacts':
        """Build artifacts from a port → count tally, applying the td_port tie-break."""
        dp_list = tuple(PortCount(port=port, count=count) for port, count in sorted(counts.items()))
        td_port = None
        tied_ports: Tuple[int, ...] = ()
        if dp_list:
            top = max(item.count for item in dp_list)
            leaders = tuple(item.port for item in dp_list if item.count == top)
            td_port = leaders[0]
            if len(leaders) > 1:
                tied_ports = leaders
        return cls(
            dp_list=dp_list,
            td_port=td_port,
            tied_ports=tied_ports,
            packet_total=sum(counts.values()) + portless_packets + decode_errors,
            portless_packets=portless_packets,
            decode_errors=decode_errors,
            truncated=truncated,
            notes=notes,
        )

    @property
    def ports(self) -> Tuple[int, ...]:
        return tuple(item.port for item in self.dp_list)

    @property
    def td_port_tied(self) -> bool:
        return bool(self.tied_ports)


class ProcessEntry(FrozenModel):
    pid: int = Field(gt=0)
    command_name: str = Field(min_length=1)
    raw_line: str
    kernel_thread: bool = False


class ProcessRejection(FrozenModel):
    line_number: int = Field(ge=1)
    raw_line: str
    reason: str


class ProcessArtifacts(FrozenModel):
    """p_list parsed from one ps-style listing, plus the lines that were rejected."""

    p_list: Tuple[ProcessEntry, ...] = ()
    rejects: Tuple[ProcessRejection, ...] = ()
    header: Optional[str] = None
    line_count: int = Field(default=0, ge=0)

    @field_validator('p_list')
    @classmethod
    def _sort_processes(cls, p_list: Tuple[ProcessEntry, ...]) -> Tuple[ProcessEntry, ...]:
        ordered = tuple(sorted(p_list, key=lambda entry: entry.pid))
        for previous, current in zip(ordered, ordered[1:]):
            if previous.pid == current.pid:
                raise ValueError(f"pid {current.pid} listed twice in p_list")
        return ordered

    @model_validator(mode='after')
    def _check_line_conservation(self) -> 'ProcessArtifacts':
        accounted = len(self.p_list) + len(self.rejects) + (1 if self.header is not None else 0)
        if accounted != self.line_count:
            raise ValueError(f"{accounted} lines accounted for, listing has {self.line_count}")
        return self

    @property
    def command_names(self) -> Tuple[str, ...]:
        return tuple(sorted({entry.command_name for entry in self.p_list}))


class SourceDescriptor(FrozenModel):
    """Where one evidence role of a case lives on disk."""

    role: EvidenceRole
    path: Path
    display_path: str

    @property
    def kind(self) -> EvidenceKind:
        return self.role.kind


class CaseBundle(FrozenModel):
    """Evidence sources of one case. Invariants are checked by validate_bundle."""

    case_id: str
    created_at: datetime
    firmware: Optional[SourceDescriptor] = None
    capture: Optional[SourceDescriptor] = None
    processes: Optional[SourceDescriptor] = None
    baseline_firmware: Optional[SourceDescriptor] = None
    baseline_capture: Optional[SourceDescriptor] = None
    baseline_processes: Optional[SourceDescriptor] = None

    @field_validator('created_at')
    @classmethod
    def _to_utc(cls, created_at: datetime) -> datetime:
        if created_at.tzinfo is None:
            return created_at.replace(tzinfo=timezone.utc)
        return created_at.astimezone(timezone.utc)

    def source(self, role: EvidenceRole) -> Optional[SourceDescriptor]:
        return getattr(self, role.value)

    def sources(self) -> List[SourceDescriptor]:
        """Present sources in canonical role order."""
        return [self.source(role) for role in ALL_ROLES if self.source(role) is not None]

    @property
    def has_baseline(self) -> bool:
        return any(self.source(role) is not None for role in BASELINE_ROLES)


class ValidationFinding(FrozenModel):
    field: str
    message: str

    def __str__(self) -> str:
        return self.message


def validate_bundle(bundle: CaseBundle) -> List[ValidationFinding]:
    """Check the case bundle invariants; an empty list means the bundle is usable."""
    findings = []

    if not bundle.case_id.strip():
        findings.append(ValidationFinding(field='case_id', message="case_id must not be empty"))
    elif '/' in bundle.case_id or '\\' in bundle.case_id or bundle.case_id.strip() in ('.', '..'):
        # case_id names the report files
        findings.append(ValidationFinding(field='case_id', message="case_id must be usable as a file name"))

    for role in ALL_ROLES:
        descriptor = bundle.source(role)
        if descriptor is not None and descriptor.role != role:
            findings.append(ValidationFinding(
                field=role.value,
                message=f"descriptor for {role.value} is tagged {descriptor.role.value}",
            ))

    if not any(bundle.source(role) is not None for role in SCENARIO_ROLES):
        findings.append(ValidationFinding(field='evidence', message="no evidence sources"))

    for role in BASELINE_ROLES:
        if bundle.source(role) is not None and bundle.source(role.counterpart) is None:
            findings.append(ValidationFinding(
                field=role.value,
                message=f"orphan baseline: {role.counterpart.value}",
            ))

    for finding in findings:
        logger.debug(f"Bundle {bundle.case_id!r}: {finding.message}")
    return findings


class EvidenceSet(FrozenModel):
    """One side of a comparison: the scenario evidence or the baseline evidence."""

    firmware: Optional[FirmwareArtifacts] = None
    capture: Optional[NetworkArtifacts] = None
    processes: Optional[ProcessArtifacts] = None


class CaseArtifacts(FrozenModel):
    """Artifacts ingested from every present source of a case."""

    firmware: Optional[FirmwareArtifacts] = None
    capture: Optional[NetworkArtifacts] = None
    processes: Optional[ProcessArtifacts] = None
    baseline_firmware: Optional[FirmwareArtifacts] = None
    baseline_capture: Optional[NetworkArtifacts] = None
    baseline_processes: Optional[ProcessArtifacts] = None

    def get(self, role: EvidenceRole):
        return getattr(self, role.value)

    @property
    def has_baseline(self) -> bool:
        return any(self.get(role) is not None for role in BASELINE_ROLES)

    def scenario(self) -> EvidenceSet:
        return EvidenceSet(firmware=self.firmware, capture=self.capture, processes=self.processes)

    def baseline(self) -> EvidenceSet:
        return EvidenceSet(
            firmware=self.baseline_firmware,
            capture=self.baseline_capture,
            processes=self.baseline_processes,
        )
