"""
Investigation report assembly.

Configuration 1 reports processing statistics only. Configuration 2 adds
correlation findings and the baseline comparison. Configuration 3 adds the
ISO classification of every source and a plain-language narrative.
"""

import logging
from datetime import datetime, timezone
from typing import Dict, List, Optional, Tuple

from pydantic import Field, field_validator, model_validator

from evidence_schema import (
    ALL_ROLES,
    DEFAULT_HASH_ALGORITHM,
    DIGEST_ERROR,
    CaseArtifacts,
    CaseBundle,
    ClassificationLabel,
    EvidenceKind,
    EvidenceRole,
    FirmwareArtifacts,
    FrozenModel,
    NetworkArtifacts,
    ProcessArtifacts,
    ReportConfigurationError,
    classify_evidence,
)
from utils.correlator import (
    BASELINE_INTERPRETATION_NOTE,
    BaselineDiff,
    CorrelationResult,
    PortStringFinding,
    ProcessFileFinding,
)
from version import __version__

logger = logging.getLogger(__name__)

REPORT_VERSION = 1

CONFIGURATIONS = {
    1: 'evidence processing only',
    2: 'correlation',
    3: 'correlation and reporting',
}

NO_DEVIATION_NOTE = "no deviation from baseline"


class FirmwareStatistics(FrozenModel):
    directories: int = Field(ge=0)
    files: int = Field(ge=0)
    hashed_files: int = Field(ge=0)
    hash_errors: int = Field(ge=0)
    special_files: int = Field(ge=0)
    symlinks: int = Field(ge=0)
    files_with_strings: int = Field(ge=0)
    strings_total: int = Field(ge=0)
    skipped_entries: int = Field(ge=0)
    capped_files: Tuple[str, ...] = ()


class CaptureStatistics(FrozenModel):
    packet_total: int = Field(ge=0)
    ported_packets: int = Field(ge=0)
    portless_packets: int = Field(ge=0)
    decode_errors: int = Field(ge=0)
    distinct_ports: int = Field(ge=0)
    td_port: Optional[int] = None
    tied_ports: Tuple[int, ...] = ()
    truncated: bool = False


class ProcessStatistics(FrozenModel):
    processes: int = Field(ge=0)
    distinct_names: int = Field(ge=0)
    kernel_threads: int = Field(ge=0)
    rejected_lines: int = Field(ge=0)
    header: Optional[str] = None


class SourceSection(FrozenModel):
    """One evidence source: where it came from, how it classifies, what it yielded."""

    role: EvidenceRole
    kind: EvidenceKind
    path: str
    baseline: bool
    classification: Optional[ClassificationLabel] = None
    firmware: Optional[FirmwareStatistics] = None
    capture: Optional[CaptureStatistics] = None
    processes: Optional[ProcessStatistics] = None

    @model_validator(mode='after')
    def _check_statistics(self) -> 'SourceSection':
        present = [name for name in ('firmware', 'capture', 'processes') if getattr(self, name) is not None]
        expected = {
            EvidenceKind.FIRMWARE_IMAGE: 'firmware',
            EvidenceKind.NETWORK_CAPTURE: 'capture',
            EvidenceKind.SYSTEM_PROCESSES: 'processes',
        }[self.kind]
        if present != [expected]:
            raise ValueError(f"{self.role.value} section must carry {expected} statistics only")
        return self


class Findings(FrozenModel):
    port_strings: Tuple[PortStringFinding, ...] = ()
    process_files: Tuple[ProcessFileFinding, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.port_strings and not self.process_files


class Report(FrozenModel):
    """Everything an investigator receives for one case."""

    report_version: int = REPORT_VERSION
    case_id: str
    created_at: datetime
    tool_version: str
    configuration: int
    hash_algorithm: str
    sections: Tuple[SourceSection, ...] = ()
    findings: Optional[Findings] = None
    baseline_diff: Optional[BaselineDiff] = None
    narrative: Optional[Tuple[str, ...]] = None
    notes: Tuple[str, ...] = ()

    @field_validator('created_at')
    @classmethod
    def _to_utc(cls, created_at: datetime) -> datetime:
        if created_at.tzinfo is None:
            return created_at.replace(tzinfo=timezone.utc)
        return created_at.astimezone(timezone.utc)

    @model_validator(mode='after')
    def _check_configuration(self) -> 'Report':
        if self.configuration not in CONFIGURATIONS:
            raise ValueError(f"configuration must be one of 1, 2, 3, got {self.configuration}")
        roles = [section.role for section in self.sections]
        if len(roles) != len(set(roles)):
            raise ValueError("each evidence role may have only one section")

        classified = self.configuration == 3
        for section in self.sections:
            if (section.classification is not None) != classified:
                raise ValueError(f"{section.role.value}: classification is present only in configuration 3")
        if (self.findings is not None) != (self.configuration in (2, 3)):
            raise ValueError("findings are present only in configurations 2 and 3")
        if self.baseline_diff is not None and self.configuration == 1:
            raise ValueError("configuration 1 carries no baseline comparison")
        if (self.narrative is not None) != classified:
            raise ValueError("narrative is present only in configuration 3")
        return self

    def section(self, role: EvidenceRole) -> Optional[SourceSection]:
        return next((section for section in self.sections if section.role == role), None)


def _firmware_statistics(artifacts: FirmwareArtifacts) -> FirmwareStatistics:
    return FirmwareStatistics(
        directories=len(artifacts.fd_list),
        files=len(artifacts.f_list),
        hashed_files=len(artifacts.fh_list),
        hash_errors=sum(1 for entry in artifacts.f_list if entry.digest == DIGEST_ERROR),
        special_files=sum(1 for entry in artifacts.f_list if entry.file_type.is_special),
        symlinks=sum(1 for entry in artifacts.f_list if entry.link_target is not None),
        files_with_strings=sum(1 for strings in artifacts.f_strings.values() if strings),
        strings_total=sum(len(strings) for strings in artifacts.f_strings.values()),
        skipped_entries=artifacts.skipped_entries,
        capped_files=artifacts.capped_files,
    )


def _capture_statistics(artifacts: NetworkArtifacts) -> CaptureStatistics:
    return CaptureStatistics(
        packet_total=artifacts.packet_total,
        ported_packets=sum(item.count for item in artifacts.dp_list),
        portless_packets=artifacts.portless_packets,
        decode_errors=artifacts.decode_errors,
        distinct_ports=len(artifacts.dp_list),
        td_port=artifacts.td_port,
        tied_ports=artifacts.tied_ports,
        truncated=artifacts.truncated,
    )


def _process_statistics(artifacts: ProcessArtifacts) -> ProcessStatistics:
    return ProcessStatistics(
        processes=len(artifacts.p_list),
        distinct_names=len(artifacts.command_names),
        kernel_threads=sum(1 for entry in artifacts.p_list if entry.kernel_thread),
        rejected_lines=len(artifacts.rejects),
        header=artifacts.header,
    )


def _ingestion_notes(role: EvidenceRole, artifacts) -> List[str]:
    """Incompleteness disclosures for one source."""
    notes = []
    if isinstance(artifacts, FirmwareArtifacts):
        if artifacts.skipped_entries:
            notes.append(f"{role.value}: {artifacts.skipped_entries} filesystem entries skipped (unreadable)")
        unreadable = [entry.path for entry in artifacts.f_list if entry.digest == DIGEST_ERROR]
        if unreadable:
            notes.append(
                f"{role.value}: {len(unreadable)} file(s) unreadable, digest recorded as {DIGEST_ERROR} "
                f"and excluded from hash comparison: {', '.join(unreadable)}"
            )
        if artifacts.capped_files:
            notes.append(
                f"{role.value}: string extraction capped for {len(artifacts.capped_files)} file(s): "
                f"{', '.join(artifacts.capped_files)}"
            )
    elif isinstance(artifacts, NetworkArtifacts):
        notes.extend(f"{role.value}: {note}" for note in artifacts.notes)
        if artifacts.decode_errors:
            notes.append(f"{role.value}: {artifacts.decode_errors} packet(s) could not be decoded")
        if artifacts.tied_ports:
            others = ', '.join(str(port) for port in artifacts.tied_ports)
            notes.append(
                f"{role.value}: top destination port is tied between {others}; "
                f"the smallest ({artifacts.td_port}) is reported"
            )
    elif isinstance(artifacts, ProcessArtifacts):
        for reject in artifacts.rejects:
            notes.append(f"{role.value}: line {reject.line_number} rejected ({reject.reason})")
    return notes


def _narrative(findings: Findings, diff: Optional[BaselineDiff]) -> Tuple[str, ...]:
    """Plain-language statements of each finding and deviation."""
    lines = []
    for finding in findings.port_strings:
        paths = sorted({match.path for match in finding.matching_files})
        lines.append(
            f"Destination port {finding.port} seen in the capture "
            f"appears in strings of firmware file(s) {', '.join(paths)}."
        )
    for finding in findings.process_files:
        pids = ', '.join(str(pid) for pid in finding.pids)
        string_paths = sorted({match.path for match in finding.string_matches})
        lines.append(
            f"Process {finding.process_name} (pid {pids}) from the process listing matches "
            f"firmware file(s) {', '.join(finding.file_matches)} and is named in strings of "
            f"{', '.join(string_paths)}."
        )

    if diff is not None:
        if diff.p_diff is not None:
            lines.extend(f"Process {name} is running but absent from the baseline." for name in diff.p_diff.added)
            lines.extend(f"Baseline process {name} is no longer running." for name in diff.p_diff.removed)
        if diff.f_diff is not None:
            lines.extend(f"File {path} is absent from the baseline firmware." for path in diff.f_diff.added)
            lines.extend(f"Baseline file {path} is missing from the firmware." for path in diff.f_diff.removed)
        for deviation in diff.fh_diff or ():
            lines.append(f"File {deviation.path} differs from its baseline ({diff.hash_algorithm} mismatch).")
        if diff.dp_diff is not None:
            lines.extend(f"Destination port {port} is absent from the baseline capture." for port in diff.dp_diff.added)
            lines.extend(f"Baseline destination port {port} no longer appears." for port in diff.dp_diff.removed)
            if diff.top_port != diff.baseline_top_port:
                lines.append(
                    f"Top destination port changed from {diff.baseline_top_port} (baseline) to {diff.top_port}."
                )

    if not lines:
        lines.append("No cross-source correlation or baseline deviation was found.")
    return tuple(lines)


def build_report(
    bundle: CaseBundle,
    artifacts: CaseArtifacts,
    correlation: Optional[CorrelationResult] = None,
    configuration: int = 3,
    hash_algorithm: Optional[str] = None,
    tool_version: str = __version__,
) -> Report:
    """Assemble the report for one correlation run."""
    if configuration not in CONFIGURATIONS:
        raise ReportConfigurationError(
            f"--config must be one of 1, 2, 3, got {configuration!r}"
        )
    if configuration in (2, 3) and correlation is None:
        raise ReportConfigurationError(f"configuration {configuration} requires a correlation result")

    if hash_algorithm is None:
        firmware = artifacts.firmware or artifacts.baseline_firmware
        hash_algorithm = firmware.hash_algorithm if firmware is not None else DEFAULT_HASH_ALGORITHM

    sections = []
    notes: List[str] = []
    for role in ALL_ROLES:
        descriptor = bundle.source(role)
        if descriptor is None:
            continue
        role_artifacts = artifacts.get(role)
        if role_artifacts is None:
            raise ReportConfigurationError(f"no artifacts were produced for the {role.value} source")

        statistics: Dict = {}
        if isinstance(role_artifacts, FirmwareArtifacts):
            statistics['firmware'] = _firmware_statistics(role_artifacts)
        elif isinstance(role_artifacts, NetworkArtifacts):
            statistics['capture'] = _capture_statistics(role_artifacts)
        else:
            statistics['processes'] = _process_statistics(role_artifacts)

        sections.append(SourceSection(
            role=role,
            kind=role.kind,
            path=descriptor.display_path,
            baseline=role.is_baseline,
            classification=classify_evidence(role.kind) if configuration == 3 else None,
            **statistics,
        ))
        notes.extend(_ingestion_notes(role, role_artifacts))

    findings = None
    baseline_diff = None
    narrative = None
    if configuration in (2, 3):
        findings = Findings(
            port_strings=correlation.port_findings,
            process_files=correlation.process_findings,
        )
        baseline_diff = correlation.baseline_diff
        notes.extend(correlation.skip_notes)
        if baseline_diff is not None:
            notes.append(BASELINE_INTERPRETATION_NOTE)
            if baseline_diff.is_empty:
                notes.append(NO_DEVIATION_NOTE)
    if configuration == 3:
        narrative = _narrative(findings, baseline_diff)

    report = Report(
        case_id=bundle.case_id,
        created_at=bundle.created_at,
        tool_version=tool_version,
        configuration=configuration,
        hash_algorithm=hash_algorithm,
        sections=tuple(sections),
        findings=findings,
        baseline_diff=baseline_diff,
        narrative=narrative,
        notes=tuple(notes),
    )
    logger.info(
        f"Report for case {bundle.case_id}: configuration {configuration} "
        f"({CONFIGURATIONS[configuration]}), {len(sections)} section(s), {len(notes)} note(s)"
    )
    return report
