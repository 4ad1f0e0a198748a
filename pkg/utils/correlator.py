"""
Evidence correlation across sources and against a baseline.

Without a baseline, destination ports are matched against file strings and
process names against file names and file strings. With a baseline, the
scenario's processes, files, file hashes and ports are differenced against
the known-good evidence in both directions.
"""

import logging
import re
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from pydantic import Field, field_validator, model_validator

from evidence_schema import (
    CaseArtifacts,
    EvidenceSet,
    FileEntry,
    FrozenModel,
    HashAlgorithmMismatchError,
    ProcessEntry,
)

logger = logging.getLogger(__name__)

_DIGIT_RUN = re.compile(r'[0-9]+')

BASELINE_INTERPRETATION_NOTE = (
    "baseline comparison reports differences in both directions: "
    "added = present only in the investigated evidence, removed = present only in the baseline; "
    "file hashes are compared for paths present on both sides"
)


class StringMatch(FrozenModel):
    path: str
    string: str


class PortStringFinding(FrozenModel):
    """A destination port whose decimal form appears in file strings."""

    port: int = Field(ge=0, le=65535)
    matching_files: Tuple[StringMatch, ...] = Field(min_length=1)


class ProcessFileFinding(FrozenModel):
    """A process whose name is both a file name and a file-string substring."""

    process_name: str = Field(min_length=1)
    pids: Tuple[int, ...] = ()
    file_matches: Tuple[str, ...] = Field(min_length=1)
    string_matches: Tuple[StringMatch, ...] = Field(min_length=1)


class NameDiff(FrozenModel):
    added: Tuple[str, ...] = ()
    removed: Tuple[str, ...] = ()

    @field_validator('added', 'removed')
    @classmethod
    def _sort(cls, values: Tuple[str, ...]) -> Tuple[str, ...]:
        return tuple(sorted(set(values)))

    @model_validator(mode='after')
    def _disjoint(self) -> 'NameDiff':
        overlap = set(self.added) & set(self.removed)
        if overlap:
            raise ValueError(f"{sorted(overlap)[0]} is both added and removed")
        return self

    @property
    def is_empty(self) -> bool:
        return not self.added and not self.removed


class PortDiff(FrozenModel):
    added: Tuple[int, ...] = ()
    removed: Tuple[int, ...] = ()

    @field_validator('added', 'removed')
    @classmethod
    def _sort(cls, values: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(sorted(set(values)))

    @model_validator(mode='after')
    def _disjoint(self) -> 'PortDiff':
        overlap = set(self.added) & set(self.removed)
        if overlap:
            raise ValueError(f"port {sorted(overlap)[0]} is both added and removed")
        return self

    @property
    def is_empty(self) -> bool:
        return not self.added and not self.removed


class HashDeviation(FrozenModel):
    path: str
    scenario_digest: str
    baseline_digest: str


class BaselineDiff(FrozenModel):
    """Deviations of the scenario evidence from the baseline; None means not compared."""

    hash_algorithm: Optional[str] = None
    p_diff: Optional[NameDiff] = None
    f_diff: Optional[NameDiff] = None
    fh_diff: Optional[Tuple[HashDeviation, ...]] = None
    dp_diff: Optional[PortDiff] = None
    top_port: Optional[int] = None
    baseline_top_port: Optional[int] = None

    @field_validator('fh_diff')
    @classmethod
    def _sort_deviations(cls, deviations):
        if deviations is None:
            return None
        return tuple(sorted(deviations, key=lambda deviation: deviation.path))

    @property
    def is_empty(self) -> bool:
        """True when every compared component shows no deviation."""
        components = [self.p_diff, self.f_diff, self.dp_diff]
        if any(component is not None and not component.is_empty for component in components):
            return False
        return not self.fh_diff


class CorrelationResult(FrozenModel):
    port_findings: Tuple[PortStringFinding, ...] = ()
    process_findings: Tuple[ProcessFileFinding, ...] = ()
    baseline_diff: Optional[BaselineDiff] = None
    skip_notes: Tuple[str, ...] = ()


class EvidenceCorrelator:
    """Correlates processed evidence; every method is pure."""

    def correlate_ports_strings(
        self, ports: Iterable[int], f_strings: Mapping[str, Sequence[str]]
    ) -> List[PortStringFinding]:
        """Ports appearing in file strings as a whole digit run ("8888" but not "18888")."""
        wanted = {str(port): port for port in set(ports)}
        if not wanted:
            return []

        hits: Dict[int, Set[Tuple[str, str]]] = {}
        for path, strings in f_strings.items():
            for string in strings:
                for run in set(_DIGIT_RUN.findall(string)):
                    port = wanted.get(run)
                    if port is not None:
                        hits.setdefault(port, set()).add((path, string))

        return [
            PortStringFinding(
                port=port,
                matching_files=tuple(StringMatch(path=path, string=string) for path, string in sorted(hits[port])),
            )
            for port in sorted(hits)
        ]

    def correlate_processes_files(
        self,
        p_list: Sequence[ProcessEntry],
        f_list: Sequence[FileEntry],
        f_strings: Mapping[str, Sequence[str]],
    ) -> List[ProcessFileFinding]:
        """Process names equal to a file's basename and contained in some file string."""
        pids_by_name: Dict[str, List[int]] = {}
        for process in p_list:
            pids_by_name.setdefault(process.command_name, []).append(process.pid)

        paths_by_name: Dict[str, List[str]] = {}
        for entry in f_list:
            paths_by_name.setdefault(entry.name, []).append(entry.path)

        findings = []
        for name in sorted(pids_by_name):
            file_matches = sorted(paths_by_name.get(name, []))
            if not file_matches:
                continue
            string_matches = sorted({
                (path, string)
                for path, strings in f_strings.items()
                for string in strings
                if name in string
            })
            if not string_matches:
                continue
            findings.append(ProcessFileFinding(
                process_name=name,
                pids=tuple(sorted(pids_by_name[name])),
                file_matches=tuple(file_matches),
                string_matches=tuple(StringMatch(path=path, string=string) for path, string in string_matches),
            ))
        return findings

    def diff_baseline(self, scenario: EvidenceSet, baseline: EvidenceSet) -> BaselineDiff:
        """Set differences between scenario and baseline for every source present on both sides."""
        fields = {}

        if scenario.processes is not None and baseline.processes is not None:
            names = set(scenario.processes.command_names)
            baseline_names = set(baseline.processes.command_names)
            fields['p_diff'] = NameDiff(added=tuple(names - baseline_names), removed=tuple(baseline_names - names))

        if scenario.firmware is not None and baseline.firmware is not None:
            if scenario.firmware.hash_algorithm != baseline.firmware.hash_algorithm:
                raise HashAlgorithmMismatchError(
                    scenario.firmware.hash_algorithm, baseline.firmware.hash_algorithm
                )
            fields['hash_algorithm'] = scenario.firmware.hash_algorithm

            paths = {entry.path for entry in scenario.firmware.f_list}
            baseline_paths = {entry.path for entry in baseline.firmware.f_list}
            fields['f_diff'] = NameDiff(added=tuple(paths - baseline_paths), removed=tuple(baseline_paths - paths))

            # error-sentinel files are absent from fh_list and so never compared
            scenario_hashes = scenario.firmware.fh_list
            baseline_hashes = baseline.firmware.fh_list
            fields['fh_diff'] = tuple(
                HashDeviation(path=path, scenario_digest=scenario_hashes[path], baseline_digest=baseline_hashes[path])
                for path in sorted(set(scenario_hashes) & set(baseline_hashes))
                if scenario_hashes[path] != baseline_hashes[path]
            )

        if scenario.capture is not None and baseline.capture is not None:
            ports = set(scenario.capture.ports)
            baseline_ports = set(baseline.capture.ports)
            fields['dp_diff'] = PortDiff(added=tuple(ports - baseline_ports), removed=tuple(baseline_ports - ports))
            fields['top_port'] = scenario.capture.td_port
            fields['baseline_top_port'] = baseline.capture.td_port

        diff = BaselineDiff(**fields)
        if diff.is_empty:
            logger.info("No deviation from baseline")
        return diff

    def run_correlation(self, artifacts: CaseArtifacts) -> CorrelationResult:
        """Cross-source correlation, then baseline differencing when a baseline is present."""
        firmware = artifacts.firmware
        capture = artifacts.capture
        processes = artifacts.processes
        skip_notes = []

        port_findings: List[PortStringFinding] = []
        if firmware is not None and capture is not None:
            port_findings = self.correlate_ports_strings(capture.ports, firmware.f_strings)
        else:
            missing = [label for label, present in (('capture', capture), ('firmware', firmware)) if present is None]
            skip_notes.append(f"port-string correlation skipped: no {', no '.join(missing)}")

        process_findings: List[ProcessFileFinding] = []
        if firmware is not None and processes is not None:
            process_findings = self.correlate_processes_files(processes.p_list, firmware.f_list, firmware.f_strings)
        else:
            missing = [label for label, present in (('processes', processes), ('firmware', firmware)) if present is None]
            skip_notes.append(f"process-file correlation skipped: no {', no '.join(missing)}")

        baseline_diff: Optional[BaselineDiff] = None
        if artifacts.has_baseline:
            baseline_diff = self.diff_baseline(artifacts.scenario(), artifacts.baseline())

        for note in skip_notes:
            logger.info(note)
        logger.info(
            f"Correlation: {len(port_findings)} port finding(s), {len(process_findings)} process finding(s), "
            f"baseline {'compared' if baseline_diff is not None else 'absent'}"
        )
        return CorrelationResult(
            port_findings=tuple(port_findings),
            process_findings=tuple(process_findings),
            baseline_diff=baseline_diff,
            skip_notes=tuple(skip_notes),
        )
