"""
Report rendering: canonical JSON and sectioned plain text.
"""

import json
from typing import List, Optional

from utils.correlator import BaselineDiff
from utils.report_builder import CONFIGURATIONS, NO_DEVIATION_NOTE, Report, SourceSection

RULE_WIDTH = 80
SECTION_TITLES = (
    'CLASSIFICATION',
    'ARTIFACTS',
    'CORRELATION FINDINGS',
    'BASELINE DEVIATIONS',
    'NOTES',
)
NONE_PLACEHOLDER = 'none'

_BOLD = '\033[1m'
_CYAN = '\033[36m'
_RESET = '\033[0m'


class ReportFormatter:
    """Formats a Report for files and for the console."""

    def __init__(self, styled: bool = False):
        self.styled = styled

    def render_json(self, report: Report) -> bytes:
        """Canonical JSON: sorted keys, ASCII-escaped, two-space indent, trailing newline."""
        payload = report.model_dump(mode='json', exclude_none=True)
        return (json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=True) + '\n').encode('ascii')

    def parse_json(self, data: bytes) -> Report:
        return Report.model_validate_json(data)

    def render_text(self, report: Report) -> str:
        lines = ['=' * RULE_WIDTH, self._style('STITCHER INVESTIGATION REPORT'), '=' * RULE_WIDTH]
        lines.append(f"{'Case:':<15}{report.case_id}")
        lines.append(f"{'Created:':<15}{report.created_at.strftime('%Y-%m-%dT%H:%M:%SZ')}")
        lines.append(f"{'Tool version:':<15}{report.tool_version}")
        lines.append(f"{'Configuration:':<15}{report.configuration} ({CONFIGURATIONS[report.configuration]})")
        lines.append(f"{'Hash:':<15}{report.hash_algorithm}")

        if report.narrative is not None:
            self._section(lines, 'SUMMARY', [f"- {sentence}" for sentence in report.narrative])

        bodies = {
            'CLASSIFICATION': self.format_classification(report),
            'ARTIFACTS': self.format_artifacts(report),
            'CORRELATION FINDINGS': self.format_findings(report),
            'BASELINE DEVIATIONS': self.format_baseline(report.baseline_diff),
            'NOTES': [f"- {note}" for note in report.notes],
        }
        for title in SECTION_TITLES:
            self._section(lines, title, bodies[title])
        return '\n'.join(lines) + '\n'

    def format_classification(self, report: Report) -> List[str]:
        lines = []
        for section in report.sections:
            if section.classification is None:
                continue
            label = section.classification
            lines.append(self._source_heading(section))
            lines.append(
                f"  ISO 27050-1: {'; '.join(f'{iso.code} {iso.title}' for iso in label.iso27050_codes)}"
            )
            lines.append(f"  ISO 30141:   {label.iso30141_code.code} {label.iso30141_code.title}")
        return lines

    def format_artifacts(self, report: Report) -> List[str]:
        lines = []
        for section in report.sections:
            lines.append(self._source_heading(section))
            if section.firmware is not None:
                stats = section.firmware
                lines.append(
                    f"  directories: {stats.directories}, files: {stats.files} "
                    f"(symlinks {stats.symlinks}, special {stats.special_files}), "
                    f"hashed: {stats.hashed_files}, hash errors: {stats.hash_errors}"
                )
                lines.append(
                    f"  strings: {stats.strings_total} in {stats.files_with_strings} file(s), "
                    f"capped files: {len(stats.capped_files)}, skipped entries: {stats.skipped_entries}"
                )
            elif section.capture is not None:
                stats = section.capture
                top = NONE_PLACEHOLDER if stats.td_port is None else str(stats.td_port)
                if stats.tied_ports:
                    top += f" (tied: {', '.join(str(port) for port in stats.tied_ports)})"
                lines.append(
                    f"  packets: {stats.packet_total} (ported {stats.ported_packets}, "
                    f"portless {stats.portless_packets}, decode errors {stats.decode_errors})"
                    f"{', truncated' if stats.truncated else ''}"
                )
                lines.append(f"  destination ports: {stats.distinct_ports}, top destination port: {top}")
            elif section.processes is not None:
                stats = section.processes
                lines.append(
                    f"  processes: {stats.processes} (kernel threads {stats.kernel_threads}, "
                    f"distinct names {stats.distinct_names}), rejected lines: {stats.rejected_lines}"
                )
        return lines

    def format_findings(self, report: Report) -> List[str]:
        if report.findings is None:
            return []
        lines = []
        for finding in report.findings.port_strings:
            for match in finding.matching_files:
                lines.append(
                    f"port {finding.port} [capture] <-> {match.path} [firmware]: {json.dumps(match.string)}"
                )
        for finding in report.findings.process_files:
            pids = ', '.join(str(pid) for pid in finding.pids)
            subject = f"process {finding.process_name} (pid {pids}) [processes]"
            for path in finding.file_matches:
                lines.append(f"{subject} <-> file {path} [firmware]")
            for match in finding.string_matches:
                lines.append(f"{subject} <-> string in {match.path} [firmware]: {json.dumps(match.string)}")
        return lines

    def format_baseline(self, diff: Optional[BaselineDiff]) -> List[str]:
        if diff is None:
            return []
        lines = []
        lines.extend(self._diff_lines('processes (p_diff)', diff.p_diff))
        lines.extend(self._diff_lines('files (f_diff)', diff.f_diff))
        if diff.fh_diff is not None:
            if diff.fh_diff:
                lines.append(f"file hashes (fh_diff, {diff.hash_algorithm}):")
                for deviation in diff.fh_diff:
                    lines.append(f"  ~ {deviation.path}")
                    lines.append(f"      now:      {deviation.scenario_digest}")
                    lines.append(f"      baseline: {deviation.baseline_digest}")
            else:
                lines.append("file hashes (fh_diff): no change")
        lines.extend(self._diff_lines('destination ports (dp_diff)', diff.dp_diff))
        if diff.dp_diff is not None:
            lines.append(
                f"top destination port: {self._port(diff.top_port)} "
                f"(baseline: {self._port(diff.baseline_top_port)})"
            )
        if diff.is_empty:
            lines.append(NO_DEVIATION_NOTE)
        return lines

    def _diff_lines(self, label: str, diff) -> List[str]:
        if diff is None:
            return []
        if diff.is_empty:
            return [f"{label}: no change"]
        lines = [f"{label}:"]
        lines.extend(f"  + {item}" for item in diff.added)
        lines.extend(f"  - {item}" for item in diff.removed)
        return lines

    def _port(self, port: Optional[int]) -> str:
        return NONE_PLACEHOLDER if port is None else str(port)

    def _source_heading(self, section: SourceSection) -> str:
        return f"{section.role.value} [{section.kind.label}] {section.path}"

    def _section(self, lines: List[str], title: str, body: List[str]) -> None:
        lines.append('')
        lines.append(self._style(title))
        lines.append('-' * RULE_WIDTH)
        lines.extend(body or [NONE_PLACEHOLDER])

    def _style(self, title: str) -> str:
        if not self.styled:
            return title
        return f"{_BOLD}{_CYAN}{title}{_RESET}"


def render_json(report: Report) -> bytes:
    return ReportFormatter().render_json(report)


def parse_json(data: bytes) -> Report:
    return ReportFormatter().parse_json(data)


def render_text(report: Report, styled: bool = False) -> str:
    return ReportFormatter(styled=styled).render_text(report)
