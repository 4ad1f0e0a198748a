"""Tests for report assembly, configurations and rendering."""

import json
from datetime import datetime, timezone
from pathlib import Path

import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from evidence_schema import (
    CaseArtifacts,
    CaseBundle,
    EvidenceRole,
    FirmwareArtifacts,
    NetworkArtifacts,
    ProcessArtifacts,
    ProcessEntry,
    ProcessRejection,
    ReportConfigurationError,
    SourceDescriptor,
)
from main import analyze_case
from tests.conftest import capture_bytes, firmware_artifacts, write_tree
from utils.correlator import CorrelationResult, EvidenceCorrelator, PortStringFinding, StringMatch
from utils.pcap_writer import build_arp_frame, build_tcp_frame, build_udp_frame
from utils.report_builder import NO_DEVIATION_NOTE, Report, build_report
from utils.report_formatter import SECTION_TITLES, parse_json, render_json, render_text

GOLDEN_DIR = Path(__file__).resolve().parent / 'golden'
CREATED_AT = datetime(2021, 3, 1, tzinfo=timezone.utc)


def descriptor(role: EvidenceRole) -> SourceDescriptor:
    return SourceDescriptor(role=role, path=Path('/evidence') / role.value, display_path=f"evidence/{role.value}")


def small_case(**artifacts) -> tuple:
    bundle = CaseBundle(
        case_id='unit',
        created_at=CREATED_AT,
        **{role: descriptor(EvidenceRole(role)) for role in artifacts},
    )
    return bundle, CaseArtifacts(**artifacts)


def processes(*names: str) -> ProcessArtifacts:
    entries = tuple(
        ProcessEntry(pid=index, command_name=name, raw_line=f"{index} {name}")
        for index, name in enumerate(names, start=1)
    )
    return ProcessArtifacts(p_list=entries, line_count=len(entries))


def report_for(bundle, artifacts, configuration=3) -> Report:
    correlation = EvidenceCorrelator().run_correlation(artifacts) if configuration > 1 else None
    return build_report(bundle, artifacts, correlation, configuration, tool_version='test')


@pytest.fixture(scope='module')
def scenario_reports(scenario_dir):
    return {
        configuration: analyze_case(scenario_dir / 'case.yaml', configuration=configuration).report
        for configuration in (1, 2, 3)
    }


class TestConfigurations:
    def test_configuration_one_is_statistics_only(self, scenario_reports):
        report = scenario_reports[1]
        assert report.findings is None
        assert report.baseline_diff is None
        assert report.narrative is None
        assert all(section.classification is None for section in report.sections)
        assert len(report.sections) == 6

    def test_configuration_two_adds_findings_and_diff(self, scenario_reports):
        report = scenario_reports[2]
        assert [finding.port for finding in report.findings.port_strings] == [8888]
        assert report.baseline_diff is not None
        assert report.narrative is None
        payload = json.loads(render_json(report))
        assert all('classification' not in section for section in payload['sections'])

    def test_configuration_three_classifies_firmware(self, scenario_reports):
        firmware = scenario_reports[3].section(EvidenceRole.FIRMWARE)
        codes = [(iso.code, iso.title) for iso in firmware.classification.iso27050_codes]
        assert codes[0] == ('7.2.2', 'Active data')
        assert firmware.classification.iso30141_code.code == '8.2.3.9'
        assert firmware.classification.iso30141_code.title == 'Data store'
        assert scenario_reports[3].narrative

    def test_two_and_three_differ_only_in_classification_and_narrative(self, scenario_reports):
        def stripped(report):
            payload = report.model_dump(mode='json', exclude_none=True)
            payload.pop('configuration')
            payload.pop('narrative', None)
            for section in payload['sections']:
                section.pop('classification', None)
            return payload

        assert stripped(scenario_reports[2]) == stripped(scenario_reports[3])

    def test_statistics_do_not_depend_on_configuration(self, scenario_reports):
        def statistics(report):
            return [section.model_dump(exclude={'classification'}) for section in report.sections]

        assert statistics(scenario_reports[1]) == statistics(scenario_reports[3])

    @pytest.mark.parametrize('configuration', [0, 4, '3'])
    def test_unknown_configuration_rejected(self, configuration):
        bundle, artifacts = small_case(processes=processes('init'))
        with pytest.raises(ReportConfigurationError, match='--config must be one of 1, 2, 3'):
            build_report(bundle, artifacts, None, configuration)

    def test_correlation_required_for_configuration_two(self):
        bundle, artifacts = small_case(processes=processes('init'))
        with pytest.raises(ReportConfigurationError, match='requires a correlation result'):
            build_report(bundle, artifacts, None, 2)

    def test_report_model_enforces_lattice(self, scenario_reports):
        payload = scenario_reports[1].model_dump()
        payload['narrative'] = ('text',)
        with pytest.raises(ValueError, match='narrative'):
            Report(**payload)


class TestNotes:
    def test_baseline_notes(self, scenario_reports):
        notes = scenario_reports[3].notes
        assert any(note.startswith('baseline comparison reports differences in both directions') for note in notes)
        assert NO_DEVIATION_NOTE not in notes

    def test_no_deviation_note(self):
        evidence = {'processes': processes('init'), 'baseline_processes': processes('init')}
        bundle, artifacts = small_case(**evidence)
        report = report_for(bundle, artifacts)
        assert NO_DEVIATION_NOTE in report.notes
        assert report.baseline_diff.is_empty

    def test_skip_and_ingestion_notes(self):
        capture = NetworkArtifacts.from_port_counts({80: 3, 443: 3}, decode_errors=2)
        bundle, artifacts = small_case(capture=capture)
        report = report_for(bundle, artifacts)
        assert report.notes == (
            'capture: 2 packet(s) could not be decoded',
            'capture: top destination port is tied between 80, 443; the smallest (80) is reported',
            'port-string correlation skipped: no firmware',
            'process-file correlation skipped: no processes, no firmware',
        )

    def test_rejected_process_lines_are_noted(self):
        listing = ProcessArtifacts(
            p_list=(ProcessEntry(pid=1, command_name='init', raw_line='1 init'),),
            rejects=({'line_number': 3, 'raw_line': 'x', 'reason': "unparsable pid 'x'"},),
            header='PID CMD',
            line_count=3,
        )
        bundle, artifacts = small_case(processes=listing)
        report = report_for(bundle, artifacts, configuration=1)
        assert report.notes == ("processes: line 3 rejected (unparsable pid 'x')",)


class TestJson:
    def test_round_trip(self, scenario_reports):
        for report in scenario_reports.values():
            assert parse_json(render_json(report)) == report

    def test_empty_findings_round_trip(self):
        bundle, artifacts = small_case(processes=processes('init'))
        report = report_for(bundle, artifacts, configuration=2)
        assert report.findings.is_empty
        assert parse_json(render_json(report)) == report

    def test_non_ascii_string_is_escaped_and_preserved(self):
        bundle, artifacts = small_case(processes=processes('init'))
        correlation = CorrelationResult(port_findings=(
            PortStringFinding(port=8888, matching_files=(StringMatch(path='/sbin/x', string='écoute 8888 ☎'),)),
        ))
        report = build_report(bundle, artifacts, correlation, 2, tool_version='test')
        data = render_json(report)
        assert data.isascii()
        assert '\\u00e9coute 8888 \\u260e' in data.decode('ascii')
        assert parse_json(data) == report

    def test_rendering_is_byte_stable(self, scenario_reports, scenario_dir):
        again = analyze_case(scenario_dir / 'case.yaml', configuration=3, workers=1).report
        assert render_json(again) == render_json(scenario_reports[3])

    def test_canonical_layout(self, scenario_reports):
        data = render_json(scenario_reports[3]).decode('ascii')
        assert data.endswith('}\n')
        assert data == json.dumps(json.loads(data), sort_keys=True, indent=2) + '\n'
        assert '"created_at": "2021-03-01T00:00:00Z"' in data


SHARED_NAMES = ['iSmartAlarmShell', 'telnetd', 'café', 'Ωmega', 'syslogd']
free_text = st.text(alphabet=st.characters(blacklist_categories=('Cs',)), max_size=16)
file_strings = st.sampled_from(['bind shell on 8888', 'écoute 443 ☎', 'nameserver 53', 'port=4444']) | free_text


@st.composite
def firmware_trees(draw):
    paths = draw(st.lists(
        st.tuples(st.sampled_from(['/bin', '/sbin', '/etc_ro/ü']), st.sampled_from(SHARED_NAMES)).map('/'.join),
        unique=True, max_size=5,
    ))
    return firmware_artifacts({
        path: (draw(st.binary(max_size=16)), tuple(draw(st.lists(file_strings, max_size=3))))
        for path in paths
    })


@st.composite
def captures(draw):
    counts = draw(st.dictionaries(st.sampled_from([53, 80, 443, 4444, 8888]), st.integers(1, 5), max_size=4))
    return NetworkArtifacts.from_port_counts(
        counts,
        portless_packets=draw(st.integers(0, 3)),
        decode_errors=draw(st.integers(0, 2)),
        notes=tuple(draw(st.lists(free_text, max_size=2))),
    )


@st.composite
def process_listings(draw):
    names = draw(st.lists(st.sampled_from(SHARED_NAMES) | free_text.filter(bool), max_size=5))
    entries = tuple(
        ProcessEntry(pid=pid, command_name=name, raw_line=f"{pid} {name}")
        for pid, name in enumerate(names, start=1)
    )
    rejects = tuple(
        ProcessRejection(line_number=number, raw_line=raw_line, reason=f"unparsable pid {raw_line!r}")
        for number, raw_line in enumerate(draw(st.lists(free_text, max_size=2)), start=len(entries) + 2)
    )
    header = draw(st.none() | st.just('  PID USER       VSZ STAT COMMAND'))
    return ProcessArtifacts(
        p_list=entries,
        rejects=rejects,
        header=header,
        line_count=len(entries) + len(rejects) + (header is not None),
    )


@st.composite
def cases(draw):
    present = {
        role: draw(strategy)
        for role, strategy in (
            ('firmware', firmware_trees()),
            ('capture', captures()),
            ('processes', process_listings()),
            ('baseline_firmware', firmware_trees()),
            ('baseline_capture', captures()),
            ('baseline_processes', process_listings()),
        )
        if draw(st.booleans())
    }
    assume(present)
    return small_case(**present)


class TestJsonProperties:
    @settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(case=cases(), configuration=st.sampled_from([1, 2, 3]))
    def test_any_report_round_trips(self, case, configuration):
        bundle, artifacts = case
        report = report_for(bundle, artifacts, configuration)
        data = render_json(report)
        assert data.isascii()
        assert parse_json(data) == report
        assert render_json(parse_json(data)) == data

    @settings(max_examples=100, deadline=None)
    @given(firmware=firmware_trees(), capture=captures(), listing=process_listings())
    def test_artifacts_round_trip(self, firmware, capture, listing):
        assert FirmwareArtifacts.model_validate_json(firmware.model_dump_json()) == firmware
        assert NetworkArtifacts.model_validate_json(capture.model_dump_json()) == capture
        assert ProcessArtifacts.model_validate_json(listing.model_dump_json()) == listing


class TestText:
    def test_sections_in_order(self, scenario_reports):
        text = render_text(scenario_reports[3])
        positions = [text.index(f"\n{title}\n") for title in ('SUMMARY',) + SECTION_TITLES]
        assert positions == sorted(positions)

    def test_backdoor_port_line(self, scenario_reports):
        text = render_text(scenario_reports[3])
        assert 'port 8888 [capture] <-> /sbin/iSmartAlarmShell [firmware]: "bind shell on 8888"' in text
        assert 'process iSmartAlarmShell (pid 131) [processes] <-> file /sbin/iSmartAlarmShell [firmware]' in text
        assert '  ~ /etc_ro/rcS' in text

    def test_empty_report_shows_placeholders(self):
        bundle, artifacts = small_case(processes=processes('init'))
        text = render_text(report_for(bundle, artifacts))
        for title in ('CORRELATION FINDINGS', 'BASELINE DEVIATIONS'):
            assert f"{title}\n{'-' * 80}\nnone\n" in text

    def test_configuration_one_has_no_classification(self, scenario_reports):
        text = render_text(scenario_reports[1])
        assert f"CLASSIFICATION\n{'-' * 80}\nnone\n" in text
        assert 'SUMMARY' not in text

    def test_styling_only_when_requested(self, scenario_reports):
        assert '\033[' not in render_text(scenario_reports[3])
        assert '\033[1m\033[36mNOTES\033[0m' in render_text(scenario_reports[3], styled=True)




# A small hand-assembled case: every statistic, digest and line of its report
# can be worked out from the evidence below.
GOLDEN_RCS = b"#!/bin/sh\nmount -a\n"
GOLDEN_BUSYBOX = b"\x7fELF\x01\x01\x01\x00BusyBox v1.12.1\x00"
GOLDEN_BACKDOOR = b"\x7fELF\x01\x01\x01\x00bind shell on 8888\x00"
GOLDEN_PS_HEADER = "  PID USER       VSZ STAT COMMAND\n"
GOLDEN_PS_ROWS = (
    "    1 root      1500 S    init\n"
    "    2 root         0 SW   [kthreadd]\n"
    "   78 root      1200 S    /sbin/syslogd -n\n"
)
GOLDEN_MANIFEST = """\
manifest_version: 1
case_id: golden
created_at: 2021-03-01T00:00:00Z
firmware: compromised/firmware
pcap: compromised/capture.pcap
processes: compromised/processes.txt
baseline_firmware: baseline/firmware
baseline_pcap: baseline/capture.pcap
baseline_processes: baseline/processes.txt
"""
CLIENT, DEVICE = '192.168.1.10', '192.168.1.20'


@pytest.fixture(scope='module')
def golden_report(tmp_path_factory) -> Report:
    root = tmp_path_factory.mktemp('golden')
    symlinks = {'/bin/sh': 'busybox'}

    write_tree(root / 'baseline' / 'firmware', {
        '/bin/busybox': GOLDEN_BUSYBOX,
        '/etc_ro/rcS': GOLDEN_RCS,
    }, symlinks)
    write_tree(root / 'compromised' / 'firmware', {
        '/bin/busybox': GOLDEN_BUSYBOX,
        '/etc_ro/rcS': GOLDEN_RCS + b"iSmartAlarmShell &\n",
        '/sbin/iSmartAlarmShell': GOLDEN_BACKDOOR,
    }, symlinks)

    arp = build_arp_frame(CLIENT, DEVICE)
    web = build_tcp_frame(CLIENT, DEVICE, 40000, 80)
    dns = build_udp_frame(CLIENT, DEVICE, 40001, 53)
    shell = build_tcp_frame('10.0.0.66', DEVICE, 40002, 8888)
    (root / 'baseline' / 'capture.pcap').write_bytes(capture_bytes([web, dns, web, dns, arp]))
    (root / 'compromised' / 'capture.pcap').write_bytes(capture_bytes([shell, dns, shell, web, shell, arp]))

    (root / 'baseline' / 'processes.txt').write_text(GOLDEN_PS_HEADER + GOLDEN_PS_ROWS)
    (root / 'compromised' / 'processes.txt').write_text(
        GOLDEN_PS_HEADER + GOLDEN_PS_ROWS + "  131 root      1200 S    /sbin/iSmartAlarmShell\n"
    )
    (root / 'case.yaml').write_text(GOLDEN_MANIFEST)

    report = analyze_case(root / 'case.yaml', configuration=3, workers=2).report
    return report.model_copy(update={'tool_version': 'golden'})


@pytest.mark.golden
@pytest.mark.parametrize('suffix', ['json', 'txt'])
def test_report_matches_golden(golden_report, suffix, request):
    produced = render_json(golden_report) if suffix == 'json' else render_text(golden_report).encode('utf-8')
    golden = GOLDEN_DIR / f"golden.report.{suffix}"
    if request.config.getoption('--update-golden'):
        golden.write_bytes(produced)
    assert golden.exists(), f"{golden} is missing; run pytest --update-golden and review the result"
    assert produced == golden.read_bytes()


@pytest.mark.golden
def test_golden_json_parses_back(golden_report):
    assert parse_json((GOLDEN_DIR / 'golden.report.json').read_bytes()) == golden_report
