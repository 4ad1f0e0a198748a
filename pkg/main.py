#!/usr/bin/env python3
"""
Stitcher - IoT forensic evidence pipeline.

Ingests firmware, network capture and process-list evidence from an IoT
device, classifies each source, correlates the artifacts across sources
(and against a known-good baseline when one is supplied), and writes a
deterministic investigation report.

    python main.py analyze --manifest case.yaml --config 3 --out ./out
    python main.py gen-scenario --seed 1337 --out ./scenario
    python main.py classify firmware_image
"""

import argparse
import asyncio
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

# Add the current directory to Python path for imports
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from case_manifest import ROLE_KEYS, load_manifest
from config import Settings
from evidence_schema import (
    DEFAULT_HASH_ALGORITHM,
    HASH_DIGEST_LENGTHS,
    CaseArtifacts,
    CaseBundle,
    EvidenceKind,
    IngestionError,
    ManifestError,
    ReportConfigurationError,
    classify_evidence,
)
from ingest.firmware_ingestor import FirmwareIngestor, StringsConfig
from ingest.pcap_ingestor import PcapIngestor
from ingest.process_ingestor import ProcessIngestor
from logger_config import setup_logging
from scenario_generator import CASE_MANIFEST, GROUND_TRUTH, ScenarioError, ScenarioSpec, generate
from utils.artifact_exporter import artifact_dir, export_artifacts
from utils.correlator import EvidenceCorrelator
from utils.file_utils import atomic_write_bytes, atomic_write_text
from utils.report_builder import CONFIGURATIONS, Report, build_report
from utils.report_formatter import ReportFormatter
from version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INGESTION = 2
EXIT_INTERNAL = 3


@dataclass
class AnalysisResult:
    report: Report
    report_paths: List[Path] = field(default_factory=list)
    artifact_paths: List[Path] = field(default_factory=list)


class StitcherPipeline:
    """Ingest, correlate and report one case."""

    def __init__(
        self,
        hash_algorithm: str = DEFAULT_HASH_ALGORITHM,
        strings_config: Optional[StringsConfig] = None,
        workers: int = 4,
    ):
        if hash_algorithm not in HASH_DIGEST_LENGTHS:
            raise ManifestError(
                f"--hash must be one of {', '.join(sorted(HASH_DIGEST_LENGTHS))}, got {hash_algorithm!r}"
            )
        self.hash_algorithm = hash_algorithm
        self.workers = max(1, workers)
        self.ingestors = {
            EvidenceKind.FIRMWARE_IMAGE: FirmwareIngestor(hash_algorithm, strings_config, self.workers),
            EvidenceKind.NETWORK_CAPTURE: PcapIngestor(),
            EvidenceKind.SYSTEM_PROCESSES: ProcessIngestor(),
        }
        self.correlator = EvidenceCorrelator()
        self.formatter = ReportFormatter()
        self.last_artifacts: Optional[CaseArtifacts] = None

    async def ingest_case(self, bundle: CaseBundle) -> CaseArtifacts:
        """Ingest every source of the bundle concurrently."""
        descriptors = bundle.sources()
        logger.info(f"Ingesting {len(descriptors)} evidence source(s) for case {bundle.case_id!r}")

        with ThreadPoolExecutor(max_workers=min(len(descriptors), self.workers) or 1) as pool:
            tasks = [
                asyncio.create_task(self.ingestors[descriptor.kind].ingest_async(descriptor.path, pool))
                for descriptor in descriptors
            ]
            results = await asyncio.gather(*tasks, return_exceptions=True)

        artifacts: Dict[str, object] = {}
        for descriptor, result in zip(descriptors, results):
            if isinstance(result, BaseException):
                logger.error(f"{descriptor.role.value}: ingestion of {descriptor.display_path} failed: {result}")
                raise result
            artifacts[descriptor.role.value] = result
        return CaseArtifacts(**artifacts)

    def analyze(self, bundle: CaseBundle, configuration: int = 3) -> Report:
        """Run the configured stages and return the report."""
        if configuration not in CONFIGURATIONS:
            raise ReportConfigurationError(f"--config must be one of 1, 2, 3, got {configuration!r}")

        artifacts = asyncio.run(self.ingest_case(bundle))
        self.last_artifacts = artifacts

        correlation = None
        if configuration in (2, 3):
            correlation = self.correlator.run_correlation(artifacts)
        return build_report(bundle, artifacts, correlation, configuration, self.hash_algorithm)

    def write_reports(self, report: Report, out_dir: Path) -> List[Path]:
        """Write <case_id>.report.json and <case_id>.report.txt atomically."""
        out_dir = Path(out_dir)
        json_path = atomic_write_bytes(out_dir / f"{report.case_id}.report.json", self.formatter.render_json(report))
        text_path = atomic_write_text(out_dir / f"{report.case_id}.report.txt", self.formatter.render_text(report))
        logger.info(f"Reports written to {json_path} and {text_path}")
        return [json_path, text_path]


def analyze_case(
    manifest: Optional[Path] = None,
    overrides: Optional[Mapping[str, Optional[str]]] = None,
    configuration: int = 3,
    out_dir: Optional[Path] = None,
    settings: Optional[Settings] = None,
    hash_algorithm: Optional[str] = None,
    strings_min_length: Optional[int] = None,
    workers: Optional[int] = None,
    export: bool = False,
) -> AnalysisResult:
    """Library entry point behind ``analyze``; writes files only when out_dir is given."""
    settings = settings or Settings()
    if strings_min_length is not None and strings_min_length < 1:
        raise ManifestError(f"--strings-min-len must be at least 1, got {strings_min_length}")
    if workers is not None and workers < 1:
        raise ManifestError(f"--workers must be at least 1, got {workers}")

    bundle = load_manifest(manifest, overrides)
    pipeline = StitcherPipeline(
        hash_algorithm=hash_algorithm or settings.hash_algorithm,
        strings_config=StringsConfig(
            min_length=strings_min_length or settings.strings_min_length,
            max_strings_per_file=settings.max_strings_per_file,
        ),
        workers=workers or settings.workers,
    )
    report = pipeline.analyze(bundle, configuration)

    result = AnalysisResult(report=report)
    if out_dir is not None:
        result.report_paths = pipeline.write_reports(report, out_dir)
        if export:
            result.artifact_paths = export_artifacts(
                pipeline.last_artifacts, artifact_dir(out_dir, report.case_id)
            )
    return result


class StitcherArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = StitcherArgumentParser(
        prog='stitcher',
        description='IoT forensic evidence classification, correlation and reporting.',
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    parser.add_argument('--log-level', default=None, help='Console log level (default: STITCHER_LOG_LEVEL or INFO)')
    sub = parser.add_subparsers(dest='cmd', required=True)

    analyze = sub.add_parser('analyze', help='Process, correlate and report one case.')
    analyze.add_argument('--manifest', type=Path, help='Case manifest (YAML, or TOML by extension).')
    analyze.add_argument(
        '--config', type=int, default=3, choices=sorted(CONFIGURATIONS),
        help='1 = processing only, 2 = adds correlation, 3 = adds classification and narrative (default: 3)',
    )
    analyze.add_argument('--out', type=Path, default=Path('.'), help='Directory for report files (default: .)')
    for key in ROLE_KEYS:
        analyze.add_argument(
            f"--{key.replace('_', '-')}", dest=key, default=None,
            help=f"Evidence path for {key.replace('_', ' ')}, overriding the manifest",
        )
    analyze.add_argument('--hash', choices=sorted(HASH_DIGEST_LENGTHS), default=None,
                         help='File digest algorithm (default: STITCHER_HASH or sha256)')
    analyze.add_argument('--strings-min-len', type=int, default=None,
                         help='Minimum printable string length (default: STITCHER_STRINGS_MIN_LEN or 4)')
    analyze.add_argument('--workers', type=int, default=None, help='Parallel workers (default: STITCHER_WORKERS or 4)')
    analyze.add_argument('--show', action='store_true', help='Also print the text report to standard error')
    analyze.add_argument('--no-color', action='store_true', help='Disable styling of --show output')
    analyze.add_argument('--export-artifacts', action='store_true',
                         help='Write the processed artifact lists as text files beside the report')

    scenario = sub.add_parser('gen-scenario', help='Generate the synthetic backdoored-device case.')
    scenario.add_argument('--seed', type=int, default=ScenarioSpec().seed, help='Random seed')
    scenario.add_argument('--out', type=Path, required=True, help='Output directory')
    scenario.add_argument('--backdoor-name', default=ScenarioSpec().backdoor_name)
    scenario.add_argument('--c2-port', type=int, default=ScenarioSpec().c2_port)
    scenario.add_argument('--benign-files', type=int, default=ScenarioSpec().benign_file_count)
    scenario.add_argument('--session-packets', type=int, default=ScenarioSpec().session_packet_count)
    scenario.add_argument('--case-id', default=ScenarioSpec().case_id)

    classify = sub.add_parser('classify', help='Print the ISO classification of an evidence kind.')
    classify.add_argument('kind', nargs='?', choices=[kind.value for kind in EvidenceKind],
                          help='Evidence kind (default: all kinds)')
    return parser


def run_analyze(args: argparse.Namespace, settings: Settings) -> int:
    overrides = {key: getattr(args, key) for key in ROLE_KEYS}
    result = analyze_case(
        manifest=args.manifest,
        overrides=overrides,
        configuration=args.config,
        out_dir=args.out,
        settings=settings,
        hash_algorithm=args.hash,
        strings_min_length=args.strings_min_len,
        workers=args.workers,
        export=args.export_artifacts,
    )
    for path in result.report_paths:
        print(path)
    if result.artifact_paths:
        print(artifact_dir(args.out, result.report.case_id))

    if args.show:
        styled = not (args.no_color or settings.no_color)
        sys.stderr.write(ReportFormatter(styled=styled).render_text(result.report))
    return EXIT_OK


def run_gen_scenario(args: argparse.Namespace) -> int:
    try:
        spec = ScenarioSpec(
            seed=args.seed,
            backdoor_name=args.backdoor_name,
            c2_port=args.c2_port,
            benign_file_count=args.benign_files,
            session_packet_count=args.session_packets,
            case_id=args.case_id,
        )
    except ValueError as e:
        raise ScenarioError(f"invalid scenario options: {e}")
    generate(spec, args.out)
    print(args.out / CASE_MANIFEST)
    print(args.out / GROUND_TRUTH)
    return EXIT_OK


def run_classify(args: argparse.Namespace) -> int:
    kinds = [EvidenceKind(args.kind)] if args.kind else list(EvidenceKind)
    for kind in kinds:
        label = classify_evidence(kind)
        print(kind.value)
        for iso in label.iso27050_codes:
            print(f"  ISO 27050-1 {iso.code} {iso.title}")
        print(f"  ISO 30141   {label.iso30141_code.code} {label.iso30141_code.title}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command-line entry point; returns the process exit code."""
    parser = build_arg_parser()
    args = parser.parse_args(argv)

    try:
        settings = Settings.from_env()
    except ManifestError as e:
        print(f"stitcher: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        setup_logging(args.log_level or settings.log_level, log_dir=settings.log_dir)
    except ValueError as e:
        print(f"stitcher: error: --log-level/STITCHER_LOG_LEVEL: {e}", file=sys.stderr)
        return EXIT_USAGE
    logger.debug(f"Stitcher {__version__}: {args.cmd}")

    try:
        if args.cmd == 'analyze':
            return run_analyze(args, settings)
        if args.cmd == 'gen-scenario':
            return run_gen_scenario(args)
        return run_classify(args)
    except (ManifestError, ReportConfigurationError, ScenarioError) as e:
        logger.error(str(e))
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except IngestionError as e:
        logger.error(f"Evidence parse failure: {e}")
        return EXIT_INGESTION
    except KeyboardInterrupt:
        logger.info("Analysis cancelled by user")
        return EXIT_INTERNAL
    except Exception as e:
        logger.exception(f"Internal error: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
