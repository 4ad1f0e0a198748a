"""
Case manifest loading.

A manifest is a flat key/value file, YAML by default or TOML when the file
name ends in ``.toml``, mapping each evidence role to a path::

    manifest_version: 1
    case_id: scenario-1337
    created_at: 2021-03-01T00:00:00Z
    firmware: compromised/firmware
    pcap: compromised/capture.pcap
    processes: compromised/processes.txt
    baseline_firmware: baseline/firmware
    baseline_pcap: baseline/capture.pcap
    baseline_processes: baseline/processes.txt

Relative evidence paths resolve against the manifest's directory; paths
given as command-line overrides resolve against the working directory.
"""

import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from pydantic import ValidationError

from evidence_schema import (
    CaseBundle,
    EvidenceRole,
    ManifestError,
    SourceDescriptor,
    validate_bundle,
)

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1

# manifest key / CLI override name -> bundle role
ROLE_KEYS = {
    'firmware': EvidenceRole.FIRMWARE,
    'pcap': EvidenceRole.CAPTURE,
    'processes': EvidenceRole.PROCESSES,
    'baseline_firmware': EvidenceRole.BASELINE_FIRMWARE,
    'baseline_pcap': EvidenceRole.BASELINE_CAPTURE,
    'baseline_processes': EvidenceRole.BASELINE_PROCESSES,
}
METADATA_KEYS = ('manifest_version', 'case_id', 'created_at')


def read_manifest_file(path: Path) -> Dict[str, Any]:
    """Parse a manifest file into a plain mapping."""
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")

    try:
        text = path.read_text(encoding='utf-8')
        if path.suffix.lower() == '.toml':
            data = tomllib.loads(text)
        else:
            data = yaml.safe_load(text)
    except (OSError, UnicodeDecodeError, tomllib.TOMLDecodeError, yaml.YAMLError) as e:
        raise ManifestError(f"cannot parse manifest {path}: {e}")

    if not isinstance(data, dict):
        raise ManifestError(f"manifest {path} must be a key/value mapping")
    return data


def _parse_created_at(value: Any, origin: str) -> datetime:
    if isinstance(value, datetime):
        created_at = value
    elif isinstance(value, str):
        try:
            created_at = datetime.fromisoformat(value.replace('Z', '+00:00'))
        except ValueError:
            raise ManifestError(f"{origin}: created_at {value!r} is not an ISO-8601 timestamp")
    else:
        raise ManifestError(f"{origin}: created_at must be an ISO-8601 timestamp")

    if created_at.tzinfo is None:
        created_at = created_at.replace(tzinfo=timezone.utc)
    return created_at.astimezone(timezone.utc)


def _descriptor(role: EvidenceRole, raw_path: Any, base_dir: Path, origin: str) -> SourceDescriptor:
    if not isinstance(raw_path, str) or not raw_path.strip():
        raise ManifestError(f"{origin}: evidence path for '{role.value}' must be a non-empty string")

    path = Path(raw_path)
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise ManifestError(f"{origin}: evidence path for '{role.value}' does not exist: {raw_path}")
    return SourceDescriptor(role=role, path=path, display_path=raw_path)


def build_bundle(
    data: Mapping[str, Any],
    base_dir: Path,
    origin: str = 'manifest',
    overrides: Optional[Mapping[str, Optional[str]]] = None,
) -> CaseBundle:
    """Turn manifest data plus command-line overrides into a validated case bundle."""
    unknown = sorted(set(data) - set(ROLE_KEYS) - set(METADATA_KEYS))
    if unknown:
        raise ManifestError(f"{origin}: unknown manifest key(s): {', '.join(unknown)}")

    version = data.get('manifest_version')
    if version != MANIFEST_VERSION:
        raise ManifestError(
            f"{origin}: manifest_version must be {MANIFEST_VERSION}, got {version!r}"
        )

    case_id = str(data.get('case_id', 'case')).strip()
    created_at = (
        _parse_created_at(data['created_at'], origin)
        if data.get('created_at') is not None
        else datetime.now(timezone.utc).replace(microsecond=0)
    )

    descriptors: Dict[str, SourceDescriptor] = {}
    for key, role in ROLE_KEYS.items():
        if data.get(key) is not None:
            descriptors[role.value] = _descriptor(role, data[key], base_dir, origin)

    for key, raw_path in (overrides or {}).items():
        if raw_path is None:
            continue
        if key not in ROLE_KEYS:
            raise ManifestError(f"unknown evidence override '--{key.replace('_', '-')}'")
        role = ROLE_KEYS[key]
        flag = f"--{key.replace('_', '-')}"
        descriptors[role.value] = _descriptor(role, raw_path, Path.cwd(), flag)
        logger.info(f"Override {flag} replaces manifest entry for {role.value}")

    try:
        bundle = CaseBundle(case_id=case_id, created_at=created_at, **descriptors)
    except ValidationError as e:
        raise ManifestError(f"{origin}: {e}")

    findings = validate_bundle(bundle)
    if findings:
        details = '; '.join(f"{finding.field}: {finding.message}" for finding in findings)
        raise ManifestError(f"{origin}: invalid case bundle ({details})")

    logger.info(
        f"Loaded case {bundle.case_id!r} with {len(bundle.sources())} evidence source(s)"
        f"{' including baselines' if bundle.has_baseline else ''}"
    )
    return bundle


def load_manifest(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Optional[str]]] = None,
) -> CaseBundle:
    """Load a case bundle from a manifest file, from overrides alone, or from both."""
    if path is None:
        if not overrides or all(value is None for value in overrides.values()):
            raise ManifestError("no manifest given (--manifest) and no evidence override flags")
        return build_bundle({'manifest_version': MANIFEST_VERSION}, Path.cwd(), 'command line', overrides)

    path = Path(path)
    data = read_manifest_file(path)
    return build_bundle(data, path.parent, str(path), overrides)


def write_manifest(
    path: Path,
    case_id: str,
    created_at: datetime,
    sources: Mapping[str, str],
) -> Path:
    """Write a YAML manifest; ``sources`` maps manifest keys to paths."""
    unknown = sorted(set(sources) - set(ROLE_KEYS))
    if unknown:
        raise ManifestError(f"unknown manifest key(s): {', '.join(unknown)}")

    data: Dict[str, Any] = {
        'manifest_version': MANIFEST_VERSION,
        'case_id': case_id,
        'created_at': created_at.astimezone(timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ'),
    }
    for key in ROLE_KEYS:
        if key in sources:
            data[key] = sources[key]

    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding='utf-8')
    return path
