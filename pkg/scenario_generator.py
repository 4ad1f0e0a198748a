"""
Synthetic evidence for a backdoored IoT alarm hub.

Writes a clean ("baseline") and a compromised copy of three evidence sources:

- a firmware tree. The compromised copy adds a backdoor binary and appends
  a launch line to a boot script.
- a ps listing. The compromised copy adds the backdoor process.
- a classic pcap. The compromised copy adds a session to the backdoor's
  port on top of the same background traffic.

The generator also writes ``case.yaml`` for ``analyze`` and ``ground_truth.yaml``
listing exactly what was injected. Output is a pure function of the ScenarioSpec.
"""

import logging
import os
import posixpath
import random
import re
import shutil
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Tuple

import yaml
from pydantic import Field, field_validator, model_validator

from case_manifest import write_manifest
from evidence_schema import FrozenModel, StitcherError
from utils.pcap_writer import PcapWriter, build_arp_frame, build_tcp_frame, build_udp_frame

logger = logging.getLogger(__name__)

BASELINE_DIR = 'baseline'
COMPROMISED_DIR = 'compromised'
CASE_MANIFEST = 'case.yaml'
GROUND_TRUTH = 'ground_truth.yaml'

DEVICE_IP = '192.168.1.50'
DEVICE_MAC = '02:1a:11:00:00:50'
GATEWAY_IP = '192.168.1.1'
GATEWAY_MAC = '02:1a:11:00:00:01'
ATTACKER_IP = '192.168.1.23'
ATTACKER_MAC = '02:1a:11:00:00:23'

# port -> (protocol, server address)
BACKGROUND_SERVICES = {
    53: ('udp', GATEWAY_IP),
    80: ('tcp', '93.184.216.34'),
    443: ('tcp', '52.28.7.101'),
}

BOOT_SCRIPT_LINES = (
    '#!/bin/sh',
    'mount -a',
    'mkdir -p /var/run',
    'mdev -s',
    'ifconfig lo 127.0.0.1 up',
)

# numbers embedded in longer digit runs exercise the port matcher's precision
FILLER_SNIPPETS = (
    'alarm zone armed',
    'door sensor open',
    'motion detected in hallway',
    'keypad code accepted',
    'siren test complete',
    'cloud sync enabled',
    'camera stream paused',
    'http_port=8080',
    'https_alt=4433',
    'dns_cache=5300',
    'retry_window=18888',
    'panel_rev=880',
    'tls_buffer=4430',
)
FILLER_WORDS = ('libcore', 'libnet', 'sensor', 'siren', 'keypad', 'camera', 'zone', 'door', 'motion', 'panel')
FILLER_DIRS = ('/usr/lib', '/usr/share/alarm', '/etc_ro/web', '/lib')
FILLER_EXTENSIONS = ('.so', '.bin', '.dat', '.cfg')

KERNEL_THREADS = ((2, 'kthreadd'), (3, 'ksoftirqd/0'), (5, 'kworker/0:1'))
BACKDOOR_PID = 131
PS_HEADER = '  PID USER       VSZ STAT COMMAND'

# every byte outside tab and 0x20-0x7e, so random filler never forms a string
_NON_PRINTABLE = bytes(b for b in range(256) if b != 0x09 and not 0x20 <= b <= 0x7e)
_DIGIT_RUN = re.compile(r'[0-9]+')


class ScenarioError(StitcherError):
    """Scenario output cannot be written."""


class ScenarioSpec(FrozenModel):
    """Parameters of the generated case; defaults reproduce the reference incident."""

    seed: int = 1337
    backdoor_name: str = Field(default='iSmartAlarmShell', min_length=1)
    backdoor_dir: str = '/sbin'
    persistence_file: str = '/etc_ro/rcS'
    c2_port: int = Field(default=8888, ge=1, le=65535)
    benign_file_count: int = Field(default=40, gt=0)
    session_packet_count: int = Field(default=200, gt=0)
    case_id: str = Field(default='scenario', min_length=1)
    created_at: datetime = datetime(2021, 3, 1, tzinfo=timezone.utc)

    @field_validator('backdoor_name')
    @classmethod
    def _check_name(cls, name: str) -> str:
        if '/' in name or name.strip() != name:
            raise ValueError(f"backdoor_name must be a bare file name, got {name!r}")
        return name

    @field_validator('backdoor_dir', 'persistence_file')
    @classmethod
    def _check_device_path(cls, path: str) -> str:
        if not path.startswith('/'):
            raise ValueError(f"'{path}' must be an absolute device path")
        return posixpath.normpath(path)

    @model_validator(mode='after')
    def _check_layout(self) -> 'ScenarioSpec':
        if self.persistence_file in ('/', self.backdoor_path):
            raise ValueError("persistence_file must be a file distinct from the backdoor")
        return self

    @property
    def backdoor_path(self) -> str:
        return posixpath.join(self.backdoor_dir, self.backdoor_name)


class GroundTruthManifest(FrozenModel):
    """What the compromised evidence adds to the baseline."""

    seed: int
    case_id: str
    files_added: Tuple[str, ...]
    files_modified: Tuple[str, ...]
    processes_added: Tuple[str, ...]
    ports_added: Tuple[int, ...]
    c2_port: int
    case_manifest: str = CASE_MANIFEST


class _FirmwareTree:
    """Device path -> content, plus symlinks and empty directories."""

    def __init__(self):
        self.files: Dict[str, bytes] = {}
        self.symlinks: Dict[str, str] = {}
        self.directories: List[str] = []

    def copy(self) -> '_FirmwareTree':
        tree = _FirmwareTree()
        tree.files = dict(self.files)
        tree.symlinks = dict(self.symlinks)
        tree.directories = list(self.directories)
        return tree

    def write(self, root: Path) -> None:
        root.mkdir(parents=True, exist_ok=True)
        for directory in self.directories:
            (root / directory.lstrip('/')).mkdir(parents=True, exist_ok=True)
        for path in sorted(self.files):
            target = root / path.lstrip('/')
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(self.files[path])
        for path in sorted(self.symlinks):
            link = root / path.lstrip('/')
            link.parent.mkdir(parents=True, exist_ok=True)
            os.symlink(self.symlinks[path], link)


class ScenarioGenerator:
    """Builds baseline and compromised evidence for one spec."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.rng = random.Random(spec.seed)
        self.background_ports = sorted(port for port in BACKGROUND_SERVICES if port != spec.c2_port)
        self.process_names = ['init', 'syslogd', 'alarmd', spec.backdoor_name] + [name for _, name in KERNEL_THREADS]

    def _noise(self, low: int, high: int) -> bytes:
        return bytes(self.rng.choice(_NON_PRINTABLE) for _ in range(self.rng.randint(low, high)))

    def _blob(self, strings: List[str]) -> bytes:
        """Random non-printable bytes with each string embedded between NULs."""
        chunks = [self._noise(16, 96)]
        for string in strings:
            chunks.append(b'\x00' + string.encode('ascii') + b'\x00')
            chunks.append(self._noise(16, 96))
        return b''.join(chunks)

    def _is_quiet(self, text: str) -> bool:
        """True when text names no process and carries no captured port as a digit run."""
        ports = {str(port) for port in self.background_ports + [self.spec.c2_port]}
        if ports & set(_DIGIT_RUN.findall(text)):
            return False
        return not any(name in text for name in self.process_names)

    def build_baseline_tree(self) -> _FirmwareTree:
        spec = self.spec
        tree = _FirmwareTree()
        tree.directories = ['/dev', '/var/run', '/tmp']
        tree.files['/bin/busybox'] = self._blob(['BusyBox multi-call binary', 'applet not found'])
        tree.symlinks['/bin/sh'] = 'busybox'
        tree.files['/sbin/init'] = self._blob(['system bootstrap', 'respawn table'])
        tree.files['/sbin/syslogd'] = self._blob(['log daemon', 'remote logging disabled'])
        tree.files['/etc_ro/alarm.conf'] = b'daemon=alarmd\nsiren=enabled\n'
        tree.files['/etc_ro/passwd'] = b'admin:x:0:0:admin:/:/bin/sh\n'
        tree.files[spec.persistence_file] = ('\n'.join(BOOT_SCRIPT_LINES) + '\n').encode('ascii')

        snippets = [snippet for snippet in FILLER_SNIPPETS if self._is_quiet(snippet)]
        reserved = set(tree.files) | set(tree.symlinks) | {spec.backdoor_path}
        added = 0
        index = 0
        while added < spec.benign_file_count:
            word = FILLER_WORDS[index % len(FILLER_WORDS)]
            path = posixpath.join(
                self.rng.choice(FILLER_DIRS), f"{word}_{index}{self.rng.choice(FILLER_EXTENSIONS)}"
            )
            index += 1
            if path in reserved:
                continue
            reserved.add(path)
            picked = self.rng.sample(snippets, k=min(len(snippets), self.rng.randint(0, 2)))
            tree.files[path] = self._blob(picked)
            added += 1
        return tree

    def build_compromised_tree(self, baseline: _FirmwareTree) -> _FirmwareTree:
        spec = self.spec
        tree = baseline.copy()
        tree.files[spec.backdoor_path] = self._blob([
            f"bind shell on {spec.c2_port}",
            '/bin/sh',
            'socket bind failed',
            'waiting for connection',
        ])
        tree.files[spec.persistence_file] = tree.files[spec.persistence_file] + f"{spec.backdoor_name} &\n".encode('ascii')
        return tree

    def process_listing(self, compromised: bool) -> str:
        rows = [(1, '1528', 'S', 'init')]
        rows.extend((pid, '0', 'SW', f"[{name}]") for pid, name in KERNEL_THREADS)
        rows.append((78, '1016', 'S', '/sbin/syslogd -O /var/log/messages'))
        rows.append((102, '2124', 'S', 'alarmd -c /etc_ro/alarm.conf'))
        if compromised:
            rows.append((BACKDOOR_PID, '1200', 'S', self.spec.backdoor_path))
        lines = [PS_HEADER] + [f"{pid:>5} admin     {vsz:>4} {stat:<4} {command}" for pid, vsz, stat, command in rows]
        return '\n'.join(lines) + '\n'

    def _background_events(self) -> List[Tuple[float, bytes]]:
        events = []
        for port in self.background_ports:
            protocol, server = BACKGROUND_SERVICES[port]
            count = min(self.rng.randint(20, 60), self.spec.session_packet_count - 1)
            for i in range(count):
                src_port = self.rng.randint(49152, 65535)
                if protocol == 'udp':
                    frame = build_udp_frame(
                        DEVICE_IP, server, src_port, port, payload=self._noise(12, 48),
                        src_mac=DEVICE_MAC, dst_mac=GATEWAY_MAC, identification=i,
                    )
                else:
                    frame = build_tcp_frame(
                        DEVICE_IP, server, src_port, port, payload=self._noise(0, 64),
                        src_mac=DEVICE_MAC, dst_mac=GATEWAY_MAC, seq=i, identification=i,
                    )
                events.append((self.rng.uniform(0, 600), frame))
        for _ in range(4):
            events.append((self.rng.uniform(0, 600), build_arp_frame(GATEWAY_IP, DEVICE_IP, sender_mac=GATEWAY_MAC)))
        return events

    def _session_events(self) -> List[Tuple[float, bytes]]:
        src_port = self.rng.randint(49152, 65535)
        start = self.rng.uniform(100, 300)
        events = []
        for i in range(self.spec.session_packet_count):
            frame = build_tcp_frame(
                ATTACKER_IP, DEVICE_IP, src_port, self.spec.c2_port, payload=self._noise(8, 96),
                src_mac=ATTACKER_MAC, dst_mac=DEVICE_MAC, seq=i * 100, identification=1000 + i,
            )
            events.append((start + i * 0.25, frame))
        return events

    def _capture(self, events: List[Tuple[float, bytes]]) -> bytes:
        writer = PcapWriter()
        epoch = int(self.spec.created_at.timestamp())
        for offset, frame in sorted(events, key=lambda event: event[0]):
            micros = round(offset * 1_000_000)
            writer.add(frame, ts_seconds=epoch + micros // 1_000_000, ts_fraction=micros % 1_000_000)
        return writer.to_bytes()

    def generate(self, out_dir: Path) -> GroundTruthManifest:
        spec = self.spec
        out_dir = Path(out_dir)
        _prepare_output(out_dir)

        baseline_tree = self.build_baseline_tree()
        compromised_tree = self.build_compromised_tree(baseline_tree)
        background = self._background_events()
        session = self._session_events()

        try:
            for name, tree, compromised, events in (
                (BASELINE_DIR, baseline_tree, False, background),
                (COMPROMISED_DIR, compromised_tree, True, background + session),
            ):
                root = out_dir / name
                tree.write(root / 'firmware')
                (root / 'processes.txt').write_text(self.process_listing(compromised), encoding='utf-8')
                (root / 'capture.pcap').write_bytes(self._capture(events))

            write_manifest(
                out_dir / CASE_MANIFEST,
                case_id=spec.case_id,
                created_at=spec.created_at,
                sources={
                    'firmware': f"{COMPROMISED_DIR}/firmware",
                    'pcap': f"{COMPROMISED_DIR}/capture.pcap",
                    'processes': f"{COMPROMISED_DIR}/processes.txt",
                    'baseline_firmware': f"{BASELINE_DIR}/firmware",
                    'baseline_pcap': f"{BASELINE_DIR}/capture.pcap",
                    'baseline_processes': f"{BASELINE_DIR}/processes.txt",
                },
            )

            truth = GroundTruthManifest(
                seed=spec.seed,
                case_id=spec.case_id,
                files_added=(spec.backdoor_path,),
                files_modified=(spec.persistence_file,),
                processes_added=(spec.backdoor_name,),
                ports_added=(spec.c2_port,),
                c2_port=spec.c2_port,
            )
            (out_dir / GROUND_TRUTH).write_text(
                yaml.safe_dump(truth.model_dump(mode='json'), sort_keys=False), encoding='utf-8'
            )
        except OSError as e:
            raise ScenarioError(f"cannot write scenario to {out_dir}: {e}")

        logger.info(
            f"Scenario seed {spec.seed} written to {out_dir}: "
            f"{len(compromised_tree.files)} files, backdoor {spec.backdoor_path} on port {spec.c2_port}"
        )
        return truth


def _prepare_output(out_dir: Path) -> None:
    """Create out_dir, replacing evidence from an earlier generator run only."""
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ScenarioError(f"cannot create output directory {out_dir}: {e}")

    owned = [out_dir / BASELINE_DIR, out_dir / COMPROMISED_DIR]
    existing = [path for path in owned if path.exists()]
    if not existing:
        return
    if not (out_dir / GROUND_TRUTH).is_file():
        raise ScenarioError(
            f"{existing[0]} exists and was not written by gen-scenario; choose an empty --out directory"
        )
    for path in existing:
        logger.info(f"Replacing previous scenario output {path}")
        shutil.rmtree(path)


def generate(spec: ScenarioSpec, out_dir: Path) -> GroundTruthManifest:
    """Write the scenario evidence for spec under out_dir."""
    return ScenarioGenerator(spec).generate(out_dir)


def load_ground_truth(path: Path) -> GroundTruthManifest:
    data = yaml.safe_load(Path(path).read_text(encoding='utf-8'))
    return GroundTruthManifest.model_validate(data)
