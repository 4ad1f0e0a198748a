"""
Classic libpcap decoding down to transport-layer destination ports.

Layout: global header | record header | packet data | record header | ...
Endianness and timestamp resolution are fixed by the magic number.
"""

import ipaddress
import logging
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

from evidence_schema import (
    EvidenceKind,
    NetworkArtifacts,
    PcapFormatError,
    PcapNgUnsupportedError,
)
from ingest.base_ingestor import BaseIngestor

logger = logging.getLogger(__name__)

PCAP_GLOBAL_HEADER_LEN = 24
PCAP_RECORD_HEADER_LEN = 16
PCAPNG_MAGIC = b'\x0a\x0d\x0d\x0a'

# on-disk magic bytes -> (byte order, timestamp resolution)
PCAP_MAGICS = {
    b'\xa1\xb2\xc3\xd4': ('big', 'micro'),
    b'\xd4\xc3\xb2\xa1': ('little', 'micro'),
    b'\xa1\xb2\x3c\x4d': ('big', 'nano'),
    b'\x4d\x3c\xb2\xa1': ('little', 'nano'),
}

LINKTYPE_ETHERNET = 1
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
VLAN_ETHERTYPES = (0x8100, 0x88A8)
TRANSPORT_PROTOCOLS = {6: 'TCP', 17: 'UDP'}
TRANSPORT_MIN_LEN = {'TCP': 20, 'UDP': 8}


class PacketDecodeError(ValueError):
    """A record's bytes are shorter than the headers they claim."""


@dataclass(frozen=True)
class PcapFileHeader:
    magic: int
    version: Tuple[int, int]
    snaplen: int
    linktype: int
    byte_order: str
    ts_resolution: str
    thiszone: int = 0
    sigfigs: int = 0

    @property
    def struct_prefix(self) -> str:
        return '<' if self.byte_order == 'little' else '>'


@dataclass(frozen=True)
class PacketRecord:
    index: int
    ts_seconds: int
    ts_fraction: int
    captured_len: int
    original_len: int
    payload: bytes

    def is_consistent(self, snaplen: int) -> bool:
        """captured_len within original_len and, when the header sets one, the snaplen."""
        if self.captured_len > self.original_len:
            return False
        return snaplen == 0 or self.captured_len <= snaplen


@dataclass(frozen=True)
class EthernetHeader:
    dst_mac: str
    src_mac: str
    ethertype: int
    vlan_ids: Tuple[int, ...] = ()


@dataclass(frozen=True)
class NetworkHeader:
    version: int
    src: str
    dst: str
    protocol: int
    header_length: int
    payload_length: int
    ttl: int
    identification: int = 0
    fragment_offset: int = 0
    more_fragments: bool = False


@dataclass(frozen=True)
class TransportHeader:
    kind: str
    src_port: int
    dst_port: int


@dataclass(frozen=True)
class DecodedPacket:
    link: EthernetHeader
    net: Optional[NetworkHeader] = None
    transport: Optional[TransportHeader] = None


def parse_file_header(data: bytes, source: Optional[Path] = None) -> PcapFileHeader:
    """Decode the 24-byte global header."""
    if data[:4] == PCAPNG_MAGIC:
        raise PcapNgUnsupportedError(
            "pcapng capture detected; export it as classic pcap (e.g. editcap -F pcap)", source
        )
    if len(data) < PCAP_GLOBAL_HEADER_LEN:
        raise PcapFormatError(
            f"capture has {len(data)} bytes, shorter than the 24-byte pcap global header", source
        )

    magic_bytes = data[:4]
    if magic_bytes not in PCAP_MAGICS:
        raise PcapFormatError(f"not a pcap file (magic 0x{magic_bytes.hex()})", source)

    byte_order, resolution = PCAP_MAGICS[magic_bytes]
    prefix = '<' if byte_order == 'little' else '>'
    _, major, minor, thiszone, sigfigs, snaplen, linktype = struct.unpack(
        f'{prefix}IHHiIII', data[:PCAP_GLOBAL_HEADER_LEN]
    )
    return PcapFileHeader(
        magic=struct.unpack('>I', magic_bytes)[0],
        version=(major, minor),
        snaplen=snaplen,
        linktype=linktype,
        byte_order=byte_order,
        ts_resolution=resolution,
        thiszone=thiszone,
        sigfigs=sigfigs,
    )


class PcapReader:
    """Streams records in file order; a truncated tail stops the stream with a note."""

    def __init__(self, data: bytes, source: Optional[Path] = None):
        self.data = data
        self.source = source
        self.header = parse_file_header(data, source)
        self.truncation_note: Optional[str] = None

    def __iter__(self) -> Iterator[PacketRecord]:
        prefix = self.header.struct_prefix
        offset = PCAP_GLOBAL_HEADER_LEN
        index = 0
        size = len(self.data)

        while offset < size:
            if size - offset < PCAP_RECORD_HEADER_LEN:
                self._truncated(index, f"{size - offset} trailing bytes cannot hold a record header")
                return
            ts_seconds, ts_fraction, captured_len, original_len = struct.unpack(
                f'{prefix}IIII', self.data[offset:offset + PCAP_RECORD_HEADER_LEN]
            )
            offset += PCAP_RECORD_HEADER_LEN
            if captured_len > size - offset:
                self._truncated(
                    index, f"record claims {captured_len} bytes, {size - offset} remain"
                )
                return
            yield PacketRecord(
                index=index,
                ts_seconds=ts_seconds,
                ts_fraction=ts_fraction,
                captured_len=captured_len,
                original_len=original_len,
                payload=self.data[offset:offset + captured_len],
            )
            offset += captured_len
            index += 1

    def _truncated(self, index: int, detail: str) -> None:
        self.truncation_note = f"capture truncated at record {index}: {detail}"
        logger.warning(f"{self.source or 'capture'}: {self.truncation_note}")


def read_capture(data: bytes, source: Optional[Path] = None) -> PcapReader:
    """Decode the global header and return a reader streaming the records."""
    return PcapReader(data, source)


def _mac(raw: bytes) -> str:
    return ':'.join(f'{octet:02x}' for octet in raw)


def _need(buf: bytes, end: int, what: str) -> None:
    if len(buf) < end:
        raise PacketDecodeError(f"{what} needs {end} bytes, packet has {len(buf)}")


def _decode_ipv4(buf: bytes, offset: int) -> Tuple[NetworkHeader, Optional[int]]:
    _need(buf, offset + 20, "IPv4 header")
    version_ihl = buf[offset]
    if version_ihl >> 4 != 4:
        raise PacketDecodeError(f"IPv4 ethertype carries IP version {version_ihl >> 4}")
    header_length = (version_ihl & 0x0F) * 4
    if header_length < 20:
        raise PacketDecodeError(f"IPv4 IHL of {header_length} bytes is below the minimum")
    _need(buf, offset + header_length, "IPv4 options")

    total_length, identification, flags_fragment = struct.unpack('!HHH', buf[offset + 2:offset + 8])
    net = NetworkHeader(
        version=4,
        src=str(ipaddress.IPv4Address(buf[offset + 12:offset + 16])),
        dst=str(ipaddress.IPv4Address(buf[offset + 16:offset + 20])),
        protocol=buf[offset + 9],
        header_length=header_length,
        payload_length=max(total_length - header_length, 0),
        ttl=buf[offset + 8],
        identification=identification,
        fragment_offset=flags_fragment & 0x1FFF,
        more_fragments=bool(flags_fragment & 0x2000),
    )
    # later fragments carry no transport header
    transport_offset = offset + header_length if net.fragment_offset == 0 else None
    return net, transport_offset


def _decode_ipv6(buf: bytes, offset: int) -> Tuple[NetworkHeader, Optional[int]]:
    _need(buf, offset + 40, "IPv6 header")
    if buf[offset] >> 4 != 6:
        raise PacketDecodeError(f"IPv6 ethertype carries IP version {buf[offset] >> 4}")
    payload_length, next_header, hop_limit = struct.unpack('!HBB', buf[offset + 4:offset + 8])
    net = NetworkHeader(
        version=6,
        src=str(ipaddress.IPv6Address(buf[offset + 8:offset + 24])),
        dst=str(ipaddress.IPv6Address(buf[offset + 24:offset + 40])),
        protocol=next_header,
        header_length=40,
        payload_length=payload_length,
        ttl=hop_limit,
    )
    return net, offset + 40


def decode_packet(rec: PacketRecord, linktype: int) -> DecodedPacket:
    """Ethernet → optional 802.1Q tags → IPv4/IPv6 → TCP/UDP ports."""
    if linktype != LINKTYPE_ETHERNET:
        raise PacketDecodeError(f"unsupported linktype {linktype}")

    buf = rec.payload
    _need(buf, 14, "Ethernet header")
    ethertype = struct.unpack('!H', buf[12:14])[0]
    offset = 14
    vlan_ids = []
    while ethertype in VLAN_ETHERTYPES:
        _need(buf, offset + 4, "802.1Q tag")
        tci, ethertype = struct.unpack('!HH', buf[offset:offset + 4])
        vlan_ids.append(tci & 0x0FFF)
        offset += 4
    link = EthernetHeader(_mac(buf[0:6]), _mac(buf[6:12]), ethertype, tuple(vlan_ids))

    if ethertype == ETHERTYPE_IPV4:
        net, transport_offset = _decode_ipv4(buf, offset)
    elif ethertype == ETHERTYPE_IPV6:
        net, transport_offset = _decode_ipv6(buf, offset)
    else:
        return DecodedPacket(link=link)

    kind = TRANSPORT_PROTOCOLS.get(net.protocol)
    if kind is None or transport_offset is None:
        return DecodedPacket(link=link, net=net)

    _need(buf, transport_offset + TRANSPORT_MIN_LEN[kind], f"{kind} header")
    src_port, dst_port = struct.unpack('!HH', buf[transport_offset:transport_offset + 4])
    return DecodedPacket(link=link, net=net, transport=TransportHeader(kind, src_port, dst_port))


def extract_ports(data: bytes, source: Optional[Path] = None) -> NetworkArtifacts:
    """Count destination ports over every TCP/UDP packet of a capture."""
    reader = read_capture(data, source)
    linktype = reader.header.linktype
    if linktype != LINKTYPE_ETHERNET:
        logger.warning(f"{source or 'capture'}: linktype {linktype} is not Ethernet; packets count as decode errors")

    counts: Counter = Counter()
    portless = 0
    decode_errors = 0
    for rec in reader:
        if not rec.is_consistent(reader.header.snaplen):
            logger.debug(f"Record {rec.index}: captured length {rec.captured_len} is inconsistent")
            decode_errors += 1
            continue
        try:
            packet = decode_packet(rec, linktype)
        except PacketDecodeError as e:
            logger.debug(f"Record {rec.index}: {e}")
            decode_errors += 1
            continue
        if packet.transport is None:
            portless += 1
        else:
            counts[packet.transport.dst_port] += 1

    notes = (reader.truncation_note,) if reader.truncation_note else ()
    artifacts = NetworkArtifacts.from_port_counts(
        counts,
        portless_packets=portless,
        decode_errors=decode_errors,
        truncated=reader.truncation_note is not None,
        notes=notes,
    )
    logger.info(
        f"Capture {source or ''}: {artifacts.packet_total} packets, {len(artifacts.dp_list)} destination ports, "
        f"top port {artifacts.td_port}, {artifacts.decode_errors} decode errors"
    )
    return artifacts


class PcapIngestor(BaseIngestor):
    """Ingests network packet capture evidence."""

    kind = EvidenceKind.NETWORK_CAPTURE

    def ingest(self, path: Path) -> NetworkArtifacts:
        return extract_ports(self.read_bytes(path), Path(path))
