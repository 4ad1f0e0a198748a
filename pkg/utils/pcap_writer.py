"""
Classic libpcap writer and Ethernet/IP/TCP/UDP frame builders.

Used to synthesize scenario captures and decoder fixtures.
"""

import ipaddress
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_IPV6 = 0x86DD

IPPROTO_TCP = 6
IPPROTO_UDP = 17

PCAP_MAGIC_MICRO = 0xA1B2C3D4
PCAP_MAGIC_NANO = 0xA1B23C4D


def mac_bytes(mac: str) -> bytes:
    return bytes(int(part, 16) for part in mac.split(':'))


def build_ethernet_header(
    dst_mac: str, src_mac: str, ethertype: int, vlan_ids: Sequence[int] = ()
) -> bytes:
    header = mac_bytes(dst_mac) + mac_bytes(src_mac)
    for vlan_id in vlan_ids:
        header += struct.pack('!HH', ETHERTYPE_VLAN, vlan_id & 0x0FFF)
    return header + struct.pack('!H', ethertype)


def _ones_complement_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b'\x00'
    total = sum(struct.unpack(f'!{len(data) // 2}H', data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_ipv4_header(
    src: str,
    dst: str,
    protocol: int,
    payload_length: int,
    identification: int = 0,
    ttl: int = 64,
    fragment_offset: int = 0,
    more_fragments: bool = False,
) -> bytes:
    flags_fragment = (0x2000 if more_fragments else 0) | (fragment_offset & 0x1FFF)
    header = struct.pack(
        '!BBHHHBBH4s4s',
        0x45, 0, 20 + payload_length, identification, flags_fragment,
        ttl, protocol, 0,
        ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed,
    )
    checksum = _ones_complement_checksum(header)
    return header[:10] + struct.pack('!H', checksum) + header[12:]


def build_ipv6_header(
    src: str, dst: str, next_header: int, payload_length: int, hop_limit: int = 64
) -> bytes:
    return struct.pack(
        '!IHBB16s16s',
        6 << 28, payload_length, next_header, hop_limit,
        ipaddress.IPv6Address(src).packed, ipaddress.IPv6Address(dst).packed,
    )


def build_tcp_header(
    src_port: int, dst_port: int, seq: int = 0, ack: int = 0, flags: int = 0x18, window: int = 65535
) -> bytes:
    # checksum left zero; decoders here never verify it
    return struct.pack('!HHIIBBHHH', src_port, dst_port, seq, ack, 5 << 4, flags, window, 0, 0)


def build_udp_header(src_port: int, dst_port: int, payload_length: int) -> bytes:
    return struct.pack('!HHHH', src_port, dst_port, 8 + payload_length, 0)


def build_tcp_frame(
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    payload: bytes = b'',
    src_mac: str = '02:00:00:00:00:01',
    dst_mac: str = '02:00:00:00:00:02',
    vlan_ids: Sequence[int] = (),
    seq: int = 0,
    identification: int = 0,
) -> bytes:
    segment = build_tcp_header(src_port, dst_port, seq=seq) + payload
    if ':' in src_ip:
        network = build_ipv6_header(src_ip, dst_ip, IPPROTO_TCP, len(segment))
        ethertype = ETHERTYPE_IPV6
    else:
        network = build_ipv4_header(src_ip, dst_ip, IPPROTO_TCP, len(segment), identification)
        ethertype = ETHERTYPE_IPV4
    return build_ethernet_header(dst_mac, src_mac, ethertype, vlan_ids) + network + segment


def build_udp_frame(
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    payload: bytes = b'',
    src_mac: str = '02:00:00:00:00:01',
    dst_mac: str = '02:00:00:00:00:02',
    vlan_ids: Sequence[int] = (),
    identification: int = 0,
) -> bytes:
    datagram = build_udp_header(src_port, dst_port, len(payload)) + payload
    if ':' in src_ip:
        network = build_ipv6_header(src_ip, dst_ip, IPPROTO_UDP, len(datagram))
        ethertype = ETHERTYPE_IPV6
    else:
        network = build_ipv4_header(src_ip, dst_ip, IPPROTO_UDP, len(datagram), identification)
        ethertype = ETHERTYPE_IPV4
    return build_ethernet_header(dst_mac, src_mac, ethertype, vlan_ids) + network + datagram


def build_arp_frame(
    sender_ip: str,
    target_ip: str,
    sender_mac: str = '02:00:00:00:00:01',
) -> bytes:
    """ARP who-has request, broadcast."""
    arp = struct.pack(
        '!HHBBH6s4s6s4s',
        1, ETHERTYPE_IPV4, 6, 4, 1,
        mac_bytes(sender_mac), ipaddress.IPv4Address(sender_ip).packed,
        b'\x00' * 6, ipaddress.IPv4Address(target_ip).packed,
    )
    return build_ethernet_header('ff:ff:ff:ff:ff:ff', sender_mac, ETHERTYPE_ARP) + arp


class PcapWriter:
    """Accumulates records and serializes a classic pcap file."""

    def __init__(
        self,
        byte_order: str = 'little',
        nanosecond: bool = False,
        snaplen: int = 65535,
        linktype: int = LINKTYPE_ETHERNET,
    ):
        if byte_order not in ('little', 'big'):
            raise ValueError(f"byte_order must be 'little' or 'big', got {byte_order!r}")
        self.prefix = '<' if byte_order == 'little' else '>'
        self.nanosecond = nanosecond
        self.snaplen = snaplen
        self.linktype = linktype
        self.records: List[Tuple[int, int, bytes, int]] = []

    def add(
        self, frame: bytes, ts_seconds: int = 0, ts_fraction: int = 0, original_len: Optional[int] = None
    ) -> None:
        self.records.append((ts_seconds, ts_fraction, frame, original_len or len(frame)))

    def global_header(self) -> bytes:
        magic = PCAP_MAGIC_NANO if self.nanosecond else PCAP_MAGIC_MICRO
        return struct.pack(f'{self.prefix}IHHiIII', magic, 2, 4, 0, 0, self.snaplen, self.linktype)

    def to_bytes(self) -> bytes:
        chunks = [self.global_header()]
        for ts_seconds, ts_fraction, frame, original_len in self.records:
            chunks.append(struct.pack(f'{self.prefix}IIII', ts_seconds, ts_fraction, len(frame), original_len))
            chunks.append(frame)
        return b''.join(chunks)

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path
