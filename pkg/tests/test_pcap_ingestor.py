"""Tests for the classic pcap decoder and destination-port tally."""

import struct

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from evidence_schema import IngestionError, PcapFormatError, PcapNgUnsupportedError
from ingest.pcap_ingestor import (
    PacketRecord,
    PcapIngestor,
    decode_packet,
    extract_ports,
    parse_file_header,
    read_capture,
)
from tests.conftest import capture_bytes
from utils.pcap_writer import (
    ETHERTYPE_IPV4,
    ETHERTYPE_IPV6,
    IPPROTO_TCP,
    IPPROTO_UDP,
    PcapWriter,
    build_arp_frame,
    build_ethernet_header,
    build_ipv4_header,
    build_ipv6_header,
    build_tcp_frame,
    build_tcp_header,
    build_udp_frame,
    build_udp_header,
)

DEVICE = '192.168.1.20'
CLIENT = '192.168.1.77'

# Ethernet / IPv4 / UDP 12345 -> 53, assembled byte by byte
HAND_BUILT_DNS_CAPTURE = bytes.fromhex(
    'd4c3b2a1' '0200' '0400' '00000000' '00000000' 'ffff0000' '01000000'
    '00000000' '00000000' '2a000000' '2a000000'
    '020000000002' '020000000001' '0800'
    '4500001c' '00000000' '40110000' 'c0a80101' 'c0a80102'
    '3039' '0035' '0008' '0000'
)


def tcp(dst_port: int, src_port: int = 40000) -> bytes:
    return build_tcp_frame(CLIENT, DEVICE, src_port, dst_port)


def udp(dst_port: int, src_port: int = 40000) -> bytes:
    return build_udp_frame(CLIENT, DEVICE, src_port, dst_port)


class TestFileHeader:
    def test_hand_built_udp_packet(self):
        artifacts = extract_ports(HAND_BUILT_DNS_CAPTURE)
        assert [(item.port, item.count) for item in artifacts.dp_list] == [(53, 1)]
        assert artifacts.td_port == 53
        assert artifacts.packet_total == 1

    def test_header_fields(self):
        header = parse_file_header(HAND_BUILT_DNS_CAPTURE)
        assert header.version == (2, 4)
        assert header.snaplen == 65535
        assert header.linktype == 1
        assert header.byte_order == 'little'
        assert header.ts_resolution == 'micro'

    def test_big_endian_nanosecond_magic(self):
        header = parse_file_header(capture_bytes([], byte_order='big', nanosecond=True))
        assert (header.byte_order, header.ts_resolution) == ('big', 'nano')

    def test_pcapng_is_detected(self):
        data = b'\x0a\x0d\x0d\x0a' + b'\x1c\x00\x00\x00' + b'\x4d\x3c\x2b\x1a' + b'\x00' * 16
        with pytest.raises(PcapNgUnsupportedError, match='pcapng'):
            extract_ports(data)

    def test_bad_magic(self):
        with pytest.raises(PcapFormatError, match='not a pcap file'):
            extract_ports(b'GIF89a' + b'\x00' * 40)

    def test_short_header(self):
        with pytest.raises(PcapFormatError, match='24-byte'):
            extract_ports(b'\xd4\xc3\xb2\xa1\x02\x00')

    def test_format_errors_are_ingestion_errors(self):
        assert issubclass(PcapFormatError, IngestionError)
        assert issubclass(PcapNgUnsupportedError, PcapFormatError)


class TestPortCounting:
    def test_empty_capture(self):
        artifacts = extract_ports(capture_bytes([]))
        assert artifacts.dp_list == ()
        assert artifacts.td_port is None
        assert artifacts.packet_total == 0
        assert not artifacts.truncated

    def test_tcp_and_udp_both_count(self):
        artifacts = extract_ports(capture_bytes([tcp(8888), udp(8888), udp(53)]))
        assert {item.port: item.count for item in artifacts.dp_list} == {53: 1, 8888: 2}
        assert artifacts.td_port == 8888

    def test_source_ports_are_ignored(self):
        artifacts = extract_ports(capture_bytes([tcp(80, src_port=8888)]))
        assert artifacts.ports == (80,)

    def test_tie_reported_with_smallest_port(self):
        frames = [tcp(80)] * 3 + [tcp(443)] * 3 + [tcp(22)]
        artifacts = extract_ports(capture_bytes(frames))
        assert artifacts.td_port == 80
        assert artifacts.tied_ports == (80, 443)

    def test_arp_is_portless(self):
        artifacts = extract_ports(capture_bytes([build_arp_frame(DEVICE, '192.168.1.1'), tcp(80)]))
        assert artifacts.portless_packets == 1
        assert artifacts.ports == (80,)

    def test_vlan_tagged_frames_decode(self):
        frames = [
            build_tcp_frame(CLIENT, DEVICE, 40000, 8080, vlan_ids=(10,)),
            build_tcp_frame(CLIENT, DEVICE, 40000, 8080, vlan_ids=(10, 20)),
        ]
        artifacts = extract_ports(capture_bytes(frames))
        assert [(item.port, item.count) for item in artifacts.dp_list] == [(8080, 2)]

    def test_ipv6_udp(self):
        frame = build_udp_frame('fe80::1', 'fe80::2', 5353, 5353)
        artifacts = extract_ports(capture_bytes([frame]))
        assert artifacts.ports == (5353,)

    def test_non_first_fragment_is_portless(self):
        ip = build_ipv4_header(CLIENT, DEVICE, 6, 24, identification=7, fragment_offset=3)
        frame = build_ethernet_header('02:00:00:00:00:02', '02:00:00:00:00:01', 0x0800) + ip + b'\x00' * 24
        artifacts = extract_ports(capture_bytes([frame]))
        assert artifacts.portless_packets == 1
        assert artifacts.dp_list == ()

    def test_short_frame_is_a_decode_error(self):
        artifacts = extract_ports(capture_bytes([b'\x00' * 10, tcp(80)]))
        assert artifacts.decode_errors == 1
        assert artifacts.ports == (80,)

    def test_inconsistent_record_is_a_decode_error(self):
        writer = PcapWriter()
        writer.add(tcp(80), original_len=10)
        writer.add(tcp(443))
        artifacts = extract_ports(writer.to_bytes())
        assert artifacts.decode_errors == 1
        assert artifacts.ports == (443,)

    def test_non_ethernet_linktype_counts_decode_errors(self):
        writer = PcapWriter(linktype=101)
        writer.add(b'\x45' + b'\x00' * 39)
        artifacts = extract_ports(writer.to_bytes())
        assert artifacts.decode_errors == 1
        assert artifacts.td_port is None

    def test_truncated_tail_keeps_complete_records(self):
        data = capture_bytes([tcp(80), tcp(443)])[:-5]
        artifacts = extract_ports(data)
        assert artifacts.truncated
        assert artifacts.packet_total == 1
        assert artifacts.ports == (80,)
        assert artifacts.notes == (
            f"capture truncated at record 1: record claims {len(tcp(443))} bytes, {len(tcp(443)) - 5} remain",
        )

    def test_dangling_record_header_is_truncation(self):
        artifacts = extract_ports(capture_bytes([tcp(80)]) + b'\x00' * 7)
        assert artifacts.truncated
        assert artifacts.packet_total == 1

    @pytest.mark.parametrize('byte_order, nanosecond', [('big', False), ('little', True), ('big', True)])
    def test_encoding_does_not_change_ports(self, byte_order, nanosecond):
        frames = [tcp(8888)] * 5 + [udp(53)] * 2 + [build_arp_frame(DEVICE, CLIENT)]
        reference = extract_ports(capture_bytes(frames))
        assert extract_ports(capture_bytes(frames, byte_order, nanosecond)) == reference

    def test_ingestor_reads_file(self, tmp_path):
        path = tmp_path / 'capture.pcap'
        path.write_bytes(HAND_BUILT_DNS_CAPTURE)
        assert PcapIngestor().ingest(path).td_port == 53

    def test_ingestor_missing_file(self, tmp_path):
        with pytest.raises(IngestionError, match='cannot read'):
            PcapIngestor().ingest(tmp_path / 'missing.pcap')


class TestRecords:
    def test_records_in_file_order(self):
        reader = read_capture(capture_bytes([tcp(1), tcp(2), tcp(3)]))
        records = list(reader)
        assert [record.index for record in records] == [0, 1, 2]
        assert [record.ts_fraction for record in records] == [0, 1, 2]

    def test_decode_layers(self):
        record = PacketRecord(0, 0, 0, len(tcp(8888)), len(tcp(8888)), tcp(8888, src_port=51000))
        packet = decode_packet(record, 1)
        assert packet.link.ethertype == 0x0800
        assert (packet.net.src, packet.net.dst) == (CLIENT, DEVICE)
        assert (packet.transport.kind, packet.transport.src_port, packet.transport.dst_port) == ('TCP', 51000, 8888)


macs = st.binary(min_size=6, max_size=6).map(lambda raw: ':'.join(f'{octet:02x}' for octet in raw))
ports = st.integers(min_value=0, max_value=65535)


def rebuild_frame(packet, payload: bytes) -> bytes:
    """Reassemble a frame from decoded header fields with the pcap_writer builders."""
    link = build_ethernet_header(
        packet.link.dst_mac, packet.link.src_mac, packet.link.ethertype, packet.link.vlan_ids
    )
    net = packet.net
    if net.version == 4:
        network = build_ipv4_header(
            net.src, net.dst, net.protocol, net.payload_length,
            identification=net.identification, ttl=net.ttl,
            fragment_offset=net.fragment_offset, more_fragments=net.more_fragments,
        )
    else:
        network = build_ipv6_header(net.src, net.dst, net.protocol, net.payload_length, hop_limit=net.ttl)
    if packet.transport.kind == 'TCP':
        transport = build_tcp_header(packet.transport.src_port, packet.transport.dst_port)
    else:
        transport = build_udp_header(packet.transport.src_port, packet.transport.dst_port, net.payload_length - 8)
    return link + network + transport + payload


class TestHeaderRebuild:
    @settings(max_examples=200, deadline=None)
    @given(
        ipv6=st.booleans(),
        tcp_segment=st.booleans(),
        src_mac=macs,
        dst_mac=macs,
        vlan_ids=st.lists(st.integers(min_value=0, max_value=4095), max_size=2),
        src_ip=st.ip_addresses(v=4),
        dst_ip=st.ip_addresses(v=4),
        src_ip6=st.ip_addresses(v=6),
        dst_ip6=st.ip_addresses(v=6),
        src_port=ports,
        dst_port=ports,
        ttl=st.integers(min_value=0, max_value=255),
        identification=st.integers(min_value=0, max_value=0xFFFF),
        payload=st.binary(max_size=64),
    )
    def test_decoded_fields_rebuild_the_frame(
        self, ipv6, tcp_segment, src_mac, dst_mac, vlan_ids, src_ip, dst_ip, src_ip6, dst_ip6,
        src_port, dst_port, ttl, identification, payload,
    ):
        if tcp_segment:
            segment = build_tcp_header(src_port, dst_port) + payload
            protocol = IPPROTO_TCP
        else:
            segment = build_udp_header(src_port, dst_port, len(payload)) + payload
            protocol = IPPROTO_UDP
        if ipv6:
            network = build_ipv6_header(str(src_ip6), str(dst_ip6), protocol, len(segment), hop_limit=ttl)
            ethertype = ETHERTYPE_IPV6
        else:
            network = build_ipv4_header(
                str(src_ip), str(dst_ip), protocol, len(segment), identification=identification, ttl=ttl
            )
            ethertype = ETHERTYPE_IPV4
        frame = build_ethernet_header(dst_mac, src_mac, ethertype, vlan_ids) + network + segment

        packet = decode_packet(PacketRecord(0, 0, 0, len(frame), len(frame), frame), 1)
        assert packet.transport.kind == ('TCP' if tcp_segment else 'UDP')
        assert packet.link.vlan_ids == tuple(vlan_ids)
        assert rebuild_frame(packet, payload) == frame

    def test_fragment_fields_rebuild_the_header(self):
        header = build_ipv4_header(CLIENT, DEVICE, IPPROTO_UDP, 8, identification=7, ttl=3, more_fragments=True)
        frame = build_ethernet_header('02:00:00:00:00:02', '02:00:00:00:00:01', ETHERTYPE_IPV4) + header
        frame += build_udp_header(12345, 53, 0)
        packet = decode_packet(PacketRecord(0, 0, 0, len(frame), len(frame), frame), 1)
        assert packet.net.more_fragments
        assert rebuild_frame(packet, b'') == frame


class TestRobustness:
    @settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(body=st.binary(max_size=400))
    def test_arbitrary_records_never_crash(self, body):
        artifacts = extract_ports(capture_bytes([]) + body)
        ported = sum(item.count for item in artifacts.dp_list)
        assert ported + artifacts.portless_packets + artifacts.decode_errors == artifacts.packet_total

    @settings(max_examples=300, deadline=None)
    @given(frames=st.lists(st.binary(max_size=120), max_size=8))
    def test_arbitrary_frames_are_all_accounted(self, frames):
        artifacts = extract_ports(capture_bytes(frames))
        assert artifacts.packet_total == len(frames)
        assert not artifacts.truncated

    @settings(max_examples=300, deadline=None)
    @given(data=st.binary(max_size=64))
    def test_arbitrary_input_raises_only_format_errors(self, data):
        try:
            extract_ports(data)
        except PcapFormatError:
            pass


def test_record_header_layout():
    data = capture_bytes([tcp(80)])
    ts_seconds, ts_fraction, captured, original = struct.unpack('<IIII', data[24:40])
    assert (ts_seconds, ts_fraction) == (1614556800, 0)
    assert captured == original == len(tcp(80))
