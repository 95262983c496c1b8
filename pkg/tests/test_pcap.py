import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pcapgen
from hspkit.pcap import (
    LinkType,
    MalformedHeader,
    PcapReader,
    Protocol,
    Skip,
    TcpFlags,
    TruncatedRecord,
    UnrecognizedMagic,
    UnsupportedLinkType,
    parse_packet,
    read_capture,
)


def write(tmp_path, data, name="cap.pcap"):
    p = tmp_path / name
    p.write_bytes(data)
    return p


def test_tcp_fields_decoded(tmp_path):
    frame = pcapgen.tcp_frame("10.1.2.3", "10.9.8.7", 51000, 443, pcapgen.SYN | pcapgen.ACK, payload_len=17, window=1234)
    path = write(tmp_path, pcapgen.pcap_bytes([((5, 250), frame)]))
    (rec,), meta = read_capture(path)
    assert rec.timestamp == 5_000_250
    assert (rec.src_ip, rec.dst_ip, rec.src_port, rec.dst_port) == ("10.1.2.3", "10.9.8.7", 51000, 443)
    assert rec.protocol == Protocol.TCP
    assert rec.tcp_flags == TcpFlags.SYN | TcpFlags.ACK
    assert rec.payload_len == 17
    assert rec.header_len == 54  # ethernet 14 + IPv4 20 + TCP 20
    assert rec.total_len == len(frame)
    assert rec.window == 1234
    assert meta.link_type == LinkType.ETHERNET and meta.packet_count == 1


def test_tcp_options_count_as_header():
    seg = pcapgen.tcp_segment(1, 2, pcapgen.ACK, payload_len=5, options=b"\x01" * 12)
    frame = pcapgen.ethernet(pcapgen.ip_header("1.1.1.1", "2.2.2.2", 6, len(seg)) + seg)
    rec = parse_packet(frame, LinkType.ETHERNET, 0)
    assert rec.header_len == 14 + 20 + 32
    assert rec.payload_len == 5


def test_udp_fields_decoded():
    rec = parse_packet(pcapgen.udp_frame("10.0.0.1", "10.0.0.2", 5353, 53, 40), LinkType.ETHERNET, 7)
    assert rec.protocol == Protocol.UDP
    assert (rec.payload_len, rec.header_len, rec.window) == (40, 42, -1)
    assert rec.tcp_flags == TcpFlags(0)


def test_ethernet_padding_is_not_payload():
    frame = pcapgen.tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, pcapgen.SYN, pad=6)
    assert len(frame) == 60
    rec = parse_packet(frame, LinkType.ETHERNET, 0)
    assert rec.payload_len == 0 and rec.total_len == 54


@pytest.mark.parametrize("big_endian", [False, True])
@pytest.mark.parametrize("nano", [False, True])
def test_byte_order_and_resolution(tmp_path, big_endian, nano):
    frac = 123_456_789 if nano else 123_456
    frame = pcapgen.udp_frame("10.0.0.1", "10.0.0.2", 1, 2)
    path = write(tmp_path, pcapgen.pcap_bytes([((10, frac), frame)], nano=nano, big_endian=big_endian))
    (rec,), meta = read_capture(path)
    assert rec.timestamp == 10_123_456  # nanoseconds truncate to microseconds
    assert meta.ts_resolution == ("nano" if nano else "micro")


def test_raw_ip_link_type(tmp_path):
    dg = pcapgen.udp_datagram(9, 10, 3)
    raw = pcapgen.ip_header("10.0.0.1", "10.0.0.2", 17, len(dg)) + dg
    path = write(tmp_path, pcapgen.pcap_bytes([((1, 0), raw)], linktype=101))
    (rec,), meta = read_capture(path)
    assert meta.link_type == LinkType.RAW_IP
    assert rec.header_len == 28 and rec.payload_len == 3


def test_vlan_unwrapped_once():
    dg = pcapgen.udp_datagram(9, 10, 3)
    frame = pcapgen.ethernet(pcapgen.ip_header("10.0.0.1", "10.0.0.2", 17, len(dg)) + dg, vlan=100)
    rec = parse_packet(frame, LinkType.ETHERNET, 0)
    assert rec.header_len == 14 + 4 + 28


@pytest.mark.parametrize(
    "frame, reason",
    [
        (pcapgen.arp_frame(), "NonIP"),
        (pcapgen.ethernet(b"\x60" + b"\x00" * 39, ethertype=0x86DD), "IPv6"),
        (pcapgen.ethernet(b"\x00" * 40, ethertype=0x88A8), "QinQ"),
        (pcapgen.ethernet(struct.pack("!HH", 5, 0x8100) + b"\x00" * 40, ethertype=0x8100), "QinQ"),
        (pcapgen.ethernet(pcapgen.ip_header("1.1.1.1", "2.2.2.2", 17, 16, frag=185) + b"\x00" * 16), "Fragment"),
    ],
)
def test_skip_reasons(frame, reason):
    assert parse_packet(frame, LinkType.ETHERNET, 0) == Skip(reason)


def test_first_fragment_is_kept():
    dg = pcapgen.udp_datagram(1, 2, 8)
    frame = pcapgen.ethernet(pcapgen.ip_header("1.1.1.1", "2.2.2.2", 17, len(dg), frag=0x2000) + dg)
    assert parse_packet(frame, LinkType.ETHERNET, 0).protocol == Protocol.UDP


def test_other_ip_protocol_kept_without_ports():
    rec = parse_packet(pcapgen.icmp_frame("1.1.1.1", "2.2.2.2"), LinkType.ETHERNET, 0)
    assert rec.protocol == Protocol.OTHER
    assert (rec.src_port, rec.dst_port) == (0, 0)


@pytest.mark.parametrize("cut", [5, 20, 40])
def test_short_headers_are_malformed(cut):
    frame = pcapgen.tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, pcapgen.ACK)
    with pytest.raises(MalformedHeader):
        parse_packet(frame[:cut], LinkType.ETHERNET, 0)


def test_snaplen_cut_payload_is_fine():
    frame = pcapgen.tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, pcapgen.ACK, payload_len=1000)
    rec = parse_packet(frame[:60], LinkType.ETHERNET, 0)
    assert rec.payload_len == 1000


def test_malformed_frames_counted_as_skips(tmp_path):
    good = pcapgen.udp_frame("10.0.0.1", "10.0.0.2", 1, 2)
    path = write(tmp_path, pcapgen.pcap_bytes([((1, 0), good[:20]), ((2, 0), good), ((3, 0), pcapgen.arp_frame())]))
    recs, meta = read_capture(path)
    assert len(recs) == 1
    assert meta.skipped_count == 2
    assert meta.skip_reasons == {"Malformed": 1, "NonIP": 1}


def test_pcapng_rejected(tmp_path):
    path = write(tmp_path, struct.pack("<I", 0x0A0D0D0A) + b"\x00" * 40)
    with pytest.raises(UnrecognizedMagic, match="pcapng"):
        PcapReader(path)


def test_garbage_magic_rejected(tmp_path):
    with pytest.raises(UnrecognizedMagic):
        PcapReader(write(tmp_path, b"hello world, not a capture"))


def test_unsupported_link_type(tmp_path):
    with pytest.raises(UnsupportedLinkType):
        PcapReader(write(tmp_path, pcapgen.pcap_bytes([], linktype=105)))


def test_truncated_record_keeps_complete_records(tmp_path):
    frames = [((i, 0), pcapgen.udp_frame("10.0.0.1", "10.0.0.2", 1, 2, i)) for i in range(3)]
    data = pcapgen.pcap_bytes(frames)
    path = write(tmp_path, data[:-5])
    with pytest.raises(TruncatedRecord) as info:
        read_capture(path)
    assert len(info.value.records) == 2
    assert info.value.meta.packet_count == 2


def test_empty_capture(tmp_path):
    recs, meta = read_capture(write(tmp_path, pcapgen.pcap_bytes([])))
    assert recs == [] and meta.packet_count == 0


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(0, 2**31 - 1),
            st.integers(0, 999_999),
            st.integers(0, 65535),
            st.integers(0, 65535),
            st.integers(0, 1400),
            st.booleans(),
        ),
        max_size=12,
    ),
    st.booleans(),
)
def test_roundtrip_property(tmp_path_factory, packets, big_endian):
    recs = []
    for sec, usec, sport, dport, plen, is_tcp in packets:
        if is_tcp:
            frame = pcapgen.tcp_frame("172.16.0.1", "172.16.0.2", sport, dport, pcapgen.ACK, payload_len=plen)
        else:
            frame = pcapgen.udp_frame("172.16.0.1", "172.16.0.2", sport, dport, plen)
        recs.append(((sec, usec), frame))
    path = tmp_path_factory.mktemp("rt") / "p.pcap"
    path.write_bytes(pcapgen.pcap_bytes(recs, big_endian=big_endian))
    got, meta = read_capture(path)
    assert meta.packet_count == len(packets)
    for rec, (sec, usec, sport, dport, plen, is_tcp) in zip(got, packets):
        assert rec.timestamp == sec * 1_000_000 + usec
        assert (rec.src_port, rec.dst_port, rec.payload_len) == (sport, dport, plen)
        assert rec.protocol == (Protocol.TCP if is_tcp else Protocol.UDP)
