"""Classic libpcap reader producing normalized IPv4 packet records."""

from __future__ import annotations

import enum
import socket
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

__all__ = [
    "CaptureError",
    "CaptureMeta",
    "LinkType",
    "MalformedHeader",
    "PacketRecord",
    "PcapReader",
    "Protocol",
    "Skip",
    "TcpFlags",
    "TruncatedRecord",
    "UnrecognizedMagic",
    "UnsupportedLinkType",
    "parse_packet",
    "read_capture",
]

MAGIC_MICRO = 0xA1B2C3D4
MAGIC_NANO = 0xA1B23C4D
PCAPNG_MAGIC = 0x0A0D0D0A

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

ETH_HEADER_LEN = 14
VLAN_TAG_LEN = 4

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_QINQ = (0x88A8, 0x9100)


class CaptureError(Exception):
    pass


class UnrecognizedMagic(CaptureError):
    pass


class UnsupportedLinkType(CaptureError):
    pass


class MalformedHeader(CaptureError):
    pass


class TruncatedRecord(CaptureError):
    """The capture ends in the middle of a record.

    ``records`` and ``meta`` hold everything decoded before the cut.
    """

    def __init__(self, message, records=None, meta=None):
        super().__init__(message)
        self.records = records if records is not None else []
        self.meta = meta


class LinkType(enum.IntEnum):
    ETHERNET = 1
    RAW_IP = 101


# Aliases that libpcap also writes for raw IP captures.
_LINKTYPE_ALIASES = {1: LinkType.ETHERNET, 101: LinkType.RAW_IP, 228: LinkType.RAW_IP, 12: LinkType.RAW_IP}


class Protocol(enum.IntEnum):
    OTHER = 0
    TCP = 6
    UDP = 17


class TcpFlags(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


NO_FLAGS = TcpFlags(0)


@dataclass(frozen=True, slots=True)
class PacketRecord:
    timestamp: int  # microseconds since epoch
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: Protocol
    tcp_flags: TcpFlags
    payload_len: int
    header_len: int
    window: int = -1  # TCP receive window, -1 for non-TCP

    @property
    def total_len(self) -> int:
        return self.header_len + self.payload_len

    def has(self, flag: TcpFlags) -> bool:
        return bool(self.tcp_flags & flag)


@dataclass(frozen=True, slots=True)
class Skip:
    reason: str


@dataclass
class CaptureMeta:
    link_type: LinkType
    ts_resolution: str  # "micro" or "nano"
    packet_count: int = 0
    skipped_count: int = 0
    skip_reasons: Counter = field(default_factory=Counter)

    def to_dict(self) -> dict:
        return {
            "link_type": self.link_type.name,
            "ts_resolution": self.ts_resolution,
            "packet_count": self.packet_count,
            "skipped_count": self.skipped_count,
            "skip_reasons": dict(sorted(self.skip_reasons.items())),
        }


def _ipv4(raw: bytes) -> str:
    return socket.inet_ntoa(raw)


def parse_packet(raw: bytes, link_type: LinkType, timestamp: int) -> PacketRecord | Skip:
    """Decode one captured frame.

    Returns a :class:`Skip` for frames that are not first-fragment IPv4, and
    raises :class:`MalformedHeader` when a header does not fit in ``raw``.
    """
    offset = 0
    if link_type == LinkType.ETHERNET:
        if len(raw) < ETH_HEADER_LEN:
            raise MalformedHeader(f"ethernet frame of {len(raw)} bytes")
        ethertype = struct.unpack_from("!H", raw, 12)[0]
        offset = ETH_HEADER_LEN
        if ethertype == ETHERTYPE_VLAN:
            if len(raw) < offset + VLAN_TAG_LEN:
                raise MalformedHeader("truncated 802.1Q tag")
            ethertype = struct.unpack_from("!H", raw, offset + 2)[0]
            offset += VLAN_TAG_LEN
            if ethertype == ETHERTYPE_VLAN or ethertype in ETHERTYPE_QINQ:
                return Skip("QinQ")
        elif ethertype in ETHERTYPE_QINQ:
            return Skip("QinQ")
        if ethertype == ETHERTYPE_IPV6:
            return Skip("IPv6")
        if ethertype != ETHERTYPE_IPV4:
            return Skip("NonIP")
    elif link_type == LinkType.RAW_IP:
        if not raw:
            raise MalformedHeader("empty raw IP frame")
        version = raw[0] >> 4
        if version == 6:
            return Skip("IPv6")
        if version != 4:
            return Skip("NonIP")
    else:
        raise UnsupportedLinkType(f"link type {link_type}")

    if len(raw) < offset + 20:
        raise MalformedHeader("truncated IPv4 header")
    ver_ihl, _tos, ip_total, _ident, frag, _ttl, proto = struct.unpack_from("!BBHHHBB", raw, offset)
    if ver_ihl >> 4 != 4:
        return Skip("NonIP")
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or len(raw) < offset + ihl or ip_total < ihl:
        raise MalformedHeader(f"IPv4 header length {ihl}, total length {ip_total}")
    if frag & 0x1FFF:
        return Skip("Fragment")
    src_ip = _ipv4(raw[offset + 12 : offset + 16])
    dst_ip = _ipv4(raw[offset + 16 : offset + 20])
    l4 = offset + ihl
    l4_declared = ip_total - ihl

    if proto == Protocol.TCP:
        if len(raw) < l4 + 20:
            raise MalformedHeader("truncated TCP header")
        sport, dport, _seq, _ack, off_flags, window = struct.unpack_from("!HHIIHH", raw, l4)
        tcp_hlen = (off_flags >> 12) * 4
        if tcp_hlen < 20 or len(raw) < l4 + tcp_hlen or l4_declared < tcp_hlen:
            raise MalformedHeader(f"TCP header length {tcp_hlen}")
        return PacketRecord(
            timestamp=timestamp,
            src_ip=src_ip,
            dst_ip=dst_ip,
            src_port=sport,
            dst_port=dport,
            protocol=Protocol.TCP,
            tcp_flags=TcpFlags(off_flags & 0xFF),
            payload_len=l4_declared - tcp_hlen,
            header_len=l4 + tcp_hlen,
            window=window,
        )
    if proto == Protocol.UDP:
        if len(raw) < l4 + 8 or l4_declared < 8:
            raise MalformedHeader("truncated UDP header")
        sport, dport = struct.unpack_from("!HH", raw, l4)
        return PacketRecord(
            timestamp=timestamp,
            src_ip=src_ip,
            dst_ip=dst_ip,
            src_port=sport,
            dst_port=dport,
            protocol=Protocol.UDP,
            tcp_flags=NO_FLAGS,
            payload_len=l4_declared - 8,
            header_len=l4 + 8,
        )
    return PacketRecord(
        timestamp=timestamp,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=0,
        dst_port=0,
        protocol=Protocol.OTHER,
        tcp_flags=NO_FLAGS,
        payload_len=l4_declared,
        header_len=l4,
    )


class PcapReader:
    """Iterate the packet records of a classic pcap file in file order.

    ``meta`` is filled in as iteration proceeds; it is final once the
    iterator is exhausted.  A file that ends mid-record raises
    :class:`TruncatedRecord` after every complete record has been yielded.
    """

    def __init__(self, path):
        self.path = Path(path)
        with self.path.open("rb") as fh:
            header = fh.read(GLOBAL_HEADER_LEN)
        self._endian, nano = self._parse_magic(header)
        if len(header) < GLOBAL_HEADER_LEN:
            raise TruncatedRecord(f"{self.path}: truncated global header")
        (network,) = struct.unpack_from(self._endian + "I", header, 20)
        # upper bits carry FCS/reserved info on some writers
        network &= 0x0FFFFFFF
        if network not in _LINKTYPE_ALIASES:
            raise UnsupportedLinkType(f"{self.path}: link type {network}")
        self.meta = CaptureMeta(
            link_type=_LINKTYPE_ALIASES[network],
            ts_resolution="nano" if nano else "micro",
        )

    def _parse_magic(self, header: bytes) -> tuple[str, bool]:
        if len(header) < 4:
            raise UnrecognizedMagic(f"{self.path}: file too short for a capture header")
        for endian in ("<", ">"):
            (magic,) = struct.unpack_from(endian + "I", header, 0)
            if magic == MAGIC_MICRO:
                return endian, False
            if magic == MAGIC_NANO:
                return endian, True
            if magic == PCAPNG_MAGIC:
                raise UnrecognizedMagic(f"{self.path}: pcapng is not supported, convert to classic pcap first")
        raise UnrecognizedMagic(f"{self.path}: unrecognized magic {header[:4].hex()}")

    def _records(self, fh: BinaryIO) -> Iterator[tuple[int, bytes]]:
        fmt = self._endian + "IIII"
        nano = self.meta.ts_resolution == "nano"
        fh.seek(GLOBAL_HEADER_LEN)
        while True:
            hdr = fh.read(RECORD_HEADER_LEN)
            if not hdr:
                return
            if len(hdr) < RECORD_HEADER_LEN:
                raise TruncatedRecord(f"{self.path}: truncated record header")
            ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(fmt, hdr)
            data = fh.read(incl_len)
            if len(data) < incl_len:
                raise TruncatedRecord(f"{self.path}: record declares {incl_len} bytes, {len(data)} present")
            frac_us = ts_frac // 1000 if nano else ts_frac
            yield ts_sec * 1_000_000 + frac_us, data

    def __iter__(self) -> Iterator[PacketRecord]:
        meta = self.meta
        with self.path.open("rb") as fh:
            for ts, data in self._records(fh):
                try:
                    rec = parse_packet(data, meta.link_type, ts)
                except MalformedHeader:
                    rec = Skip("Malformed")
                if isinstance(rec, Skip):
                    meta.skipped_count += 1
                    meta.skip_reasons[rec.reason] += 1
                    continue
                meta.packet_count += 1
                yield rec


def read_capture(path) -> tuple[list[PacketRecord], CaptureMeta]:
    reader = PcapReader(path)
    records: list[PacketRecord] = []
    try:
        for rec in reader:
            records.append(rec)
    except TruncatedRecord as exc:
        exc.records = records
        exc.meta = reader.meta
        raise
    return records, reader.meta
