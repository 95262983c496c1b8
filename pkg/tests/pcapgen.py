"""Hand-assembled pcap bytes for parser tests.

Every header is packed field by field so tests do not depend on the
reader's own constants.
"""

import socket
import struct


def ipv4(addr):
    return socket.inet_aton(addr)


def ethernet(payload, ethertype=0x0800, vlan=None):
    dst = bytes.fromhex("020000000002")
    src = bytes.fromhex("020000000001")
    if vlan is not None:
        return dst + src + struct.pack("!HH", 0x8100, vlan) + struct.pack("!H", ethertype) + payload
    return dst + src + struct.pack("!H", ethertype) + payload


def ip_header(src, dst, proto, l4_len, frag=0, ihl_words=5):
    total = ihl_words * 4 + l4_len
    hdr = struct.pack("!BBHHHBBH4s4s", 0x40 | ihl_words, 0, total, 1, frag, 64, proto, 0, ipv4(src), ipv4(dst))
    return hdr + b"\x00" * (ihl_words * 4 - 20)


def tcp_segment(sport, dport, flags, payload_len=0, window=64240, options=b""):
    data_off = (20 + len(options)) // 4
    hdr = struct.pack("!HHIIBBHHH", sport, dport, 1000, 2000, data_off << 4, flags, window, 0, 0)
    return hdr + options + b"\xab" * payload_len


def udp_datagram(sport, dport, payload_len=0):
    return struct.pack("!HHHH", sport, dport, 8 + payload_len, 0) + b"\xcd" * payload_len


def tcp_frame(src, dst, sport, dport, flags, payload_len=0, window=64240, pad=0):
    seg = tcp_segment(sport, dport, flags, payload_len, window)
    return ethernet(ip_header(src, dst, 6, len(seg)) + seg) + b"\x00" * pad


def udp_frame(src, dst, sport, dport, payload_len=0):
    dg = udp_datagram(sport, dport, payload_len)
    return ethernet(ip_header(src, dst, 17, len(dg)) + dg)


def icmp_frame(src, dst):
    body = b"\x08\x00\x00\x00\x00\x01\x00\x01" + b"\x00" * 8
    return ethernet(ip_header(src, dst, 1, len(body)) + body)


def arp_frame():
    body = struct.pack("!HHBBH", 1, 0x0800, 6, 4, 1) + b"\x02" * 6 + ipv4("10.0.0.1") + b"\x00" * 6 + ipv4("10.0.0.2")
    return ethernet(body, ethertype=0x0806)


def pcap_bytes(records, nano=False, big_endian=False, linktype=1, magic=None):
    """records: iterable of (timestamp in seconds as (sec, frac), frame bytes)."""
    e = ">" if big_endian else "<"
    if magic is None:
        magic = 0xA1B23C4D if nano else 0xA1B2C3D4
    out = struct.pack(e + "IHHiIII", magic, 2, 4, 0, 0, 65535, linktype)
    for (sec, frac), frame in records:
        out += struct.pack(e + "IIII", sec, frac, len(frame), len(frame)) + frame
    return out


# TCP flag bits
FIN, SYN, RST, PSH, ACK = 0x01, 0x02, 0x04, 0x08, 0x10


def golden_records():
    """The golden capture: FIN-closed and RST-closed TCP, an idle-split UDP pair, a lone UDP packet."""
    a, s1, s2, s3 = "10.0.0.1", "10.0.0.2", "10.0.0.3", "10.0.0.4"
    recs = [
        ((1, 0), tcp_frame(a, s1, 40000, 80, SYN)),
        ((1, 100), tcp_frame(s1, a, 80, 40000, SYN | ACK, window=65160)),
        ((1, 200), tcp_frame(a, s1, 40000, 80, ACK, window=502)),
        ((1, 1000), tcp_frame(a, s1, 40000, 80, PSH | ACK, payload_len=100, window=502)),
        ((1, 2000), tcp_frame(s1, a, 80, 40000, ACK, window=509)),
        ((1, 3000), tcp_frame(s1, a, 80, 40000, PSH | ACK, payload_len=500, window=509)),
        ((1, 4000), tcp_frame(a, s1, 40000, 80, ACK, window=502)),
        ((1, 5000), tcp_frame(a, s1, 40000, 80, FIN | ACK, window=502)),
        ((1, 5100), tcp_frame(s1, a, 80, 40000, FIN | ACK, window=509)),
        ((1, 5200), tcp_frame(a, s1, 40000, 80, ACK, window=502)),
        ((2, 0), tcp_frame(a, s2, 40001, 443, SYN, pad=6)),
        ((2, 500), tcp_frame(s2, a, 443, 40001, RST | ACK, window=0)),
        ((2, 700), arp_frame()),
        ((3, 0), udp_frame(a, s3, 5000, 9999, 20)),
        ((3, 500000), udp_frame(s3, a, 9999, 5000, 30)),
        ((3, 600000), icmp_frame(a, s3)),
        ((4, 0), udp_frame("10.0.0.5", "10.0.0.6", 53000, 53, 40)),
        ((133, 500001), udp_frame(a, s3, 5000, 9999, 25)),
        ((133, 600000), udp_frame(s3, a, 9999, 5000, 35)),
    ]
    return recs


if __name__ == "__main__":
    import pathlib

    target = pathlib.Path(__file__).parent / "data" / "golden.pcap"
    target.parent.mkdir(exist_ok=True)
    target.write_bytes(pcap_bytes(golden_records()))
    print(f"wrote {target}")
