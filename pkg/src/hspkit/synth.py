"""Synthetic packet templates for SSH brute forcing and background traffic.

``patator --persistent=1`` keeps one TCP connection open and retries logins
until the OpenSSH server drops it after six failures; ``--persistent=0``
opens a fresh connection per attempt and closes it after the first failure.
Benign traffic mixes TLS browsing, bulk downloads, DNS and NTP.  Everything
is drawn from a seeded generator, so a seed fully determines the capture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .dataset import LabeledDataset, LabelRule, label_flows, sanitize
from .flows import FlowConfig, assemble_flows
from .pcap import PacketRecord, Protocol, TcpFlags

TCP_HEADER = 14 + 20 + 32  # ethernet + IPv4 + TCP with timestamp option
UDP_HEADER = 14 + 20 + 8

SYN, ACK, PSH, FIN, RST = TcpFlags.SYN, TcpFlags.ACK, TcpFlags.PSH, TcpFlags.FIN, TcpFlags.RST
MSS = 1448

ATTACKER = "192.168.1.66"
SSH_SERVER = "192.168.1.20"
OPENSSH_MAX_AUTH_TRIES = 6

P1_TAG = "patator_P1"
P0_TAG = "patator_P0"
BENIGN_TAG = "benign"


class _Conversation:
    def __init__(self, client, cport, server, sport, t0, protocol=Protocol.TCP):
        self.client, self.cport, self.server, self.sport = client, cport, server, sport
        self.t = int(t0)
        self.protocol = protocol
        self.packets: list[PacketRecord] = []
        self._seen_client = self._seen_server = False

    def tx(self, from_client, payload, flags=TcpFlags(0), delay=0.0):
        self.t += int(round(delay))
        tcp = self.protocol == Protocol.TCP
        window = -1
        if tcp:
            window = 64240 if from_client else 65160
            if (from_client and self._seen_client) or (not from_client and self._seen_server):
                window = 501 if from_client else 509
        if from_client:
            self._seen_client = True
            src, dst, sp, dp = self.client, self.server, self.cport, self.sport
        else:
            self._seen_server = True
            src, dst, sp, dp = self.server, self.client, self.sport, self.cport
        self.packets.append(
            PacketRecord(
                timestamp=self.t,
                src_ip=src,
                dst_ip=dst,
                src_port=sp,
                dst_port=dp,
                protocol=self.protocol,
                tcp_flags=TcpFlags(flags) if tcp else TcpFlags(0),
                payload_len=int(payload),
                header_len=TCP_HEADER if tcp else UDP_HEADER,
                window=window,
            )
        )


def _handshake(c: _Conversation, rng, rtt):
    c.tx(True, 0, SYN)
    c.tx(False, 0, SYN | ACK, rtt / 2)
    c.tx(True, 0, ACK, rtt / 2)


def ssh_bruteforce_connection(rng, cport, t0, attempts, server_closes):
    """One patator TCP connection carrying ``attempts`` failed logins."""
    c = _Conversation(ATTACKER, cport, SSH_SERVER, 22, t0)
    rtt = rng.uniform(300, 1200)
    _handshake(c, rng, rtt)
    c.tx(False, 41, PSH | ACK, rng.uniform(2_000, 6_000))  # server banner
    c.tx(True, 0, ACK, rtt / 2)
    c.tx(True, 21, PSH | ACK, rng.uniform(500, 2_000))  # client banner
    c.tx(False, 0, ACK, rtt / 2)
    c.tx(True, int(rng.integers(980, 1030)), PSH | ACK, rng.uniform(200, 800))  # client KEXINIT
    c.tx(False, int(rng.integers(1070, 1090)), PSH | ACK, rtt / 2)  # server KEXINIT
    c.tx(True, 48, PSH | ACK, rng.uniform(300, 900))  # ECDH init
    c.tx(False, int(rng.integers(560, 600)), PSH | ACK, rng.uniform(3_000, 9_000))  # ECDH reply + NEWKEYS
    c.tx(True, 16, PSH | ACK, rng.uniform(500, 1500))  # NEWKEYS
    c.tx(True, 52, PSH | ACK, rng.uniform(100, 400))  # service request
    c.tx(False, 52, PSH | ACK, rtt)  # service accept
    for _ in range(attempts):
        c.tx(True, int(rng.integers(84, 124)), PSH | ACK, rng.uniform(1_000, 5_000))  # userauth request
        c.tx(False, 0, ACK, rtt / 2)
        # OpenSSH delays every failed password answer
        c.tx(False, 52, PSH | ACK, rng.uniform(1.9e6, 2.4e6))
        c.tx(True, 0, ACK, rtt / 2)
    if server_closes:
        c.tx(False, 68, PSH | ACK, rng.uniform(100, 500))  # disconnect: too many failures
        c.tx(False, 0, FIN | ACK, rng.uniform(50, 200))
        c.tx(True, 0, ACK, rtt / 2)
        c.tx(True, 0, FIN | ACK, rng.uniform(200, 800))
        c.tx(False, 0, ACK, rtt / 2)
    else:
        c.tx(True, 36, PSH | ACK, rng.uniform(200, 900))  # client disconnect
        c.tx(True, 0, FIN | ACK, rng.uniform(50, 200))
        c.tx(False, 0, FIN | ACK, rtt / 2)
        c.tx(True, 0, ACK, rtt / 2)
    return c.packets


def patator_session(rng, t0, attempts_total, persistent, first_port=40000):
    """All connections of one patator run issuing ``attempts_total`` logins."""
    packets = []
    t = t0
    port = first_port
    left = attempts_total
    while left > 0:
        n = min(OPENSSH_MAX_AUTH_TRIES, left) if persistent else 1
        conn = ssh_bruteforce_connection(rng, port, t, n, server_closes=persistent and n == OPENSSH_MAX_AUTH_TRIES)
        packets.extend(conn)
        t = conn[-1].timestamp + int(rng.uniform(5_000, 60_000))
        port += 1
        left -= n
    return packets


def tls_browsing(rng, client, cport, server, t0):
    c = _Conversation(client, cport, server, 443, t0)
    rtt = rng.uniform(8_000, 60_000)
    _handshake(c, rng, rtt)
    c.tx(True, 517, PSH | ACK, rng.uniform(100, 500))  # ClientHello
    c.tx(False, 0, ACK, rtt / 2)
    for _ in range(int(rng.integers(2, 4))):  # ServerHello + certificate chain
        c.tx(False, MSS, ACK, rng.uniform(50, 300))
    c.tx(False, int(rng.integers(200, 1200)), PSH | ACK, rng.uniform(50, 300))
    c.tx(True, 0, ACK, rtt / 2)
    c.tx(True, int(rng.integers(80, 130)), PSH | ACK, rng.uniform(500, 3_000))
    c.tx(False, 51, PSH | ACK, rtt)
    for r in range(int(rng.integers(1, 6))):
        think = rng.uniform(50_000, 3_000_000) if r else rng.uniform(1_000, 20_000)
        c.tx(True, int(rng.integers(250, 900)), PSH | ACK, think)  # request
        segments = int(rng.integers(0, 30))
        for s in range(segments):
            c.tx(False, MSS, ACK, rtt if s == 0 else rng.uniform(50, 500))
            if s % 2:
                c.tx(True, 0, ACK, rng.uniform(20, 200))
        c.tx(False, int(rng.integers(100, MSS)), PSH | ACK, rng.uniform(50, 500) if segments else rtt)
        c.tx(True, 0, ACK, rng.uniform(20, 200))
    close = rng.random()
    if close < 0.85:
        c.tx(True, 0, FIN | ACK, rng.uniform(10_000, 500_000))
        c.tx(False, 0, FIN | ACK, rtt / 2)
        c.tx(True, 0, ACK, rtt / 2)
    else:
        c.tx(True, 0, RST | ACK, rng.uniform(10_000, 500_000))
    return c.packets


def bulk_download(rng, client, cport, server, t0):
    c = _Conversation(client, cport, server, int(rng.choice([80, 443])), t0)
    rtt = rng.uniform(5_000, 40_000)
    _handshake(c, rng, rtt)
    c.tx(True, int(rng.integers(150, 600)), PSH | ACK, rng.uniform(100, 1_000))
    segments = int(rng.integers(80, 400))
    for s in range(segments):
        c.tx(False, MSS, ACK, rtt if s == 0 else rng.uniform(500, 8_000))
        if s % 2:
            c.tx(True, 0, ACK, rng.uniform(20, 200))
    c.tx(False, int(rng.integers(1, MSS)), PSH | ACK, rng.uniform(500, 8_000))
    c.tx(True, 0, ACK, rng.uniform(20, 200))
    c.tx(False, 0, FIN | ACK, rng.uniform(1_000, 50_000))
    c.tx(True, 0, FIN | ACK, rtt / 2)
    c.tx(False, 0, ACK, rtt / 2)
    return c.packets


def dns_lookup(rng, client, cport, resolver, t0):
    c = _Conversation(client, cport, resolver, 53, t0, Protocol.UDP)
    c.tx(True, int(rng.integers(28, 60)))
    c.tx(False, int(rng.integers(44, 260)), delay=rng.uniform(2_000, 80_000))
    return c.packets


def ntp_poll(rng, client, cport, server, t0):
    c = _Conversation(client, cport, server, 123, t0, Protocol.UDP)
    c.tx(True, 48)
    if rng.random() < 0.7:
        c.tx(False, 48, delay=rng.uniform(5_000, 90_000))
    return c.packets


_BENIGN_MIX = (
    (tls_browsing, 0.45, ["142.250.180.14", "151.101.1.69", "104.16.132.229", "13.107.42.14"]),
    (bulk_download, 0.12, ["151.101.1.69", "91.189.91.39", "199.232.190.132"]),
    (dns_lookup, 0.35, ["192.168.1.1", "1.1.1.1"]),
    (ntp_poll, 0.08, ["162.159.200.1", "192.168.1.1"]),
)


def benign_traffic(rng, n_flows, t0, span_us):
    clients = [f"192.168.1.{i}" for i in range(100, 130)]
    next_port = {c: 33000 + 977 * i for i, c in enumerate(clients)}
    weights = np.array([w for _, w, _ in _BENIGN_MIX])
    kinds = rng.choice(len(_BENIGN_MIX), size=n_flows, p=weights / weights.sum())
    starts = np.sort(rng.uniform(t0, t0 + span_us, size=n_flows))
    packets = []
    for kind, start in zip(kinds, starts):
        make, _, servers = _BENIGN_MIX[kind]
        client = clients[int(rng.integers(len(clients)))]
        port = next_port[client]
        next_port[client] = 32768 + (port - 32768 + 1) % 28000
        packets.extend(make(rng, client, port, servers[int(rng.integers(len(servers)))], start))
    return packets


@dataclass
class PatatorFixture:
    packets: list[PacketRecord]
    frame: pd.DataFrame  # canonical features plus Label/Tag
    dataset: LabeledDataset  # sanitized
    rules: list[LabelRule]
    windows: dict[str, tuple[int, int]]


def make_patator_fixture(seed=0, n_benign=1200, p1_attempts=1800, p0_attempts=300, t0=1_700_000_000_000_000):
    """Benign background plus one persistent and one non-persistent patator run.

    The runs are separated in time; label rules pick them out by attacker
    address, SSH port and time window.
    """
    rng = np.random.default_rng(seed)
    hour = 3_600_000_000
    p1_start = t0 + hour
    p1 = patator_session(rng, p1_start, p1_attempts, persistent=True, first_port=40000)
    p0_start = p1[-1].timestamp + hour
    p0 = patator_session(rng, p0_start, p0_attempts, persistent=False, first_port=45000)
    span = p0[-1].timestamp - t0 + hour
    benign = benign_traffic(rng, n_benign, t0, span)
    # stable sort keeps each conversation's own packet order on equal timestamps
    packets = sorted(benign + p1 + p0, key=lambda p: p.timestamp)

    windows = {P1_TAG: (p1_start, p1[-1].timestamp), P0_TAG: (p0_start, p0[-1].timestamp)}
    rules = [
        LabelRule(1, tag, src_ip=ATTACKER, dst_ip=SSH_SERVER, dst_port=22, t0=lo, t1=hi)
        for tag, (lo, hi) in windows.items()
    ]
    rules.append(LabelRule(0, BENIGN_TAG))
    flows = assemble_flows(packets, FlowConfig())
    labeled = label_flows(flows, rules)
    frame = labeled.to_frame()
    return PatatorFixture(packets, frame, sanitize(labeled), rules, windows)
