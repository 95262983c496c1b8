"""Bidirectional flow assembly and CICFlowMeter-style flow features.

Flows are keyed on the unordered endpoint pair plus protocol; the endpoint
that sent the first packet is the forward direction.  Feature semantics
follow the fixed CICFlowMeter release: per-packet flag counts, sample
standard deviations, rates of zero for zero-duration flows.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .pcap import PacketRecord, Protocol, TcpFlags

__all__ = [
    "FEATURE_COLUMNS",
    "FLOAT_COLUMNS",
    "IDENTIFIER_COLUMNS",
    "Flow",
    "FlowAssembler",
    "FlowConfig",
    "FlowKey",
    "Termination",
    "assemble_flows",
    "compute_features",
    "flow_key",
    "format_value",
    "stat_summary",
    "write_flow_csv",
    "write_rows",
]

DEFAULT_TIMEOUT_US = 120_000_000


def _stat_cols(prefix: str) -> list[str]:
    return [f"{prefix}{s}" for s in ("Min", "Max", "Mean", "Std")]


def _iat_cols(prefix: str) -> list[str]:
    return [f"{prefix}IAT{s}" for s in ("Total", "Mean", "Std", "Min", "Max")]


FLAG_COUNT_COLUMNS = [
    "FINFlagCnt",
    "SYNFlagCnt",
    "RSTFlagCnt",
    "PSHFlagCnt",
    "ACKFlagCnt",
    "URGFlagCnt",
    "ECEFlagCnt",
]
_FLAG_FOR_COLUMN = dict(
    zip(
        FLAG_COUNT_COLUMNS,
        [TcpFlags.FIN, TcpFlags.SYN, TcpFlags.RST, TcpFlags.PSH, TcpFlags.ACK, TcpFlags.URG, TcpFlags.ECE],
    )
)

IDENTIFIER_COLUMNS = ["SrcIP", "DstIP", "Timestamp"]

FEATURE_COLUMNS: list[str] = [
    "FlowDuration",
    "TotFwdPkts",
    "TotBwdPkts",
    "TotLenFwdPkts",
    "TotLenBwdPkts",
    *_stat_cols("FwdPktLen"),
    *_stat_cols("BwdPktLen"),
    *_stat_cols("PktLen"),
    "FlowBytsPerS",
    "FlowPktsPerS",
    "FwdPktsPerS",
    "BwdPktsPerS",
    *_iat_cols("Flow"),
    *_iat_cols("Fwd"),
    *_iat_cols("Bwd"),
    *FLAG_COUNT_COLUMNS,
    "FwdPSHFlags",
    "BwdPSHFlags",
    "FwdURGFlags",
    "BwdURGFlags",
    "FwdHeaderLen",
    "BwdHeaderLen",
    "FwdSegSizeAvg",
    "BwdSegSizeAvg",
    "FwdInitWinByts",
    "BwdInitWinByts",
    "SrcPort",
    "DstPort",
    "Protocol",
    *IDENTIFIER_COLUMNS,
]

# Columns that are real-valued by construction; everything else numeric is an integer.
FLOAT_COLUMNS = frozenset(
    [c for c in FEATURE_COLUMNS if c.endswith(("Mean", "Std", "PerS"))] + ["FwdSegSizeAvg", "BwdSegSizeAvg"]
)


class Termination(str, enum.Enum):
    FIN_HANDSHAKE = "FinHandshake"
    RST = "Rst"
    ACTIVE_TIMEOUT = "ActiveTimeout"
    IDLE_TIMEOUT = "IdleTimeout"
    END_OF_CAPTURE = "EndOfCapture"


@dataclass(frozen=True, slots=True)
class FlowKey:
    ip_a: str
    port_a: int
    ip_b: str
    port_b: int
    protocol: Protocol


def flow_key(pkt: PacketRecord) -> FlowKey:
    a = (pkt.src_ip, pkt.src_port)
    b = (pkt.dst_ip, pkt.dst_port)
    if b < a:
        a, b = b, a
    return FlowKey(a[0], a[1], b[0], b[1], pkt.protocol)


@dataclass
class FlowConfig:
    active_timeout: int = DEFAULT_TIMEOUT_US
    idle_timeout: int = DEFAULT_TIMEOUT_US


@dataclass
class Flow:
    key: FlowKey
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    start_ts: int
    end_ts: int
    # (is_forward, packet) in arrival order
    packets: list[tuple[bool, PacketRecord]] = field(default_factory=list)
    termination: Termination | None = None
    _fin_fwd: bool = field(default=False, repr=False)
    _fin_bwd: bool = field(default=False, repr=False)

    @classmethod
    def open(cls, pkt: PacketRecord) -> Flow:
        flow = cls(
            key=flow_key(pkt),
            src_ip=pkt.src_ip,
            src_port=pkt.src_port,
            dst_ip=pkt.dst_ip,
            dst_port=pkt.dst_port,
            start_ts=pkt.timestamp,
            end_ts=pkt.timestamp,
        )
        flow.packets.append((True, pkt))
        return flow

    @property
    def protocol(self) -> Protocol:
        return self.key.protocol

    @property
    def fwd_packets(self) -> list[PacketRecord]:
        return [p for fwd, p in self.packets if fwd]

    @property
    def bwd_packets(self) -> list[PacketRecord]:
        return [p for fwd, p in self.packets if not fwd]

    def is_forward(self, pkt: PacketRecord) -> bool:
        return pkt.src_ip == self.src_ip and pkt.src_port == self.src_port

    def add(self, pkt: PacketRecord) -> None:
        self.packets.append((self.is_forward(pkt), pkt))
        self.end_ts = max(self.end_ts, pkt.timestamp)

    def tcp_closes_after(self, pkt: PacketRecord) -> Termination | None:
        """Update FIN state with ``pkt`` (already added) and report closure."""
        if pkt.protocol != Protocol.TCP:
            return None
        if pkt.has(TcpFlags.RST):
            return Termination.RST
        if self._fin_fwd and self._fin_bwd and pkt.has(TcpFlags.ACK):
            return Termination.FIN_HANDSHAKE
        if pkt.has(TcpFlags.FIN):
            if self.is_forward(pkt):
                self._fin_fwd = True
            else:
                self._fin_bwd = True
        return None


class FlowAssembler:
    """Flow table fed one packet at a time.

    Non TCP/UDP packets are ignored and counted in ``diagnostics``.  Packets
    whose timestamp precedes the latest one already seen in their flow are
    accepted and counted as ``out_of_order``.
    """

    def __init__(self, cfg: FlowConfig | None = None):
        self.cfg = cfg or FlowConfig()
        self._open: dict[FlowKey, tuple[int, Flow]] = {}
        self._closed: list[tuple[int, Flow]] = []
        self._seq = 0
        self.diagnostics: Counter = Counter()

    def _close(self, key: FlowKey, why: Termination) -> None:
        seq, flow = self._open.pop(key)
        flow.termination = why
        self._closed.append((seq, flow))

    def add(self, pkt: PacketRecord) -> None:
        if pkt.protocol not in (Protocol.TCP, Protocol.UDP):
            self.diagnostics["ignored_non_tcp_udp"] += 1
            return
        key = flow_key(pkt)
        entry = self._open.get(key)
        if entry is not None:
            flow = entry[1]
            if pkt.timestamp - flow.end_ts > self.cfg.idle_timeout:
                self._close(key, Termination.IDLE_TIMEOUT)
                entry = None
            elif pkt.timestamp - flow.start_ts > self.cfg.active_timeout:
                self._close(key, Termination.ACTIVE_TIMEOUT)
                entry = None
        if entry is None:
            flow = Flow.open(pkt)
            self._open[key] = (self._seq, flow)
            self._seq += 1
        else:
            flow = entry[1]
            if pkt.timestamp < flow.end_ts:
                self.diagnostics["out_of_order"] += 1
            flow.add(pkt)
        why = flow.tcp_closes_after(pkt)
        if why is not None:
            self._close(key, why)

    def finish(self) -> list[Flow]:
        for key in list(self._open):
            self._close(key, Termination.END_OF_CAPTURE)
        self._closed.sort(key=lambda item: item[0])
        return [flow for _, flow in self._closed]


def assemble_flows(packets: Iterable[PacketRecord], cfg: FlowConfig | None = None) -> list[Flow]:
    """Group packets into flows, returned in order of creation."""
    asm = FlowAssembler(cfg)
    for pkt in packets:
        asm.add(pkt)
    return asm.finish()


def stat_summary(values: Sequence[float]) -> dict[str, float]:
    n = len(values)
    if n == 0:
        return {"min": 0, "max": 0, "mean": 0.0, "std": 0.0}
    mean = sum(values) / n
    if n == 1:
        return {"min": values[0], "max": values[0], "mean": float(values[0]), "std": 0.0}
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return {"min": min(values), "max": max(values), "mean": mean, "std": math.sqrt(var)}


def _gaps(timestamps: Sequence[int]) -> list[int]:
    # Gap from the latest timestamp seen so far; reordered packets contribute 0.
    gaps = []
    latest = None
    for ts in timestamps:
        if latest is not None:
            gaps.append(max(0, ts - latest))
            latest = max(latest, ts)
        else:
            latest = ts
    return gaps


def _iat(prefix: str, timestamps: Sequence[int], out: dict) -> None:
    gaps = _gaps(timestamps)
    s = stat_summary(gaps)
    out[f"{prefix}IATTotal"] = sum(gaps)
    out[f"{prefix}IATMean"] = s["mean"]
    out[f"{prefix}IATStd"] = s["std"]
    out[f"{prefix}IATMin"] = s["min"]
    out[f"{prefix}IATMax"] = s["max"]


def _lengths(prefix: str, lengths: Sequence[int], out: dict) -> None:
    s = stat_summary(lengths)
    out[f"{prefix}Min"] = s["min"]
    out[f"{prefix}Max"] = s["max"]
    out[f"{prefix}Mean"] = s["mean"]
    out[f"{prefix}Std"] = s["std"]


def compute_features(flow: Flow) -> dict:
    """Return the canonical feature vector of a finished flow as an ordered dict."""
    fwd = flow.fwd_packets
    bwd = flow.bwd_packets
    every = [p for _, p in flow.packets]
    duration = flow.end_ts - flow.start_ts
    seconds = duration / 1e6

    f: dict = {}
    f["FlowDuration"] = duration
    f["TotFwdPkts"] = len(fwd)
    f["TotBwdPkts"] = len(bwd)
    f["TotLenFwdPkts"] = sum(p.total_len for p in fwd)
    f["TotLenBwdPkts"] = sum(p.total_len for p in bwd)
    _lengths("FwdPktLen", [p.total_len for p in fwd], f)
    _lengths("BwdPktLen", [p.total_len for p in bwd], f)
    _lengths("PktLen", [p.total_len for p in every], f)
    if duration > 0:
        f["FlowBytsPerS"] = (f["TotLenFwdPkts"] + f["TotLenBwdPkts"]) / seconds
        f["FlowPktsPerS"] = len(every) / seconds
        f["FwdPktsPerS"] = len(fwd) / seconds
        f["BwdPktsPerS"] = len(bwd) / seconds
    else:
        f["FlowBytsPerS"] = f["FlowPktsPerS"] = f["FwdPktsPerS"] = f["BwdPktsPerS"] = 0.0
    _iat("Flow", [p.timestamp for p in every], f)
    _iat("Fwd", [p.timestamp for p in fwd], f)
    _iat("Bwd", [p.timestamp for p in bwd], f)
    for col, flag in _FLAG_FOR_COLUMN.items():
        f[col] = sum(1 for p in every if p.tcp_flags & flag)
    f["FwdPSHFlags"] = sum(1 for p in fwd if p.tcp_flags & TcpFlags.PSH)
    f["BwdPSHFlags"] = sum(1 for p in bwd if p.tcp_flags & TcpFlags.PSH)
    f["FwdURGFlags"] = sum(1 for p in fwd if p.tcp_flags & TcpFlags.URG)
    f["BwdURGFlags"] = sum(1 for p in bwd if p.tcp_flags & TcpFlags.URG)
    f["FwdHeaderLen"] = sum(p.header_len for p in fwd)
    f["BwdHeaderLen"] = sum(p.header_len for p in bwd)
    f["FwdSegSizeAvg"] = sum(p.payload_len for p in fwd) / len(fwd) if fwd else 0.0
    f["BwdSegSizeAvg"] = sum(p.payload_len for p in bwd) / len(bwd) if bwd else 0.0
    tcp = flow.protocol == Protocol.TCP
    f["FwdInitWinByts"] = fwd[0].window if tcp and fwd else -1
    f["BwdInitWinByts"] = bwd[0].window if tcp and bwd else -1
    f["SrcPort"] = flow.src_port
    f["DstPort"] = flow.dst_port
    f["Protocol"] = int(flow.protocol)
    f["SrcIP"] = flow.src_ip
    f["DstIP"] = flow.dst_ip
    f["Timestamp"] = flow.start_ts
    return f


def format_value(value) -> str:
    """Serialize one CSV cell: integral numbers exactly, other reals to 6 significant digits."""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, int)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    if math.isfinite(value) and value.is_integer():
        return str(int(value))
    return format(value, ".6g")


def write_rows(path, columns: Sequence[str], rows: Iterable[Mapping]) -> int:
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[c]) for c in columns])
            count += 1
    return count


def write_flow_csv(flows: Iterable[Flow], path) -> int:
    return write_rows(path, FEATURE_COLUMNS, (compute_features(fl) for fl in flows))
