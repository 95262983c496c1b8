"""Labeling, sanitization and stratified splitting of flow datasets."""

from __future__ import annotations

import ipaddress
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .flows import FEATURE_COLUMNS, Flow, compute_features, write_rows

log = logging.getLogger(__name__)

BENIGN = 0
MALICIOUS = 1
LABEL_NAMES = {"benign": BENIGN, "malicious": MALICIOUS}

LABEL_COLUMN = "Label"
TAG_COLUMN = "Tag"

# "id" and "Flow ID" are the same identifier under two names.
DROPPED_COLUMNS = ["id", "FlowID", "SrcIP", "DstIP", "Timestamp", "FwdInitWinByts", "BwdInitWinByts"]
PORT_COLUMNS = {"SrcPort": "SrcPortCat", "DstPort": "DstPortCat"}

# Spellings found in CICFlowMeter exports, mapped onto the canonical names.
_COLUMN_ALIASES = {
    "flowid": "FlowID",
    "id": "id",
    "srcip": "SrcIP",
    "sourceip": "SrcIP",
    "dstip": "DstIP",
    "destinationip": "DstIP",
    "srcport": "SrcPort",
    "sourceport": "SrcPort",
    "dstport": "DstPort",
    "destinationport": "DstPort",
    "protocol": "Protocol",
    "timestamp": "Timestamp",
    "flowduration": "FlowDuration",
    "totfwdpkts": "TotFwdPkts",
    "totalfwdpackets": "TotFwdPkts",
    "totalfwdpacket": "TotFwdPkts",
    "totbwdpkts": "TotBwdPkts",
    "totalbackwardpackets": "TotBwdPkts",
    "totalbwdpackets": "TotBwdPkts",
    "totlenfwdpkts": "TotLenFwdPkts",
    "totallengthoffwdpackets": "TotLenFwdPkts",
    "totallengthoffwdpacket": "TotLenFwdPkts",
    "totlenbwdpkts": "TotLenBwdPkts",
    "totallengthofbwdpackets": "TotLenBwdPkts",
    "totallengthofbwdpacket": "TotLenBwdPkts",
    "flowbytss": "FlowBytsPerS",
    "flowbytess": "FlowBytsPerS",
    "flowpktss": "FlowPktsPerS",
    "flowpacketss": "FlowPktsPerS",
    "fwdpktss": "FwdPktsPerS",
    "fwdpacketss": "FwdPktsPerS",
    "bwdpktss": "BwdPktsPerS",
    "bwdpacketss": "BwdPktsPerS",
    "fwdheaderlen": "FwdHeaderLen",
    "fwdheaderlength": "FwdHeaderLen",
    "bwdheaderlen": "BwdHeaderLen",
    "bwdheaderlength": "BwdHeaderLen",
    "fwdsegsizeavg": "FwdSegSizeAvg",
    "fwdsegmentsizeavg": "FwdSegSizeAvg",
    "avgfwdsegmentsize": "FwdSegSizeAvg",
    "bwdsegsizeavg": "BwdSegSizeAvg",
    "bwdsegmentsizeavg": "BwdSegSizeAvg",
    "avgbwdsegmentsize": "BwdSegSizeAvg",
    "fwdinitwinbyts": "FwdInitWinByts",
    "fwdinitwinbytes": "FwdInitWinByts",
    "initwinbytesforward": "FwdInitWinByts",
    "bwdinitwinbyts": "BwdInitWinByts",
    "bwdinitwinbytes": "BwdInitWinByts",
    "initwinbytesbackward": "BwdInitWinByts",
    "finflagcount": "FINFlagCnt",
    "synflagcount": "SYNFlagCnt",
    "rstflagcount": "RSTFlagCnt",
    "pshflagcount": "PSHFlagCnt",
    "ackflagcount": "ACKFlagCnt",
    "urgflagcount": "URGFlagCnt",
    "eceflagcount": "ECEFlagCnt",
    "label": LABEL_COLUMN,
}
for _c in FEATURE_COLUMNS:
    _COLUMN_ALIASES.setdefault(_c.lower(), _c)


class DatasetError(Exception):
    pass


class NoDefaultRule(DatasetError):
    pass


class UnknownColumn(DatasetError):
    pass


class PortRangeError(DatasetError, ValueError):
    pass


def normalize_columns(frame: pd.DataFrame) -> pd.DataFrame:
    """Rename CICFlowMeter-style headers (``"Flow Duration"``, ``"Src IP"``...) to canonical names."""
    mapping = {}
    for col in frame.columns:
        squashed = "".join(ch for ch in str(col).lower() if ch.isalnum())
        squashed = squashed.replace("packetlength", "pktlen").replace("packet", "pkt")
        mapping[col] = _COLUMN_ALIASES.get(squashed, _COLUMN_ALIASES.get(squashed.replace("pkt", "packet"), col))
    return frame.rename(columns=mapping)


@dataclass
class LabelRule:
    label: int
    tag: str
    src_ip: str | None = None
    dst_ip: str | None = None
    src_port: int | None = None
    dst_port: int | None = None
    protocol: int | None = None
    t0: int | None = None
    t1: int | None = None

    @property
    def is_default(self) -> bool:
        return all(
            v is None
            for v in (self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.protocol, self.t0, self.t1)
        )

    def mask(self, frame: pd.DataFrame) -> np.ndarray:
        m = np.ones(len(frame), dtype=bool)
        if self.src_ip is not None:
            m &= frame["SrcIP"].astype(str).to_numpy() == self.src_ip
        if self.dst_ip is not None:
            m &= frame["DstIP"].astype(str).to_numpy() == self.dst_ip
        if self.src_port is not None:
            m &= frame["SrcPort"].to_numpy() == self.src_port
        if self.dst_port is not None:
            m &= frame["DstPort"].to_numpy() == self.dst_port
        if self.protocol is not None:
            m &= frame["Protocol"].to_numpy() == self.protocol
        if self.t0 is not None:
            m &= frame["Timestamp"].to_numpy() >= self.t0
        if self.t1 is not None:
            m &= frame["Timestamp"].to_numpy() <= self.t1
        return m


_INT_FIELDS = ("src_port", "dst_port", "protocol", "t0", "t1")
_PROTO_NAMES = {"tcp": 6, "udp": 17}


def parse_rule(line: str) -> LabelRule:
    """Parse one rule line of ``key=value`` tokens.

    ``label`` and ``tag`` are required; a line without match keys is a
    catch-all.  Example::

        dst_ip=10.0.0.5 dst_port=22 t0=1700000000000000 label=malicious tag=patator_P1
    """
    kv = {}
    for token in line.split():
        if "=" not in token:
            raise DatasetError(f"malformed token {token!r} in rule {line!r}")
        k, v = token.split("=", 1)
        kv[k.strip().lower()] = v.strip()
    try:
        label = LABEL_NAMES[kv.pop("label").lower()]
        tag = kv.pop("tag")
    except KeyError as exc:
        raise DatasetError(f"rule {line!r} needs label=benign|malicious and tag=...") from exc
    fields = {}
    for k, v in kv.items():
        if k in ("src_ip", "dst_ip"):
            fields[k] = str(ipaddress.IPv4Address(v))
        elif k == "protocol" and v.lower() in _PROTO_NAMES:
            fields[k] = _PROTO_NAMES[v.lower()]
        elif k in _INT_FIELDS:
            fields[k] = int(v)
        else:
            raise DatasetError(f"unknown rule key {k!r}")
    return LabelRule(label=label, tag=tag, **fields)


def load_rules(path) -> list[LabelRule]:
    rules = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rules.append(parse_rule(line))
    return rules


@dataclass
class LabeledDataset:
    """Feature frame plus per-row labels and variant tags.

    The frame index carries stable row ids; labels and tags are positional
    arrays aligned with it.
    """

    features: pd.DataFrame
    labels: np.ndarray
    tags: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.tags = np.asarray(self.tags, dtype=object)
        if not (len(self.features) == len(self.labels) == len(self.tags)):
            raise DatasetError("features, labels and tags differ in length")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def column_names(self) -> list[str]:
        return list(self.features.columns)

    @property
    def matrix(self) -> np.ndarray:
        return self.features.to_numpy(dtype=np.float64)

    @property
    def row_ids(self) -> np.ndarray:
        return self.features.index.to_numpy()

    def take(self, positions) -> LabeledDataset:
        positions = np.asarray(positions, dtype=np.int64)
        return LabeledDataset(
            self.features.iloc[positions], self.labels[positions], self.tags[positions], dict(self.meta)
        )

    def where(self, mask) -> LabeledDataset:
        return self.take(np.flatnonzero(np.asarray(mask, dtype=bool)))

    def with_tags(self, tags: Iterable[str]) -> LabeledDataset:
        return self.where(np.isin(self.tags, list(tags)))

    def counts(self) -> Counter:
        names = {v: k for k, v in LABEL_NAMES.items()}
        return Counter((names[int(lab)], str(tag)) for lab, tag in zip(self.labels, self.tags))

    @staticmethod
    def concat(parts: Sequence[LabeledDataset]) -> LabeledDataset:
        parts = list(parts)
        return LabeledDataset(
            pd.concat([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]) if parts else np.array([], dtype=np.int64),
            np.concatenate([p.tags for p in parts]) if parts else np.array([], dtype=object),
            dict(parts[0].meta) if parts else {},
        )

    def to_frame(self) -> pd.DataFrame:
        out = self.features.copy()
        names = {v: k for k, v in LABEL_NAMES.items()}
        out[LABEL_COLUMN] = [names[int(v)] for v in self.labels]
        out[TAG_COLUMN] = self.tags
        return out

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> LabeledDataset:
        """Inverse of :meth:`to_frame`; accepts ``benign``/``malicious`` or 0/1 labels."""
        if LABEL_COLUMN not in frame.columns:
            raise UnknownColumn(f"missing {LABEL_COLUMN!r} column")
        raw = frame[LABEL_COLUMN]
        labels = [_coerce_label(v) for v in raw]
        tags = frame[TAG_COLUMN].astype(str).to_numpy() if TAG_COLUMN in frame.columns else np.asarray(
            ["benign" if v == BENIGN else "malicious" for v in labels], dtype=object
        )
        feats = frame.drop(columns=[c for c in (LABEL_COLUMN, TAG_COLUMN) if c in frame.columns])
        return cls(feats, np.asarray(labels), tags)

    def write_csv(self, path) -> int:
        frame = self.to_frame()
        return write_rows(path, list(frame.columns), frame.to_dict("records"))


def _coerce_label(value) -> int:
    if isinstance(value, str):
        v = value.strip().lower()
        if v in LABEL_NAMES:
            return LABEL_NAMES[v]
        if v.isdigit():
            return MALICIOUS if int(v) else BENIGN
        # CIC datasets name the attack class instead of "malicious"
        return MALICIOUS
    return MALICIOUS if int(value) else BENIGN


def features_frame(flows: Iterable[Flow]) -> pd.DataFrame:
    rows = [compute_features(fl) for fl in flows]
    return pd.DataFrame(rows, columns=FEATURE_COLUMNS)


def label_flows(flows, rules: Sequence[LabelRule]) -> LabeledDataset:
    """Label each flow with the first matching rule.

    ``flows`` is either an iterable of :class:`Flow` or a canonical feature
    frame (e.g. read back from a flow CSV).
    """
    if not any(r.is_default for r in rules):
        raise NoDefaultRule("label rules need a catch-all line with only label= and tag=")
    frame = flows if isinstance(flows, pd.DataFrame) else features_frame(flows)
    frame = frame.reset_index(drop=True)
    labels = np.full(len(frame), -1, dtype=np.int64)
    tags = np.empty(len(frame), dtype=object)
    pending = np.ones(len(frame), dtype=bool)
    for rule in rules:
        hit = pending & rule.mask(frame)
        labels[hit] = rule.label
        tags[hit] = rule.tag
        pending &= ~hit
    ds = LabeledDataset(frame, labels, tags)
    for (lab, tag), n in sorted(ds.counts().items()):
        log.info("labeled %d flows %s/%s", n, lab, tag)
    return ds


def port_category(port: int) -> int:
    """IANA port class: 0 well-known, 1 registered, 2 dynamic."""
    port = int(port)
    if not 0 <= port <= 65535:
        raise PortRangeError(f"port {port} outside 0-65535")
    if port <= 1023:
        return 0
    if port <= 49151:
        return 1
    return 2


def _port_categories(values) -> np.ndarray:
    ports = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(ports)
    if np.any(finite & ((ports < 0) | (ports > 65535))):
        raise PortRangeError("port outside 0-65535")
    cats = np.select([ports <= 1023, ports <= 49151], [0.0, 1.0], 2.0)
    return np.where(finite, cats, np.nan)


_REQUIRED = [c for c in FEATURE_COLUMNS if c not in DROPPED_COLUMNS and c not in PORT_COLUMNS]


def sanitize(ds: LabeledDataset) -> LabeledDataset:
    """Drop identifier/shortcut columns, encode ports, drop incomplete and duplicate rows.

    Already-sanitized input passes through unchanged.
    """
    frame = ds.features
    missing = [c for c in _REQUIRED if c not in frame.columns]
    for raw, cat in PORT_COLUMNS.items():
        if raw not in frame.columns and cat not in frame.columns:
            missing.append(raw)
    if missing:
        raise UnknownColumn(f"missing canonical columns: {missing}")

    frame = frame.drop(columns=[c for c in DROPPED_COLUMNS if c in frame.columns])
    for raw, cat in PORT_COLUMNS.items():
        if raw in frame.columns:
            pos = frame.columns.get_loc(raw)
            cats = _port_categories(frame[raw])
            frame = frame.drop(columns=[raw])
            frame.insert(pos, cat, cats)
    extra = [c for c in frame.columns if c not in _REQUIRED and c not in PORT_COLUMNS.values()]
    if extra:
        log.debug("keeping non-canonical columns %s", extra)
    frame = frame.apply(pd.to_numeric, errors="coerce").astype(np.float64)

    values = frame.to_numpy()
    complete = np.isfinite(values).all(axis=1)
    n_missing = int((~complete).sum())
    frame = frame[complete]
    labels = ds.labels[complete]
    tags = ds.tags[complete]

    keyed = frame.copy()
    keyed["__label"] = labels
    keyed["__tag"] = tags
    dup = keyed.duplicated(keep="first").to_numpy()
    n_dup = int(dup.sum())
    out = LabeledDataset(frame[~dup], labels[~dup], tags[~dup], dict(ds.meta))
    out.meta["dropped_missing"] = out.meta.get("dropped_missing", 0) + n_missing
    out.meta["dropped_duplicates"] = out.meta.get("dropped_duplicates", 0) + n_dup
    if n_missing or n_dup:
        log.info("sanitize dropped %d incomplete and %d duplicate rows", n_missing, n_dup)
    return out


def _n_train(fraction: float, n: int) -> int:
    # round half up, not Python's banker's rounding
    return int(math.floor(fraction * n + 0.5))


def split(
    ds: LabeledDataset, fraction: float, seed: int, stratify: bool = True
) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded train/test partition, stratified within each (label, tag) group.

    Groups too small to split go entirely to train and are listed in
    ``train.meta["unsplit_groups"]``.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train_pos: list[np.ndarray] = []
    test_pos: list[np.ndarray] = []
    unsplit = []
    if stratify:
        groups: dict[tuple[int, str], list[int]] = {}
        for i, key in enumerate(zip(ds.labels.tolist(), ds.tags.tolist())):
            groups.setdefault((key[0], str(key[1])), []).append(i)
        ordered = [(k, np.asarray(groups[k])) for k in sorted(groups)]
    else:
        ordered = [(("*", "*"), np.arange(len(ds)))]
    for key, pos in ordered:
        if len(pos) < 2:
            unsplit.append(key)
            train_pos.append(pos)
            continue
        perm = rng.permutation(pos)
        k = _n_train(fraction, len(pos))
        train_pos.append(perm[:k])
        test_pos.append(perm[k:])
    if unsplit:
        log.warning("groups too small to split, kept in train: %s", unsplit)
    tr = np.sort(np.concatenate(train_pos)) if train_pos else np.array([], dtype=np.int64)
    te = np.sort(np.concatenate(test_pos)) if test_pos else np.array([], dtype=np.int64)
    train, test = ds.take(tr), ds.take(te)
    train.meta["unsplit_groups"] = unsplit
    return train, test


def read_dataset_csv(path) -> pd.DataFrame:
    frame = pd.read_csv(path, low_memory=False)
    frame.columns = [str(c).strip() for c in frame.columns]
    return normalize_columns(frame)
