"""Feature-space view of a perturbation: ratios, naive rescaling, consistency, OOD distance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .flows import FEATURE_COLUMNS, FLAG_COUNT_COLUMNS

__all__ = [
    "ConsistencyReport",
    "EmptyReference",
    "EmptyVariant",
    "InconsistentInput",
    "OODResult",
    "RatioTable",
    "Violation",
    "check_consistency",
    "feature_ratio",
    "ood_score",
    "ratio_columns",
    "scale_perturb",
]

NON_RATIO_COLUMNS = {"SrcIP", "DstIP", "Timestamp", "SrcPort", "DstPort", "Protocol", "SrcPortCat", "DstPortCat"}

DIRECTION_FLAG_COLUMNS = ["FwdPSHFlags", "BwdPSHFlags", "FwdURGFlags", "BwdURGFlags"]
SCALED_COLUMNS = [
    "TotFwdPkts",
    "TotBwdPkts",
    "TotLenFwdPkts",
    "TotLenBwdPkts",
    "FwdHeaderLen",
    "BwdHeaderLen",
    *FLAG_COUNT_COLUMNS,
    *DIRECTION_FLAG_COLUMNS,
]
COUNT_COLUMNS = ["FlowDuration", *SCALED_COLUMNS]
STAT_GROUPS = ["FwdPktLen", "BwdPktLen", "PktLen", "FlowIAT", "FwdIAT", "BwdIAT"]


class EmptyVariant(ValueError):
    pass


class EmptyReference(ValueError):
    pass


class InconsistentInput(ValueError):
    pass


def ratio_columns(frame: pd.DataFrame) -> list[str]:
    return [
        c
        for c in frame.columns
        if c not in NON_RATIO_COLUMNS and c not in ("Label", "Tag") and pd.api.types.is_numeric_dtype(frame[c])
    ]


@dataclass
class RatioTable:
    ratios: dict[str, float | None]  # None where variant B's mean is 0
    mean_a: dict[str, float]
    mean_b: dict[str, float]
    aggregate: str = "mean"

    @property
    def undefined(self) -> list[str]:
        return [k for k, v in self.ratios.items() if v is None]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "feature": list(self.ratios),
                "mean_a": [self.mean_a[k] for k in self.ratios],
                "mean_b": [self.mean_b[k] for k in self.ratios],
                "ratio": [np.nan if v is None else v for v in self.ratios.values()],
                "defined": [v is not None for v in self.ratios.values()],
            }
        )

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "ratios": self.ratios,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "undefined": self.undefined,
        }


def feature_ratio(variant_a: pd.DataFrame, variant_b: pd.DataFrame) -> RatioTable:
    """Per-feature ``mean(A) / mean(B)`` over all flows of each variant."""
    if len(variant_a) == 0 or len(variant_b) == 0:
        raise EmptyVariant("both variants need at least one flow")
    cols = ratio_columns(variant_a)
    if cols != ratio_columns(variant_b):
        raise ValueError("variants do not share the same numeric columns")
    mean_a = {c: float(variant_a[c].to_numpy(dtype=np.float64).mean()) for c in cols}
    mean_b = {c: float(variant_b[c].to_numpy(dtype=np.float64).mean()) for c in cols}
    ratios = {c: (mean_a[c] / mean_b[c] if mean_b[c] != 0 else None) for c in cols}
    return RatioTable(ratios, mean_a, mean_b)


@dataclass(frozen=True)
class Violation:
    constraint: str
    lhs: float
    rhs: float


@dataclass
class ConsistencyReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def names(self) -> list[str]:
        return [v.constraint for v in self.violations]


def _close(a: float, b: float, rel: float) -> bool:
    return math.isclose(a, b, rel_tol=rel, abs_tol=rel)


def check_consistency(vec: Mapping, rel_tol: float = 1e-9) -> ConsistencyReport:
    """Evaluate the domain constraints tying a flow's features together."""
    v = {c: float(vec[c]) for c in FEATURE_COLUMNS if c in vec and c not in ("SrcIP", "DstIP")}
    out: list[Violation] = []

    def need(name, ok, lhs, rhs):
        if not ok:
            out.append(Violation(name, float(lhs), float(rhs)))

    for c in COUNT_COLUMNS:
        x = v[c]
        need(f"{c} is a non-negative integer", x >= 0 and float(x).is_integer(), x, round(max(x, 0)))
    need("TotFwdPkts >= 1", v["TotFwdPkts"] >= 1, v["TotFwdPkts"], 1)

    n_fwd, n_bwd = v["TotFwdPkts"], v["TotBwdPkts"]
    n = n_fwd + n_bwd
    len_fwd, len_bwd = v["TotLenFwdPkts"], v["TotLenBwdPkts"]
    for g in STAT_GROUPS:
        lo, hi, mean, std = v[f"{g}Min"], v[f"{g}Max"], v[f"{g}Mean"], v[f"{g}Std"]
        need(f"{g}Std >= 0", std >= 0, std, 0)
        need(f"{g}Min <= {g}Mean", mean >= lo or _close(mean, lo, rel_tol), lo, mean)
        need(f"{g}Mean <= {g}Max", mean <= hi or _close(mean, hi, rel_tol), mean, hi)

    for g, count, total in (("FwdPktLen", n_fwd, len_fwd), ("BwdPktLen", n_bwd, len_bwd), ("PktLen", n, len_fwd + len_bwd)):
        need(f"{g}Mean * count = total bytes", _close(v[f"{g}Mean"] * count, total, rel_tol), v[f"{g}Mean"] * count, total)
    for d, count in (("Fwd", n_fwd), ("Bwd", n_bwd)):
        payload = v[f"TotLen{d}Pkts"] - v[f"{d}HeaderLen"]
        seg = v[f"{d}SegSizeAvg"]
        need(f"{d}SegSizeAvg * count = payload bytes", _close(seg * count, payload, rel_tol), seg * count, payload)
        need(f"{d}HeaderLen <= TotLen{d}Pkts", payload >= 0, v[f"{d}HeaderLen"], v[f"TotLen{d}Pkts"])

    dur = v["FlowDuration"]
    rates = (
        ("FlowBytsPerS", len_fwd + len_bwd),
        ("FlowPktsPerS", n),
        ("FwdPktsPerS", n_fwd),
        ("BwdPktsPerS", n_bwd),
    )
    for col, total in rates:
        if dur > 0:
            lhs = v[col] * dur / 1e6
            need(f"{col} * FlowDuration = total", _close(lhs, total, rel_tol), lhs, total)
        else:
            need(f"{col} = 0 for zero duration", v[col] == 0, v[col], 0)

    if n >= 2:
        need("FlowIATTotal = FlowDuration", _close(v["FlowIATTotal"], dur, rel_tol), v["FlowIATTotal"], dur)
    for g, count in (("Flow", n), ("Fwd", n_fwd), ("Bwd", n_bwd)):
        mean = v[f"{g}IATMean"]
        if count >= 2:
            lhs = mean * (count - 1)
            need(f"{g}IATMean * (count - 1) = {g}IATTotal", _close(lhs, v[f"{g}IATTotal"], rel_tol), lhs, v[f"{g}IATTotal"])
        else:
            need(f"{g}IATMean = 0 below two packets", mean == 0, mean, 0)
    return ConsistencyReport(out)


def _rescale(value: float, factor: float) -> float:
    return float(math.floor(value * factor + 0.5))


def scale_perturb(vec: Mapping, factor: float, rel_tol: float = 1e-9) -> dict:
    """Multiply a flow's packet/byte/flag counts by ``factor`` and rederive what depends on them.

    Count-like primitives are scaled and rounded (a non-empty direction keeps
    at least one packet).  Duration, IAT totals and every Min/Max/Std are
    kept, except that a Min or Max is widened when the rederived mean falls
    outside it.  Rates, per-packet means and IAT means are recomputed.
    """
    if not factor > 0:
        raise ValueError(f"factor must be positive, got {factor}")
    report = check_consistency(vec, rel_tol)
    if not report.passed:
        raise InconsistentInput("; ".join(report.names()))
    out = dict(vec)
    if factor == 1:
        return out
    for c in SCALED_COLUMNS:
        out[c] = _rescale(float(vec[c]), factor)
    for d in ("Fwd", "Bwd"):
        if float(vec[f"Tot{d}Pkts"]) >= 1:
            out[f"Tot{d}Pkts"] = max(1.0, out[f"Tot{d}Pkts"])

    n_fwd, n_bwd = out["TotFwdPkts"], out["TotBwdPkts"]
    n = n_fwd + n_bwd
    len_fwd, len_bwd = out["TotLenFwdPkts"], out["TotLenBwdPkts"]

    def ratio(num, den):
        return num / den if den else 0.0

    out["FwdPktLenMean"] = ratio(len_fwd, n_fwd)
    out["BwdPktLenMean"] = ratio(len_bwd, n_bwd)
    out["PktLenMean"] = ratio(len_fwd + len_bwd, n)
    out["FwdSegSizeAvg"] = ratio(len_fwd - out["FwdHeaderLen"], n_fwd)
    out["BwdSegSizeAvg"] = ratio(len_bwd - out["BwdHeaderLen"], n_bwd)

    seconds = float(vec["FlowDuration"]) / 1e6
    out["FlowBytsPerS"] = ratio(len_fwd + len_bwd, seconds)
    out["FlowPktsPerS"] = ratio(n, seconds)
    out["FwdPktsPerS"] = ratio(n_fwd, seconds)
    out["BwdPktsPerS"] = ratio(n_bwd, seconds)

    for g, count in (("Flow", n), ("Fwd", n_fwd), ("Bwd", n_bwd)):
        out[f"{g}IATMean"] = ratio(float(vec[f"{g}IATTotal"]), count - 1) if count >= 2 else 0.0

    for g in STAT_GROUPS:
        mean = out[f"{g}Mean"]
        out[f"{g}Min"] = min(float(vec[f"{g}Min"]), mean)
        out[f"{g}Max"] = max(float(vec[f"{g}Max"]), mean)
    return out


@dataclass
class OODResult:
    scores: np.ndarray
    nearest: np.ndarray  # index of the nearest reference row

    @property
    def mean(self) -> float:
        return float(self.scores.mean()) if len(self.scores) else 0.0


def ood_score(reference, query) -> OODResult:
    """Distance from each query row to its nearest reference row, in reference-standardized units."""
    ref = np.asarray(reference, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if ref.ndim != 2 or len(ref) == 0:
        raise EmptyReference("reference set is empty")
    if q.ndim != 2 or q.shape[1] != ref.shape[1]:
        raise ValueError("query and reference column counts differ")
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    std[std == 0] = 1.0
    tree = cKDTree((ref - mean) / std)
    if len(q) == 0:
        return OODResult(np.zeros(0), np.zeros(0, dtype=np.int64))
    dist, idx = tree.query((q - mean) / std, k=1)
    return OODResult(np.asarray(dist, dtype=np.float64), np.asarray(idx, dtype=np.int64))
