"""``hspkit`` command line: extract, label, experiment, analyze, perturb, make-fixture."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .dataset import (
    TAG_COLUMN,
    DatasetError,
    LabeledDataset,
    LABEL_COLUMN,
    LABEL_NAMES,
    label_flows,
    load_rules,
    read_dataset_csv,
    sanitize,
)
from .experiment import (
    ExperimentConfig,
    ExperimentError,
    ScenarioSpec,
    adversarial_retrain,
    run_hsp,
)
from .flows import FEATURE_COLUMNS, FlowAssembler, FlowConfig, write_flow_csv, write_rows
from .manifest import RunManifest
from .models import ModelError, ModelSpec
from .pcap import CaptureError, PcapReader, TruncatedRecord
from .perturb import InconsistentInput, check_consistency, feature_ratio, ood_score, ratio_columns, scale_perturb

log = logging.getLogger("hspkit")

DEFAULT_MODELS = ["DecisionTree", "RandomForest", "LinearMargin", "FeedForwardNet"]


class ConfigError(Exception):
    pass


def _fail(exc: Exception) -> int:
    print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 2


def _seconds_to_us(value: float) -> int:
    return int(round(float(value) * 1_000_000))


def cmd_extract(args) -> int:
    cfg = FlowConfig(active_timeout=_seconds_to_us(args.active_timeout), idle_timeout=_seconds_to_us(args.idle_timeout))
    out = Path(args.out)
    try:
        reader = PcapReader(args.pcap)
    except CaptureError as exc:
        return _fail(exc)
    asm = FlowAssembler(cfg)
    truncated = None
    try:
        for pkt in reader:
            asm.add(pkt)
    except TruncatedRecord as exc:
        truncated = exc
    flows = asm.finish()
    n = write_flow_csv(flows, out)
    by_cause = Counter(f.termination.value for f in flows)
    sidecar = out.with_name(out.name + ".json")
    manifest_path = out.with_name(out.name + ".manifest.json")
    meta = {
        "capture": reader.meta.to_dict(),
        "flow_config": {"active_timeout_us": cfg.active_timeout, "idle_timeout_us": cfg.idle_timeout},
        "flows": n,
        "terminations": dict(sorted(by_cause.items())),
        "diagnostics": dict(sorted(asm.diagnostics.items())),
        "truncated": str(truncated) if truncated else None,
        "manifest": manifest_path.name,
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    man = RunManifest("extract", notes={"flow_config": meta["flow_config"]})
    man.add_input(args.pcap)
    man.add_output(out)
    man.add_output(sidecar)
    man.row_counts = {"packets": reader.meta.packet_count, "skipped": reader.meta.skipped_count, "flows": n}
    man.write(manifest_path)
    print(f"{reader.meta.packet_count} packets ({reader.meta.skipped_count} skipped) -> {n} flows")
    for cause, count in sorted(by_cause.items()):
        print(f"  {cause}: {count}")
    if truncated is not None:
        return _fail(truncated)
    return 0


def cmd_label(args) -> int:
    try:
        rules = load_rules(args.rules)
        frame = read_dataset_csv(args.flows)
        ds = label_flows(frame, rules)
    except (DatasetError, OSError, ValueError) as exc:
        return _fail(exc)
    n = ds.write_csv(args.out)
    man = RunManifest("label")
    man.add_input(args.flows)
    man.add_input(args.rules)
    man.add_output(args.out)
    man.row_counts = {"flows": n}
    man.write(Path(args.out).with_name(Path(args.out).name + ".manifest.json"))
    for (lab, tag), count in sorted(ds.counts().items()):
        print(f"{lab:>9} {tag}: {count}")
    return 0


def _load_inputs(entries, base: Path) -> tuple[LabeledDataset, list[Path]]:
    parts, paths = [], []
    for entry in entries:
        if isinstance(entry, str):
            entry = {"path": entry}
        path = (base / entry["path"]).resolve()
        frame = read_dataset_csv(path)
        if "label" in entry:
            frame[LABEL_COLUMN] = entry["label"]
        if "tag" in entry:
            frame[TAG_COLUMN] = entry["tag"]
        if LABEL_COLUMN not in frame.columns:
            raise ConfigError(f"{path}: no Label column and no label given in the config")
        parts.append(LabeledDataset.from_frame(frame))
        paths.append(path)
    if not parts:
        raise ConfigError("config lists no data files")
    ds = LabeledDataset.concat(parts)
    ds.features = ds.features.reset_index(drop=True)
    return ds, paths


def load_experiment(path, seed=None) -> tuple[ExperimentConfig, dict, LabeledDataset, list[Path]]:
    """Read a YAML experiment file; returns config, raw options, sanitized data and input paths."""
    path = Path(path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if "scenario" not in raw or "data" not in raw:
        raise ConfigError("experiment config needs 'scenario' and 'data' sections")
    scenario = ScenarioSpec.from_dict(raw["scenario"])
    models = raw.get("models") or [{"kind": k} for k in DEFAULT_MODELS]
    specs = [ModelSpec.from_dict(m if isinstance(m, dict) else {"kind": m}) for m in models]
    cfg = ExperimentConfig(
        scenario=scenario,
        model_specs=specs,
        split_fraction=float(raw.get("split_fraction", 0.8)),
        trials=int(raw.get("trials", 5)),
        base_seed=int(seed if seed is not None else raw.get("seed", 0)),
        augment_fraction=float(raw.get("augment_fraction", raw.get("split_fraction", 0.8))),
    )
    ds, paths = _load_inputs(raw["data"], path.parent)
    return cfg, raw, sanitize(ds), paths


def cmd_experiment(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        cfg, raw, ds, inputs = load_experiment(args.config, args.seed)
        tables = {"results": run_hsp(cfg, ds)}
        if raw.get("adversarial_retrain", True):
            tables["retrain"] = adversarial_retrain(cfg, ds)
    except (ConfigError, DatasetError, ExperimentError, ModelError, OSError, KeyError, ValueError) as exc:
        return _fail(exc)

    man = RunManifest("experiment", config_hash=cfg.config_hash())
    man.add_input(args.config)
    for p in inputs:
        man.add_input(p)
    leakage = 0
    for name, table in tables.items():
        table.provenance["manifest"] = "manifest.json"
        table.to_csv(out_dir / f"{name}.csv")
        table.to_json(out_dir / f"{name}.json")
        man.add_output(out_dir / f"{name}.csv")
        man.add_output(out_dir / f"{name}.json")
        leakage += table.provenance["leakage_checks"]
        print(f"== {name} ==")
        print(table.render())
    counts = ds.counts()
    man.row_counts = {f"{lab}/{tag}": n for (lab, tag), n in counts.items()}
    man.row_counts["dropped_missing"] = ds.meta.get("dropped_missing", 0)
    man.row_counts["dropped_duplicates"] = ds.meta.get("dropped_duplicates", 0)
    man.notes = {"leakage_checks": leakage, "leakage_violations": 0}
    digest = man.write(out_dir / "manifest.json")
    print(f"no-leakage assertion held in {leakage} checks; manifest {digest[:12]}")
    return 0


def _numeric_view(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[ratio_columns(frame)].astype(np.float64)


def cmd_analyze(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        a = read_dataset_csv(args.a)
        b = read_dataset_csv(args.b)
        table = feature_ratio(a, b)
        ood = ood_score(_numeric_view(a).to_numpy(), _numeric_view(b).to_numpy())
    except (ValueError, OSError) as exc:
        return _fail(exc)
    table.to_frame().to_csv(out_dir / "ratio.csv", index=False, float_format="%.6g", lineterminator="\n")
    doc = {**table.to_dict(), "ood_mean": ood.mean, "manifest": "manifest.json"}
    (out_dir / "ratio.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_rows(
        out_dir / "ood.csv",
        ["row", "score", "nearest_reference_row"],
        ({"row": i, "score": s, "nearest_reference_row": j} for i, (s, j) in enumerate(zip(ood.scores, ood.nearest))),
    )
    man = RunManifest("analyze")
    man.add_input(args.a)
    man.add_input(args.b)
    for name in ("ratio.csv", "ratio.json", "ood.csv"):
        man.add_output(out_dir / name)
    man.row_counts = {"a": len(a), "b": len(b)}
    man.write(out_dir / "manifest.json")
    shown = sorted(((k, v) for k, v in table.ratios.items() if v is not None), key=lambda kv: -abs(np.log(kv[1]) if kv[1] > 0 else 0))
    print("largest mean ratios (A / B):")
    for k, v in shown[:10]:
        print(f"  {k:<16} {v:.4g}")
    if table.undefined:
        print(f"undefined (B mean is 0): {', '.join(table.undefined)}")
    print(f"mean nearest-neighbour distance of B to A: {ood.mean:.4g}")
    return 0


def cmd_perturb(args) -> int:
    try:
        frame = read_dataset_csv(args.flows)
        factor = float(args.factor)
        if not factor > 0:
            raise ValueError(f"factor must be positive, got {args.factor}")
    except (ValueError, OSError) as exc:
        return _fail(exc)
    rows, rejected = [], 0
    for rec in frame.to_dict("records"):
        try:
            out = scale_perturb(rec, factor, rel_tol=args.tolerance)
        except InconsistentInput as exc:
            rejected += 1
            log.warning("skipping inconsistent input row: %s", exc)
            continue
        report = check_consistency(out, rel_tol=args.tolerance)
        if not report.passed:
            rejected += 1
            log.warning("refusing inconsistent output row: %s", report.names())
            continue
        rows.append(out)
    columns = [c for c in frame.columns if c in FEATURE_COLUMNS] + [c for c in frame.columns if c not in FEATURE_COLUMNS]
    n = write_rows(args.out, columns, rows)
    man = RunManifest("perturb", notes={"factor": factor, "tolerance": args.tolerance})
    man.add_input(args.flows)
    man.add_output(args.out)
    man.row_counts = {"input": len(frame), "written": n, "rejected": rejected}
    man.write(Path(args.out).with_name(Path(args.out).name + ".manifest.json"))
    print(f"{n} rows scaled by {factor:g}, {rejected} rejected")
    return 1 if rejected else 0


def cmd_make_fixture(args) -> int:
    from .synth import P0_TAG, P1_TAG, make_patator_fixture

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fx = make_patator_fixture(seed=args.seed)
    labels = {v: k for k, v in LABEL_NAMES.items()}
    flows = fx.frame[FEATURE_COLUMNS]
    write_rows(out_dir / "flows.csv", FEATURE_COLUMNS, flows.to_dict("records"))
    lines = ["# first matching rule wins; the last line is the catch-all"]
    for r in fx.rules:
        keys = [f"{k}={getattr(r, k)}" for k in ("src_ip", "dst_ip", "dst_port", "t0", "t1") if getattr(r, k) is not None]
        lines.append(" ".join(keys + [f"label={labels[r.label]}", f"tag={r.tag}"]))
    (out_dir / "rules.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    config = {
        "scenario": {
            "goal": "ssh-bruteforce a server inside the monitored network without being detected",
            "knowledge": "the detector was trained on patator --persistent=1 traffic",
            "capabilities": "unprivileged shell on one compromised host",
            "hosts": "attacker 192.168.1.66, target 192.168.1.20",
            "baseline_ops": P1_TAG,
            "perturbed_ops": P0_TAG,
        },
        "data": [{"path": "labeled.csv"}],
        "models": [{"kind": k} for k in DEFAULT_MODELS],
        "split_fraction": 0.8,
        "trials": 5,
        "seed": args.seed,
        "adversarial_retrain": True,
    }
    (out_dir / "experiment.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    print(f"wrote {len(flows)} flows, rules and experiment config to {out_dir}")
    print(f"next: hspkit label --flows {out_dir}/flows.csv --rules {out_dir}/rules.txt --out {out_dir}/labeled.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hspkit", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", help="pcap -> flow feature CSV")
    s.add_argument("--pcap", required=True)
    s.add_argument("--active-timeout", type=float, default=120.0, help="seconds (default 120)")
    s.add_argument("--idle-timeout", type=float, default=120.0, help="seconds (default 120)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("label", help="apply label rules to a flow CSV")
    s.add_argument("--flows", required=True)
    s.add_argument("--rules", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("experiment", help="baseline, HsP and adversarial-retraining tables")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("analyze", help="feature ratios and OOD distance of variant B against A")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("perturb", help="naive feature-space rescaling of flows")
    s.add_argument("--flows", required=True)
    s.add_argument("--factor", required=True, type=float)
    s.add_argument("--out", required=True)
    s.add_argument(
        "--tolerance",
        type=float,
        default=1e-5,
        help="relative tolerance of consistency checks; CSV cells carry 6 significant digits",
    )
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("make-fixture", help="write the synthetic patator fixture")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
