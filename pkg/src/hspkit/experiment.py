"""Baseline, host-space-perturbation and adversarial-retraining experiments.

Every trial ``t`` uses seed ``base_seed + t`` for both the data split and
model training, so trials can run in any order with identical results.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import BENIGN, LabeledDataset, split
from .flows import format_value
from .models import ModelSpec, evaluate, predict, train

log = logging.getLogger(__name__)

BENIGN_SET = "benign"


class ExperimentError(Exception):
    pass


class MissingVariant(ExperimentError):
    pass


class GroupTooSmall(ExperimentError):
    pass


class LeakageError(ExperimentError, AssertionError):
    pass


class KeyMismatch(ExperimentError):
    pass


def _tags(value) -> tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    return tuple(value)


@dataclass(frozen=True)
class ScenarioSpec:
    """Threat model of one HsP experiment.

    Only the two operation tags drive computation; the remaining fields are
    carried into every result for human review.
    """

    baseline_ops: str | tuple[str, ...]
    perturbed_ops: str | tuple[str, ...]
    goal: str = ""
    knowledge: str = ""
    capabilities: str = ""
    hosts: str = ""

    def __post_init__(self):
        if set(self.baseline_tags) & set(self.perturbed_tags):
            raise ExperimentError("baseline and perturbed operations must differ")

    @property
    def baseline_tags(self) -> tuple[str, ...]:
        return _tags(self.baseline_ops)

    @property
    def perturbed_tags(self) -> tuple[str, ...]:
        return _tags(self.perturbed_ops)

    @property
    def baseline_name(self) -> str:
        return "+".join(self.baseline_tags)

    @property
    def perturbed_name(self) -> str:
        return "+".join(self.perturbed_tags)

    def to_dict(self) -> dict:
        return {
            "goal": self.goal,
            "knowledge": self.knowledge,
            "capabilities": self.capabilities,
            "hosts": self.hosts,
            "baseline_ops": list(self.baseline_tags),
            "perturbed_ops": list(self.perturbed_tags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioSpec:
        return cls(
            baseline_ops=_tags(d["baseline_ops"]),
            perturbed_ops=_tags(d["perturbed_ops"]),
            goal=d.get("goal", ""),
            knowledge=d.get("knowledge", ""),
            capabilities=d.get("capabilities", ""),
            hosts=d.get("hosts", ""),
        )


@dataclass
class ExperimentConfig:
    scenario: ScenarioSpec
    model_specs: list[ModelSpec]
    split_fraction: float = 0.8
    trials: int = 5
    base_seed: int = 0
    augment_fraction: float = 0.8  # share of perturbed rows added in adversarial retraining

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "models": [m.to_dict() for m in self.model_specs],
            "split_fraction": self.split_fraction,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "augment_fraction": self.augment_fraction,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Cell:
    metric: str  # "tpr" or "fpr"
    mean: float
    std: float
    values: list[float]


CellKey = tuple[str, str, str]  # (model, train set, test set)


@dataclass
class ResultTable:
    cells: dict[CellKey, Cell]
    trials: int
    provenance: dict = field(default_factory=dict)

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.cells))

    @property
    def columns(self) -> list[tuple[str, str]]:
        return list(dict.fromkeys((k[1], k[2]) for k in self.cells))

    def get(self, model: str, train_set: str, test_set: str) -> Cell:
        return self.cells[(model, train_set, test_set)]

    def to_csv(self, path) -> None:
        header = ["model"]
        for tr, te in self.columns:
            metric = next(c.metric for k, c in self.cells.items() if k[1:] == (tr, te))
            header += [f"{tr} | {te} | {metric}", f"{tr} | {te} | {metric} std"]
        lines = [",".join(_csv_quote(h) for h in header)]
        for model in self.models:
            row = [model]
            for tr, te in self.columns:
                cell = self.cells.get((model, tr, te))
                row += ["", ""] if cell is None else [format_value(cell.mean), format_value(cell.std)]
            lines.append(",".join(_csv_quote(v) for v in row))
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "provenance": self.provenance,
            "cells": [
                {
                    "model": k[0],
                    "train_set": k[1],
                    "test_set": k[2],
                    "metric": c.metric,
                    "mean": _json_float(c.mean),
                    "std": _json_float(c.std),
                    "values": [_json_float(v) for v in c.values],
                }
                for k, c in self.cells.items()
            ],
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def render(self) -> str:
        """Plain-text table, rows = models, columns = (train, test) pairs."""
        cols = self.columns
        heads = [f"{te} ({self.cells[next(k for k in self.cells if k[1:] == (tr, te))].metric})" for tr, te in cols]
        width = max([len(m) for m in self.models] + [5])
        out = []
        trains = list(dict.fromkeys(tr for tr, _ in cols))
        for tr in trains:
            idx = [i for i, c in enumerate(cols) if c[0] == tr]
            out.append(f"train: {tr}")
            out.append(" " * width + "  " + "  ".join(f"{heads[i]:>22}" for i in idx))
            for m in self.models:
                vals = []
                for i in idx:
                    cell = self.cells.get((m, *cols[i]))
                    vals.append(f"{cell.mean:.3f} ± {cell.std:.3f}" if cell else "-")
                out.append(f"{m:<{width}}  " + "  ".join(f"{v:>22}" for v in vals))
        return "\n".join(out)


def _csv_quote(value: str) -> str:
    return f'"{value}"' if ("," in value or '"' in value) else value


def _json_float(v: float):
    return None if math.isnan(v) else v


def aggregate_trials(per_trial: Sequence[dict[CellKey, tuple[str, float]]], provenance=None) -> ResultTable:
    """Combine per-trial ``{cell key: (metric, value)}`` maps into mean and sample std."""
    if not per_trial:
        raise ExperimentError("no trials to aggregate")
    keys = list(per_trial[0])
    for t in per_trial[1:]:
        if set(t) != set(keys):
            raise KeyMismatch("trial tables do not share cell keys")
    cells = {}
    for k in keys:
        metric = per_trial[0][k][0]
        vals = [float(t[k][1]) for t in per_trial]
        arr = np.asarray(vals)
        mean = float(arr.mean())
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        cells[k] = Cell(metric, mean, std, vals)
    return ResultTable(cells, len(per_trial), dict(provenance or {}))


def _require(dataset: LabeledDataset, tags: Sequence[str]) -> None:
    present = set(map(str, dataset.tags))
    missing = [t for t in tags if t not in present]
    if missing:
        raise MissingVariant(f"dataset has no rows tagged {missing}")


# Process-wide tally of train/test disjointness checks, for auditing test runs.
LEAKAGE_AUDIT: Counter = Counter()


def _check_disjoint(train_ids, test_ids, what: str, stats: dict) -> None:
    stats["leakage_checks"] = stats.get("leakage_checks", 0) + 1
    LEAKAGE_AUDIT["checks"] += 1
    overlap = np.intersect1d(np.asarray(train_ids), np.asarray(test_ids))
    if len(overlap):
        LEAKAGE_AUDIT["violations"] += 1
        raise LeakageError(f"{len(overlap)} rows of {what} were also used for training")


def _split_perturbed(rows: LabeledDataset, fraction: float, seed: int):
    if len(rows) < 2:
        raise GroupTooSmall(f"perturbed variant has {len(rows)} row(s); cannot hold out a test share")
    if fraction <= 0.0:
        return rows.take([]), rows
    train_part, test_part = split(rows, fraction, seed, stratify=False)
    if len(test_part) == 0:
        raise GroupTooSmall("no perturbed rows left for testing")
    return train_part, test_part


def _run(cfg: ExperimentConfig, dataset: LabeledDataset, mode: str) -> ResultTable:
    sc = cfg.scenario
    base_tags = sc.baseline_tags
    pert_tags = sc.perturbed_tags
    _require(dataset, base_tags)
    if mode != "baseline":
        _require(dataset, pert_tags)
    if not np.any(dataset.labels == BENIGN):
        raise MissingVariant("dataset has no benign rows")

    benign_mask = dataset.labels == BENIGN
    core = dataset.where(benign_mask | np.isin(dataset.tags, base_tags))
    perturbed = dataset.with_tags(pert_tags)
    base_name = sc.baseline_name
    pert_name = sc.perturbed_name
    stats: dict = {}
    per_trial = []
    for t in range(cfg.trials):
        seed = cfg.base_seed + t
        train_set, test_set = split(core, cfg.split_fraction, seed)
        test_benign = test_set.where(test_set.labels == BENIGN)
        test_base = test_set.with_tags(base_tags)
        train_name = f"{BENIGN_SET}+{base_name}"
        evals = [(BENIGN_SET, "fpr", test_benign), (base_name, "tpr", test_base)]
        if mode == "hsp":
            evals.append((pert_name, "tpr", perturbed))
        elif mode == "retrain":
            p_train, p_test = _split_perturbed(perturbed, cfg.augment_fraction, seed)
            _check_disjoint(p_train.row_ids, p_test.row_ids, pert_name, stats)
            train_set = LabeledDataset.concat([train_set, p_train])
            train_name = f"{BENIGN_SET}+{base_name}+{pert_name}"
            evals.append((pert_name, "tpr", p_test))
        for _, _, test_rows in evals:
            _check_disjoint(train_set.row_ids, test_rows.row_ids, "test set", stats)
        cells = {}
        for spec in cfg.model_specs:
            model = train(spec.with_seed(seed), train_set)
            for test_name, metric, rows in evals:
                m = evaluate(predict(model, rows), rows.labels)
                cells[(spec.label, train_name, test_name)] = (metric, getattr(m, metric))
        per_trial.append(cells)
        log.info("trial %d/%d done (%s)", t + 1, cfg.trials, mode)
    provenance = {
        "config_hash": cfg.config_hash(),
        "mode": mode,
        "scenario": sc.to_dict(),
        "leakage_checks": stats.get("leakage_checks", 0),
        "leakage_violations": 0,
    }
    return aggregate_trials(per_trial, provenance)


def run_baseline(cfg: ExperimentConfig, dataset: LabeledDataset) -> ResultTable:
    """Train on benign + O training shares; fpr on benign test, tpr on O test."""
    return _run(cfg, dataset, "baseline")


def run_hsp(cfg: ExperimentConfig, dataset: LabeledDataset) -> ResultTable:
    """Baseline cells plus tpr of the same models on every O' row."""
    return _run(cfg, dataset, "hsp")


def adversarial_retrain(cfg: ExperimentConfig, dataset: LabeledDataset) -> ResultTable:
    """Retrain with ``augment_fraction`` of the O' rows added; test on the rest."""
    return _run(cfg, dataset, "retrain")
