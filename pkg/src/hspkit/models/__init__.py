"""Classifier suite: spec, training, prediction, metrics and persistence."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .linear import LinearMargin
from .net import FeedForwardNet
from .tree import DecisionTree, RandomForest

__all__ = [
    "ColumnMismatch",
    "DEFAULT_HYPERPARAMS",
    "Metrics",
    "ModelError",
    "ModelKind",
    "ModelSpec",
    "SingleClassTrainingSet",
    "TrainedModel",
    "evaluate",
    "load_model",
    "predict",
    "save_model",
    "train",
]

FORMAT_NAME = "hspkit-model"
FORMAT_VERSION = 1


class ModelError(Exception):
    pass


class SingleClassTrainingSet(ModelError):
    pass


class ColumnMismatch(ModelError):
    pass


class ModelKind(str, enum.Enum):
    DECISION_TREE = "DecisionTree"
    RANDOM_FOREST = "RandomForest"
    LINEAR_MARGIN = "LinearMargin"
    FEED_FORWARD_NET = "FeedForwardNet"


DEFAULT_HYPERPARAMS: dict[ModelKind, dict[str, Any]] = {
    ModelKind.DECISION_TREE: {"max_depth": None, "min_leaf": 1, "balanced": False},
    ModelKind.RANDOM_FOREST: {
        "n_trees": 25,
        "feature_subsample": "sqrt",
        "bootstrap": True,
        "max_depth": None,
        "min_leaf": 1,
        "balanced": False,
    },
    ModelKind.LINEAR_MARGIN: {
        "epochs": 30,
        "learning_rate": 0.05,
        "regularization": 1e-4,
        "batch_size": 16,
        "balanced": False,
    },
    ModelKind.FEED_FORWARD_NET: {
        "hidden_sizes": [64, 64],
        "epochs": 50,
        "learning_rate": 1e-3,
        "batch_size": 64,
        "balanced": False,
    },
}


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        defaults = DEFAULT_HYPERPARAMS[self.kind]
        unknown = set(self.hyperparams) - set(defaults)
        if unknown:
            raise ModelError(f"unknown hyperparameters for {self.kind.value}: {sorted(unknown)}")
        merged = {**defaults, **self.hyperparams}
        for key, value in merged.items():
            if isinstance(value, bool) or value is None or isinstance(value, str):
                continue
            values = value if isinstance(value, (list, tuple)) else [value]
            if any(v <= 0 for v in values):
                raise ModelError(f"hyperparameter {key}={value!r} must be positive")
        object.__setattr__(self, "hyperparams", merged)

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    def with_seed(self, seed: int) -> ModelSpec:
        return ModelSpec(self.kind, dict(self.hyperparams), seed, self.name)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "hyperparams": self.hyperparams, "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        return cls(d["kind"], dict(d.get("hyperparams") or {}), int(d.get("seed", 0)), d.get("name"))


@dataclass(frozen=True)
class TrainedModel:
    spec: ModelSpec
    columns: tuple[str, ...]
    estimator: Any


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float:
        """Detected share of malicious rows; NaN when there are none."""
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def fpr(self) -> float:
        """Flagged share of benign rows; NaN when there are none."""
        neg = self.fp + self.tn
        return self.fp / neg if neg else float("nan")


def _balanced_weights(y):
    n = len(y)
    pos = y.sum()
    return np.where(y > 0, n / (2.0 * pos), n / (2.0 * (n - pos)))


def _build(spec: ModelSpec):
    hp = dict(spec.hyperparams)
    hp.pop("balanced")
    if spec.kind is ModelKind.DECISION_TREE:
        return DecisionTree(**hp)
    if spec.kind is ModelKind.RANDOM_FOREST:
        return RandomForest(seed=spec.seed, **hp)
    if spec.kind is ModelKind.LINEAR_MARGIN:
        return LinearMargin(seed=spec.seed, **hp)
    return FeedForwardNet(seed=spec.seed, **hp)


def train(spec: ModelSpec, data) -> TrainedModel:
    """Fit ``spec`` on a :class:`~hspkit.dataset.LabeledDataset`."""
    X = data.matrix
    y = np.asarray(data.labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise SingleClassTrainingSet(f"training set has only class {np.unique(y).tolist()}")
    weights = _balanced_weights(y) if spec.hyperparams.get("balanced") else None
    est = _build(spec)
    est.fit(X, y, sample_weight=weights)
    return TrainedModel(spec, tuple(data.column_names), est)


def predict(model: TrainedModel, data, columns: Sequence[str] | None = None) -> np.ndarray:
    """Predict 0/1 labels for a DataFrame, a LabeledDataset, or a matrix plus ``columns``."""
    if hasattr(data, "features") and hasattr(data, "labels"):
        data = data.features
    if isinstance(data, pd.DataFrame):
        columns = list(data.columns)
        X = data.to_numpy(dtype=np.float64)
    else:
        X = np.asarray(data, dtype=np.float64)
        if columns is None:
            raise ColumnMismatch("column names are required for bare matrices")
    if list(columns) != list(model.columns):
        raise ColumnMismatch(f"expected columns {list(model.columns)}, got {list(columns)}")
    if len(X) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.asarray(model.estimator.predict(X), dtype=np.int64)


def evaluate(predictions, truth) -> Metrics:
    p = np.asarray(predictions, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape:
        raise ValueError(f"{len(p)} predictions for {len(t)} labels")
    return Metrics(
        tp=int(np.sum((p == 1) & (t == 1))),
        fp=int(np.sum((p == 1) & (t == 0))),
        tn=int(np.sum((p == 0) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
    )


_ESTIMATORS = {
    ModelKind.DECISION_TREE: DecisionTree,
    ModelKind.RANDOM_FOREST: RandomForest,
    ModelKind.LINEAR_MARGIN: LinearMargin,
    ModelKind.FEED_FORWARD_NET: FeedForwardNet,
}


def save_model(model: TrainedModel, path) -> None:
    blob = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "columns": list(model.columns),
        "params": model.estimator.get_params(),
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True), encoding="utf-8")


def load_model(path) -> TrainedModel:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("format") != FORMAT_NAME:
        raise ModelError(f"{path} is not a saved model")
    if blob.get("version") != FORMAT_VERSION:
        raise ModelError(f"unsupported model format version {blob.get('version')}")
    spec = ModelSpec.from_dict(blob["spec"])
    est = _ESTIMATORS[spec.kind].from_params(blob["params"])
    return TrainedModel(spec, tuple(blob["columns"]), est)
