import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hspkit.dataset import LabeledDataset, split
from hspkit.models import (
    ColumnMismatch,
    Metrics,
    ModelError,
    ModelKind,
    ModelSpec,
    SingleClassTrainingSet,
    evaluate,
    load_model,
    predict,
    save_model,
    train,
)
from hspkit.models.linear import LinearMargin
from hspkit.models.net import FeedForwardNet
from hspkit.models.tree import DecisionTree, RandomForest

ALL_KINDS = list(ModelKind)


def blobs(n=200, seed=0, d=4, gap=3.0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, d)) + gap * y[:, None]
    return X, y


def as_dataset(X, y):
    cols = [f"f{i}" for i in range(X.shape[1])]
    return LabeledDataset(pd.DataFrame(X, columns=cols), y, np.where(y == 1, "m", "b"))


def gini_root_oracle(X, y):
    """Exhaustive root split: minimum weighted child Gini, ties to lower feature then threshold."""

    def gini(labels):
        if not labels:
            return 0.0
        p = sum(labels) / len(labels)
        return 1.0 - p * p - (1 - p) * (1 - p)

    best = None
    for j in range(X.shape[1]):
        values = sorted(set(X[:, j].tolist()))
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2
            left = [int(t) for x, t in zip(X[:, j], y) if x <= thr]
            right = [int(t) for x, t in zip(X[:, j], y) if x > thr]
            score = (len(left) * gini(left) + len(right) * gini(right)) / len(y)
            if best is None or score < best[0] - 1e-12:
                best = (score, j, thr)
    return best


# ---- decision tree ----------------------------------------------------------


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_root_split_matches_exhaustive_gini(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 25))
    X = rng.integers(0, 5, size=(n, 3)).astype(float)
    y = rng.integers(0, 2, n)
    if len(set(y.tolist())) < 2:
        y[0] = 1 - y[0]
    want = gini_root_oracle(X, y)
    tree = DecisionTree(max_depth=1).fit(X, y)
    if want is None:
        assert tree.feature[0] == -1
    else:
        assert (tree.feature[0], tree.threshold[0]) == (want[1], want[2])


def test_tie_goes_to_lowest_feature():
    X = np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=float)
    y = np.array([0, 0, 1, 1])
    tree = DecisionTree().fit(X, y)
    assert tree.feature[0] == 0 and tree.threshold[0] == 0.5


def test_pure_node_is_leaf():
    X = np.arange(6, dtype=float)[:, None]
    tree = DecisionTree().fit(X, np.zeros(6, dtype=int))
    assert tree.feature.tolist() == [-1]


def test_fits_training_data_exactly():
    X, y = blobs(gap=0.5)
    tree = DecisionTree().fit(X, y)
    assert np.array_equal(tree.predict(X), y)


def test_depth_and_min_leaf_limits():
    X, y = blobs(gap=0.3, seed=2)
    assert DecisionTree(max_depth=3).fit(X, y).depth <= 3
    tree = DecisionTree(min_leaf=10).fit(X, y)
    leaves = tree.feature == -1
    # every leaf reachable from a split holds at least min_leaf rows
    node = np.zeros(len(X), dtype=int)
    for _ in range(tree.depth):
        inner = tree.feature[node] >= 0
        go_left = X[np.arange(len(X)), np.maximum(tree.feature[node], 0)] <= tree.threshold[node]
        node = np.where(inner, np.where(go_left, tree.left[node], tree.right[node]), node)
    counts = np.bincount(node, minlength=len(tree.feature))
    assert counts[leaves].min() >= 10


def test_integer_weights_equal_duplication():
    X, y = blobs(n=60, gap=0.8, seed=5)
    w = np.random.default_rng(1).integers(0, 3, len(y))
    weighted = DecisionTree().fit(X, y, sample_weight=w)
    duplicated = DecisionTree().fit(np.repeat(X, w, axis=0), np.repeat(y, w))
    probe = np.random.default_rng(2).normal(size=(300, 4)) * 2 + 1
    assert np.array_equal(weighted.predict(probe), duplicated.predict(probe))


def test_xor_depth():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0])
    tree = DecisionTree().fit(X, y)
    assert tree.depth == 2
    assert np.array_equal(tree.predict(X), y)
    assert (DecisionTree(max_depth=1).fit(X, y).predict(X) == y).mean() == 0.5


# ---- forest, linear, net ----------------------------------------------------


def test_forest_seeded():
    X, y = blobs(gap=1.0)
    a = RandomForest(n_trees=7, seed=4).fit(X, y)
    b = RandomForest(n_trees=7, seed=4).fit(X, y)
    probe = np.random.default_rng(0).normal(size=(100, 4)) + 1.5
    assert np.array_equal(a.predict(probe), b.predict(probe))
    assert len(a.trees) == 7


@pytest.mark.parametrize("cls", [RandomForest, LinearMargin, FeedForwardNet])
def test_separable_blobs_learned(cls):
    X, y = blobs(gap=4.0)
    Xt, yt = blobs(seed=1, gap=4.0)
    model = cls(seed=0).fit(X, y)
    assert (model.predict(Xt) == yt).mean() >= 0.97


def test_linear_handles_constant_column():
    X, y = blobs()
    X[:, 2] = 7.0
    assert (LinearMargin(seed=0).fit(X, y).predict(X) == y).mean() > 0.95


# ---- public API -------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec("DecisionTree", {"depth": 3})
    with pytest.raises(ModelError):
        ModelSpec("RandomForest", {"n_trees": 0})
    with pytest.raises(ValueError):
        ModelSpec("Boosting")
    spec = ModelSpec("LinearMargin", {"epochs": 3})
    assert spec.hyperparams["learning_rate"] == 0.05
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_single_class_rejected():
    X, _ = blobs(n=10)
    with pytest.raises(SingleClassTrainingSet):
        train(ModelSpec("DecisionTree"), as_dataset(X, np.zeros(10, dtype=int)))


def test_column_mismatch():
    X, y = blobs()
    model = train(ModelSpec("DecisionTree"), as_dataset(X, y))
    frame = as_dataset(X, y).features
    with pytest.raises(ColumnMismatch):
        predict(model, frame[frame.columns[::-1]])
    with pytest.raises(ColumnMismatch):
        predict(model, X)
    assert np.array_equal(predict(model, X, columns=list(frame.columns)), predict(model, frame))
    assert predict(model, frame.iloc[:0]).shape == (0,)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_save_load_roundtrip(tmp_path, kind):
    X, y = blobs(gap=1.5)
    ds = as_dataset(X, y)
    model = train(ModelSpec(kind, seed=3), ds)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.spec == model.spec and back.columns == model.columns
    probe = as_dataset(*blobs(seed=9, gap=1.5)).features
    assert np.array_equal(predict(back, probe), predict(model, probe))


def test_load_rejects_foreign_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ModelError):
        load_model(p)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_training_is_deterministic(kind, patator):
    tr, te = split(patator.dataset, 0.8, seed=1)
    a = predict(train(ModelSpec(kind, seed=5), tr), te)
    b = predict(train(ModelSpec(kind, seed=5), tr), te)
    assert np.array_equal(a, b)


def test_balanced_weights_option():
    X, y = blobs(n=300, gap=1.0, seed=3)
    y[:250] = 0
    ds = as_dataset(X, y)
    plain = train(ModelSpec("LinearMargin", seed=0), ds)
    balanced = train(ModelSpec("LinearMargin", {"balanced": True}, seed=0), ds)
    assert predict(balanced, ds).sum() >= predict(plain, ds).sum()


def test_metrics():
    m = evaluate([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert m == Metrics(tp=2, fp=1, tn=1, fn=1)
    assert m.tpr == pytest.approx(2 / 3) and m.fpr == 0.5
    assert math.isnan(evaluate([0], [0]).tpr)
    assert math.isnan(evaluate([1], [1]).fpr)
    with pytest.raises(ValueError):
        evaluate([1, 0], [1])
