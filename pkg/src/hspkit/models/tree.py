"""CART decision trees (Gini impurity) and bagged random forests."""

from __future__ import annotations

import math

import numpy as np

# Impurities closer than this are treated as ties.
_TIE = 1e-12


class DecisionTree:
    """Binary CART tree stored as flat node arrays.

    Splits are ``x[feature] <= threshold`` (left) with thresholds at
    midpoints between consecutive distinct values.  Among equally good
    splits the lowest feature index wins, then the lowest threshold.
    """

    def __init__(self, max_depth=None, min_leaf=1):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature = np.empty(0, dtype=np.int64)
        self.threshold = np.empty(0)
        self.left = np.empty(0, dtype=np.int64)
        self.right = np.empty(0, dtype=np.int64)
        self.value = np.empty(0)

    def fit(self, X, y, sample_weight=None, max_features=None, rng=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        keep = w > 0
        X, y, w = X[keep], y[keep], w[keep]
        n_features = X.shape[1]

        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(idx):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            wt = w[idx].sum()
            value.append(float((w[idx] * y[idx]).sum() / wt) if wt > 0 else 0.0)
            return len(feature) - 1

        root = new_node(np.arange(len(y)))
        stack = [(root, np.arange(len(y)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            p = value[node]
            if p <= 0.0 or p >= 1.0:
                continue
            if self.max_depth is not None and depth >= self.max_depth:
                continue
            if len(idx) < 2 * self.min_leaf:
                continue
            candidates = np.arange(n_features)
            if max_features is not None and max_features < n_features:
                candidates = np.sort(rng.choice(n_features, size=max_features, replace=False))
            found = _best_split(X[idx], y[idx], w[idx], candidates, self.min_leaf)
            if found is None and len(candidates) < n_features:
                rest = np.setdiff1d(np.arange(n_features), candidates)
                found = _best_split(X[idx], y[idx], w[idx], rest, self.min_leaf)
            if found is None:
                continue
            j, thr = found
            go_left = X[idx, j] <= thr
            li, ri = idx[go_left], idx[~go_left]
            feature[node] = j
            threshold[node] = thr
            left[node] = new_node(li)
            right[node] = new_node(ri)
            # right pushed first so the left subtree is numbered first
            stack.append((right[node], ri, depth + 1))
            stack.append((left[node], li, depth + 1))

        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active[rows] = self.feature[node[rows]] >= 0
        return self.value[node]

    def predict(self, X):
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    @property
    def depth(self) -> int:
        depths = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if len(depths) else 0

    def get_params(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_params(cls, params: dict) -> DecisionTree:
        tree = cls(params["max_depth"], params["min_leaf"])
        tree.feature = np.asarray(params["feature"], dtype=np.int64)
        tree.threshold = np.asarray(params["threshold"], dtype=np.float64)
        tree.left = np.asarray(params["left"], dtype=np.int64)
        tree.right = np.asarray(params["right"], dtype=np.int64)
        tree.value = np.asarray(params["value"], dtype=np.float64)
        return tree


def _best_split(X, y, w, features, min_leaf):
    """Lowest weighted Gini split over ``features`` (ascending), or None."""
    n = len(y)
    total_w = w.sum()
    total_p = (w * y).sum()
    counts = np.arange(1, n)
    size_ok = (counts >= min_leaf) & (n - counts >= min_leaf)
    best_imp = math.inf
    best = None
    for j in features:
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        valid = (xs[:-1] < xs[1:]) & size_ok
        if not valid.any():
            continue
        ws = w[order]
        wl = np.cumsum(ws)[:-1]
        pl = np.cumsum(ws * y[order])[:-1]
        wr = total_w - wl
        pr = total_p - pl
        with np.errstate(divide="ignore", invalid="ignore"):
            imp = (2.0 * pl * (wl - pl) / wl + 2.0 * pr * (wr - pr) / wr) / total_w
        imp = np.where(valid, imp, np.inf)
        lo = imp.min()
        if lo < best_imp - _TIE:
            i = int(np.flatnonzero(imp <= lo + _TIE)[0])
            thr = (xs[i] + xs[i + 1]) / 2.0
            if thr >= xs[i + 1]:
                thr = xs[i]
            best_imp = lo
            best = (int(j), float(thr))
    return best


def _n_subsample(setting, n_features: int):
    if setting is None or setting == "all":
        return None
    if setting == "sqrt":
        return max(1, int(math.floor(math.sqrt(n_features))))
    if isinstance(setting, float) and setting <= 1.0:
        return max(1, int(round(setting * n_features)))
    return min(n_features, int(setting))


class RandomForest:
    """Bagged CART trees with per-split feature subsampling and majority vote.

    Tree ``i`` draws all its randomness from ``default_rng([seed, i])`` so
    trees can be grown in any order with identical results.
    """

    def __init__(self, n_trees=25, feature_subsample="sqrt", bootstrap=True, max_depth=None, min_leaf=1, seed=0):
        self.n_trees = n_trees
        self.feature_subsample = feature_subsample
        self.bootstrap = bootstrap
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.seed = seed
        self.trees: list[DecisionTree] = []

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        n = len(X)
        base_w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        k = _n_subsample(self.feature_subsample, X.shape[1])
        self.trees = []
        for i in range(self.n_trees):
            rng = np.random.default_rng([self.seed, i])
            w = base_w
            if self.bootstrap:
                w = base_w * np.bincount(rng.integers(0, n, size=n), minlength=n)
            tree = DecisionTree(self.max_depth, self.min_leaf)
            tree.fit(X, y, sample_weight=w, max_features=k, rng=rng)
            self.trees.append(tree)
        return self

    def predict(self, X):
        if len(X) == 0:
            return np.zeros(0, dtype=np.int64)
        votes = np.mean([t.predict(X) for t in self.trees], axis=0)
        return (votes > 0.5).astype(np.int64)

    def get_params(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "feature_subsample": self.feature_subsample,
            "bootstrap": self.bootstrap,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "seed": self.seed,
            "trees": [t.get_params() for t in self.trees],
        }

    @classmethod
    def from_params(cls, params: dict) -> RandomForest:
        forest = cls(
            params["n_trees"],
            params["feature_subsample"],
            params["bootstrap"],
            params["max_depth"],
            params["min_leaf"],
            params["seed"],
        )
        forest.trees = [DecisionTree.from_params(p) for p in params["trees"]]
        return forest
