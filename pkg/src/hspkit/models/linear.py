"""Linear max-margin classifier trained with SGD on the hinge loss."""

from __future__ import annotations

import numpy as np


def standardizer(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


class LinearMargin:
    """Soft-margin linear SVM.

    Minimizes ``reg/2 * |w|^2 + mean(max(0, 1 - y * (w.x + b)))`` over
    standardized inputs with shuffled minibatch subgradient steps and a
    ``lr / (1 + lr * reg * t)`` step schedule.
    """

    def __init__(self, epochs=30, learning_rate=0.05, regularization=1e-4, batch_size=16, seed=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.regularization = regularization
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        self.mean_, self.std_ = standardizer(X)
        Z = (X - self.mean_) / self.std_
        s = np.where(np.asarray(y) > 0, 1.0, -1.0)
        sw = np.ones(len(s)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        w = np.zeros(Z.shape[1])
        b = 0.0
        lam = self.regularization
        t = 0
        for _ in range(self.epochs):
            order = rng.permutation(len(s))
            for start in range(0, len(order), self.batch_size):
                batch = order[start : start + self.batch_size]
                eta = self.learning_rate / (1.0 + self.learning_rate * lam * t)
                margin = s[batch] * (Z[batch] @ w + b)
                active = margin < 1.0
                coef = sw[batch][active] * s[batch][active]
                gw = lam * w - coef @ Z[batch][active] / len(batch)
                gb = -coef.sum() / len(batch)
                w -= eta * gw
                b -= eta * gb
                t += 1
        self.coef_ = w
        self.intercept_ = b
        return self

    def decision_function(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mean_) / self.std_
        return Z @ self.coef_ + self.intercept_

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)

    def get_params(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "regularization": self.regularization,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "mean": self.mean_.tolist(),
            "std": self.std_.tolist(),
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_,
        }

    @classmethod
    def from_params(cls, p: dict) -> LinearMargin:
        m = cls(p["epochs"], p["learning_rate"], p["regularization"], p["batch_size"], p["seed"])
        m.mean_ = np.asarray(p["mean"])
        m.std_ = np.asarray(p["std"])
        m.coef_ = np.asarray(p["coef"])
        m.intercept_ = float(p["intercept"])
        return m
