"""Fully connected ReLU network with a logistic output, trained with Adam."""

from __future__ import annotations

import numpy as np

from .linear import standardizer


def init_params(n_in, hidden_sizes, rng):
    sizes = [n_in, *hidden_sizes, 1]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params.append([W, np.zeros(fan_out)])
    return params


def forward(params, X):
    """Return the output logits and the per-layer activations."""
    acts = [X]
    h = X
    for W, b in params[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = params[-1]
    return (h @ W + b)[:, 0], acts


def loss_and_grad(params, X, y, sample_weight=None):
    """Mean binary cross-entropy on logits and its gradient w.r.t. every parameter."""
    n = len(y)
    sw = np.ones(n) if sample_weight is None else sample_weight
    z, acts = forward(params, X)
    # log(1 + e^z) - y z, written to stay finite for large |z|
    loss = float(np.sum(sw * (np.logaddexp(0.0, z) - y * z)) / n)
    delta = (sw * (1.0 / (1.0 + np.exp(-z)) - y) / n)[:, None]
    grads = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        a = acts[layer]
        grads[layer] = [a.T @ delta, delta.sum(axis=0)]
        if layer:
            delta = (delta @ W.T) * (a > 0)
    return loss, grads


class FeedForwardNet:
    def __init__(self, hidden_sizes=(64, 64), epochs=50, learning_rate=1e-3, batch_size=64, seed=0):
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.mean_, self.std_ = standardizer(X)
        Z = (X - self.mean_) / self.std_
        sw = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        params = init_params(Z.shape[1], self.hidden_sizes, rng)
        m = [[np.zeros_like(p) for p in layer] for layer in params]
        v = [[np.zeros_like(p) for p in layer] for layer in params]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        t = 0
        for _ in range(self.epochs):
            order = rng.permutation(len(y))
            for start in range(0, len(order), self.batch_size):
                batch = order[start : start + self.batch_size]
                _, grads = loss_and_grad(params, Z[batch], y[batch], sw[batch])
                t += 1
                for layer, g_layer in enumerate(grads):
                    for k, g in enumerate(g_layer):
                        m[layer][k] = beta1 * m[layer][k] + (1 - beta1) * g
                        v[layer][k] = beta2 * v[layer][k] + (1 - beta2) * g * g
                        mh = m[layer][k] / (1 - beta1**t)
                        vh = v[layer][k] / (1 - beta2**t)
                        params[layer][k] = params[layer][k] - self.learning_rate * mh / (np.sqrt(vh) + eps)
        self.params_ = params
        return self

    def decision_function(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mean_) / self.std_
        return forward(self.params_, Z)[0]

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)

    def get_params(self) -> dict:
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "mean": self.mean_.tolist(),
            "std": self.std_.tolist(),
            "layers": [[W.tolist(), b.tolist()] for W, b in self.params_],
        }

    @classmethod
    def from_params(cls, p: dict) -> FeedForwardNet:
        net = cls(p["hidden_sizes"], p["epochs"], p["learning_rate"], p["batch_size"], p["seed"])
        net.mean_ = np.asarray(p["mean"])
        net.std_ = np.asarray(p["std"])
        net.params_ = [[np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)] for W, b in p["layers"]]
        return net
