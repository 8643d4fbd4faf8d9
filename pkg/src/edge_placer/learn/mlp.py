"""Multilayer perceptron classifier with hand-written backpropagation.

ReLU hidden layers, a softmax output layer and the loss

    mean cross-entropy + alpha / 2 * sum of squared weights

(biases are not penalized), trained by minibatch gradient descent with
momentum. The penalty term is taken as an implicit step, which keeps large
``alpha`` values stable. Training stops at the epoch budget or when the
validation accuracy has not improved for ``patience`` epochs; the best weights
seen are kept.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..world import make_rng


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], X: np.ndarray):
    """Activations of every layer; the last entry holds class probabilities."""
    acts = [X]
    h = X
    last = len(weights) - 1
    for layer, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        h = softmax(z) if layer == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def loss_and_grad(weights, biases, X, y, alpha) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Penalized loss and its gradients; ``y`` holds class positions 0..K-1."""
    n = X.shape[0]
    acts = forward(weights, biases, X)
    prob = acts[-1]
    rows = np.arange(n)
    ce = -np.log(np.maximum(prob[rows, y], 1e-300)).mean()
    loss = ce + 0.5 * alpha * sum(float((W * W).sum()) for W in weights)

    delta = prob.copy()
    delta[rows, y] -= 1.0
    delta /= n
    gw: List[np.ndarray] = [None] * len(weights)
    gb: List[np.ndarray] = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        gw[layer] = acts[layer].T @ delta + alpha * weights[layer]
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ weights[layer].T) * (acts[layer] > 0)
    return loss, gw, gb


class MlpClassifier(ClassifierMixin, BaseEstimator):
    def __init__(
        self,
        hidden_layer_sizes=(256, 128, 64, 32, 16, 8, 6),
        alpha=1e-3,
        learning_rate=0.01,
        momentum=0.9,
        batch_size=64,
        max_epochs=200,
        patience=10,
        validation_fraction=0.1,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _init_params(self, sizes, rng):
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-limit, limit, size=fan_out))
        return weights, biases

    def fit(self, X, y, classes=None):
        """Train on ``X``; ``classes`` fixes the output layer (each must occur in ``y``)."""
        X, y = check_X_y(X, y)
        present = np.unique(y)
        if classes is None:
            self.classes_ = present
        else:
            self.classes_ = np.asarray(sorted(classes))
            missing = np.setdiff1d(self.classes_, present)
            if missing.size:
                raise ValueError(f"classes without training examples: {missing.tolist()}")
            if np.setdiff1d(present, self.classes_).size:
                raise ValueError("training labels outside the declared classes")
        self.n_features_in_ = X.shape[1]
        yi = np.searchsorted(self.classes_, y)
        sizes = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        rng = make_rng(int(self.random_state))
        weights, biases = self._init_params(sizes, rng)

        n = X.shape[0]
        n_val = int(round(self.validation_fraction * n)) if n >= 10 else 0
        perm = rng.permutation(n)
        val, tr = perm[:n_val], perm[n_val:]
        vw = [np.zeros_like(W) for W in weights]
        vb = [np.zeros_like(b) for b in biases]
        best = (-1.0, [W.copy() for W in weights], [b.copy() for b in biases])
        stale = 0
        # the penalty is applied as an implicit (proximal) step, stable for any alpha
        shrink = 1.0 / (1.0 + self.learning_rate * self.alpha)
        self.loss_curve_ = []
        for epoch in range(int(self.max_epochs)):
            order = tr[rng.permutation(len(tr))]
            total = 0.0
            for start in range(0, len(order), int(self.batch_size)):
                batch = order[start : start + int(self.batch_size)]
                loss, gw, gb = loss_and_grad(weights, biases, X[batch], yi[batch], 0.0)
                total += loss * len(batch)
                for layer in range(len(weights)):
                    vw[layer] = self.momentum * vw[layer] - self.learning_rate * gw[layer]
                    vb[layer] = self.momentum * vb[layer] - self.learning_rate * gb[layer]
                    weights[layer] += vw[layer]
                    weights[layer] *= shrink
                    biases[layer] += vb[layer]
            self.loss_curve_.append(total / max(1, len(order)))
            if not np.isfinite(self.loss_curve_[-1]):
                break
            rows = val if n_val else tr
            acc = float((forward(weights, biases, X[rows])[-1].argmax(1) == yi[rows]).mean())
            if acc > best[0]:
                best = (acc, [W.copy() for W in weights], [b.copy() for b in biases])
                stale = 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.n_epochs_ = len(self.loss_curve_)
        self.coefs_, self.intercepts_ = best[1], best[2]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coefs_")
        X = check_array(X)
        return forward(self.coefs_, self.intercepts_, X)[-1]

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def to_dict(self) -> dict:
        check_is_fitted(self, "coefs_")
        params = self.get_params()
        params["hidden_layer_sizes"] = list(params["hidden_layer_sizes"])
        return {
            "kind": "mlp",
            "params": params,
            "classes": self.classes_.tolist(),
            "weights": [W.tolist() for W in self.coefs_],
            "biases": [b.tolist() for b in self.intercepts_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpClassifier":
        params = dict(d["params"])
        params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
        m = cls(**params)
        m.classes_ = np.asarray(d["classes"])
        m.coefs_ = [np.asarray(W, dtype=float) for W in d["weights"]]
        m.intercepts_ = [np.asarray(b, dtype=float) for b in d["biases"]]
        m.n_features_in_ = m.coefs_[0].shape[0]
        return m


def train_mlp(X, labels, layers=(256, 128, 64, 32, 16, 8, 6), alpha=1e-3, **config) -> MlpClassifier:
    return MlpClassifier(hidden_layer_sizes=tuple(layers), alpha=alpha, **config).fit(X, labels)
