"""Fully connected regressor trained by mini-batch gradient descent with momentum."""

from __future__ import annotations

import math

import numpy as np

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0).astype(float)),
}


class MLPRegressor:
    """Multilayer perceptron with a linear output layer and mean-squared-error loss.

    Weights use Glorot-uniform initialisation from ``seed``; the learning
    rate follows a cosine schedule over the epochs.
    """

    def __init__(self, hidden=(64, 64), activation: str = "tanh", epochs: int = 150,
                 batch_size: int = 64, learning_rate: float = 0.05, momentum: float = 0.9,
                 seed: int = 0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.seed = seed
        self.weights = []
        self.biases = []
        self.loss_history = []

    def init_params(self, n_in: int, n_out: int, rng):
        sizes = (n_in, *self.hidden, n_out)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def _forward(self, X):
        act = ACTIVATIONS[self.activation][0]
        outputs = [X]
        a = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = z if i == last else act(z)
            outputs.append(a)
        return outputs

    def loss_and_grads(self, X, Y):
        """Mean squared error over all entries and its parameter gradients."""
        grad_act = ACTIVATIONS[self.activation][1]
        outputs = self._forward(X)
        diff = outputs[-1] - Y
        loss = float(np.mean(diff * diff))
        delta = 2.0 * diff / diff.size
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = outputs[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * grad_act(outputs[i])
        return loss, grads_w, grads_b

    def fit(self, X, Y, rng=None):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        rng = np.random.default_rng(self.seed) if rng is None else rng
        self.init_params(X.shape[1], Y.shape[1], rng)
        vel_w = [np.zeros_like(W) for W in self.weights]
        vel_b = [np.zeros_like(b) for b in self.biases]
        n = X.shape[0]
        self.loss_history = []
        for epoch in range(self.epochs):
            lr = 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * epoch / self.epochs))
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                batch = order[start:start + self.batch_size]
                loss, gw, gb = self.loss_and_grads(X[batch], Y[batch])
                total += loss * batch.size
                for i in range(len(self.weights)):
                    vel_w[i] = self.momentum * vel_w[i] - lr * gw[i]
                    vel_b[i] = self.momentum * vel_b[i] - lr * gb[i]
                    self.weights[i] += vel_w[i]
                    self.biases[i] += vel_b[i]
            self.loss_history.append(total / n)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        act = ACTIVATIONS[self.activation][0]
        a = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            # explicit accumulation: BLAS kernels differ between batch sizes
            z = np.broadcast_to(b, (a.shape[0], b.size)).copy()
            for j in range(W.shape[0]):
                z += a[:, j:j + 1] * W[j]
            a = z if i == last else act(z)
        return a

    def get_state(self) -> dict:
        state = {"n_layers": np.array(len(self.weights)),
                 "loss_history": np.asarray(self.loss_history, dtype=float)}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            state[f"W{i}"] = W
            state[f"b{i}"] = b
        return state

    @classmethod
    def from_state(cls, state: dict, **params) -> MLPRegressor:
        model = cls(**params)
        n_layers = int(state["n_layers"])
        model.weights = [np.asarray(state[f"W{i}"]) for i in range(n_layers)]
        model.biases = [np.asarray(state[f"b{i}"]) for i in range(n_layers)]
        model.loss_history = list(np.asarray(state["loss_history"]))
        return model
