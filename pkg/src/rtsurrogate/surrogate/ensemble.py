"""Tree-based regressors: one tree (or one ensemble) per output column."""

from __future__ import annotations

import math

import numpy as np

from .tree import Binning, BinnedData, PackedTrees, build_tree


def _as_2d(Y):
    Y = np.asarray(Y, dtype=float)
    return Y[:, None] if Y.ndim == 1 else Y


class DecisionTreeRegressor:
    def __init__(self, max_depth: int | None = None, min_samples_leaf: int = 1):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.packed = None
        self.n_outputs = 0

    def fit(self, X, Y, rng=None):
        Y = _as_2d(Y)
        trees = [build_tree(X, Y[:, j], self.max_depth, self.min_samples_leaf)[0]
                 for j in range(Y.shape[1])]
        self.packed = PackedTrees.pack(trees)
        self.n_outputs = Y.shape[1]
        return self

    def predict(self, X):
        return self.packed.leaf_values(X)

    def get_state(self) -> dict:
        return {**self.packed.get_state("trees/"), "n_outputs": np.array(self.n_outputs)}

    @classmethod
    def from_state(cls, state: dict, **params) -> DecisionTreeRegressor:
        model = cls(**params)
        model.packed = PackedTrees.from_state(state, "trees/")
        model.n_outputs = int(state["n_outputs"])
        return model


class RandomForestRegressor:
    """Bagged exact CART trees with ``floor(sqrt(d))`` candidate features per node."""

    def __init__(self, n_trees: int = 50, max_depth: int | None = 12, min_samples_leaf: int = 2,
                 max_features: int | None = None, seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.seed = seed
        self.packed = None
        self.n_outputs = 0

    def fit(self, X, Y, rng=None):
        X = np.asarray(X, dtype=float)
        Y = _as_2d(Y)
        n, d = X.shape
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        max_features = self.max_features or max(1, int(math.sqrt(d)))
        trees = []
        for j in range(Y.shape[1]):
            for _ in range(self.n_trees):
                idx = rng.integers(0, n, n)
                tree, _ = build_tree(X[idx], Y[idx, j], self.max_depth, self.min_samples_leaf,
                                     max_features, rng)
                trees.append(tree)
        self.packed = PackedTrees.pack(trees)
        self.n_outputs = Y.shape[1]
        return self

    def predict(self, X):
        values = self.packed.leaf_values(X)
        values = values.reshape(values.shape[0], self.n_outputs, self.n_trees)
        return values.sum(axis=2) / self.n_trees

    def get_state(self) -> dict:
        return {**self.packed.get_state("trees/"), "n_outputs": np.array(self.n_outputs)}

    @classmethod
    def from_state(cls, state: dict, **params) -> RandomForestRegressor:
        model = cls(**params)
        model.packed = PackedTrees.from_state(state, "trees/")
        model.n_outputs = int(state["n_outputs"])
        return model


class GradientBoostedTrees:
    """Least-squares gradient boosting of histogram CART trees.

    Leaf values are stored already multiplied by the learning rate, so a
    prediction is ``init + sum(tree values)``.
    """

    def __init__(self, n_trees: int = 400, max_depth: int = 6, learning_rate: float = 0.1,
                 min_samples_leaf: int = 1, max_bins: int = 255):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.max_bins = max_bins
        self.init = None
        self.packed = None
        self.loss_history = None

    def fit(self, X, Y, rng=None, binned: BinnedData | None = None):
        X = np.asarray(X, dtype=float)
        Y = _as_2d(Y)
        if binned is None:
            binned = Binning.fit(X, self.max_bins).bin(X)
        n_out = Y.shape[1]
        self.init = Y.mean(axis=0)
        self.loss_history = np.empty((n_out, self.n_trees + 1))
        trees = []
        for j in range(n_out):
            y = Y[:, j]
            current = np.full(y.shape, self.init[j])
            self.loss_history[j, 0] = np.mean((y - current) ** 2)
            for t in range(self.n_trees):
                tree, leaf = build_tree(None, y - current, self.max_depth, self.min_samples_leaf,
                                        binned=binned)
                tree.value *= self.learning_rate
                current += tree.value[leaf]
                self.loss_history[j, t + 1] = np.mean((y - current) ** 2)
                trees.append(tree)
        self.packed = PackedTrees.pack(trees)
        return self

    def predict(self, X, n_trees: int | None = None):
        values = self.packed.leaf_values(X)
        n_out = self.init.size
        values = values.reshape(values.shape[0], n_out, -1)
        if n_trees is not None:
            values = values[:, :, :n_trees]
        return self.init + values.sum(axis=2)

    def get_state(self) -> dict:
        return {**self.packed.get_state("trees/"), "init": self.init,
                "loss_history": self.loss_history}

    @classmethod
    def from_state(cls, state: dict, **params) -> GradientBoostedTrees:
        model = cls(**params)
        model.packed = PackedTrees.from_state(state, "trees/")
        model.init = np.asarray(state["init"])
        model.loss_history = np.asarray(state["loss_history"])
        return model
