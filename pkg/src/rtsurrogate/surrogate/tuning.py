"""Grid search with k-fold cross-validation."""

from __future__ import annotations

import itertools

import numpy as np

from .model import ModelSpec, fit

DEFAULT_GRIDS = {
    "linear": {"ridge": [1e-12]},
    "decision_tree": {"max_depth": [8, 12, None], "min_samples_leaf": [1, 5]},
    "random_forest": {"n_trees": [50], "max_depth": [8, 12]},
    "gbdt": {"n_trees": [200, 400], "max_depth": [4, 6], "learning_rate": [0.1]},
    "mlp": {"hidden": [[64, 64]], "learning_rate": [0.02, 0.05], "epochs": [100]},
}


def kfold_indices(n: int, folds: int, seed: int):
    order = np.random.default_rng(seed).permutation(n)
    return np.array_split(order, folds)


def grid_search(spec: ModelSpec, X, Y, grid: dict, folds: int = 3, seed: int = 0):
    """Return the spec with the lowest mean validation MSE and the full score table.

    Each row of the table is ``(params, mean_mse)``; ties keep the earlier
    grid point.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if folds < 2 or X.shape[0] < folds:
        raise ValueError("need at least two folds and one row per fold")
    parts = kfold_indices(X.shape[0], folds, seed)
    names = sorted(grid)
    table = []
    best = None
    for values in itertools.product(*(grid[name] for name in names)):
        params = dict(zip(names, values))
        candidate = spec.with_params(**params)
        scores = []
        for k in range(folds):
            train = np.concatenate([p for i, p in enumerate(parts) if i != k])
            model = fit(candidate, (X[train], Y[train]))
            diff = model.predict(X[parts[k]]) - Y[parts[k]]
            scores.append(float(np.mean(diff * diff)))
        score = float(np.mean(scores))
        table.append((params, score))
        if best is None or score < best[1]:
            best = (candidate, score)
    return best[0], table
