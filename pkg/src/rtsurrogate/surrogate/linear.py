from __future__ import annotations

import numpy as np

RIDGE = 1e-12


class LinearRegressor:
    """Ordinary least squares with an unpenalised intercept.

    Solved through the normal equations; a ridge term of ``RIDGE`` times the
    mean diagonal keeps them invertible for collinear inputs.
    """

    def __init__(self, ridge: float = RIDGE):
        self.ridge = ridge
        self.coef = None
        self.intercept = None

    def fit(self, X, Y, rng=None):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        x_mean = X.mean(axis=0)
        y_mean = Y.mean(axis=0)
        Xc = X - x_mean
        gram = Xc.T @ Xc
        reg = self.ridge * max(np.trace(gram) / max(gram.shape[0], 1), 1.0)
        gram[np.diag_indices_from(gram)] += reg
        self.coef = np.linalg.solve(gram, Xc.T @ (Y - y_mean))
        self.intercept = y_mean - x_mean @ self.coef
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        # column-by-column accumulation keeps results independent of batch size
        out = np.broadcast_to(self.intercept, (X.shape[0], self.coef.shape[1])).copy()
        for j in range(self.coef.shape[0]):
            out += X[:, j:j + 1] * self.coef[j]
        return out

    def get_state(self) -> dict:
        return {"coef": self.coef, "intercept": self.intercept, "ridge": np.array(self.ridge)}

    @classmethod
    def from_state(cls, state: dict) -> LinearRegressor:
        model = cls(float(state["ridge"]))
        model.coef = np.asarray(state["coef"])
        model.intercept = np.asarray(state["intercept"])
        return model
