"""Error metrics for one-shot predictions and rollouts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class LengthMismatch(ValueError):
    pass


class DegenerateTruth(ValueError):
    pass


class GridMismatch(ValueError):
    pass


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.ndim == 1:
        truth = truth[None, :]
    if pred.ndim == 1:
        pred = pred[None, :]
    if truth.shape != pred.shape:
        raise LengthMismatch(f"truth {truth.shape} and prediction {pred.shape} differ")
    if truth.shape[0] == 0:
        raise LengthMismatch("need at least one sample")
    return truth, pred


def mse(truth, pred) -> float:
    """Squared error averaged over the target columns and then over samples."""
    truth, pred = _pair(truth, pred)
    return float(np.mean((truth - pred) ** 2))


def rmse(truth, pred) -> float:
    return math.sqrt(mse(truth, pred))


def r2(truth, pred) -> float:
    """Coefficient of determination pooled over all targets.

    Each target is centred on its own mean before the sums are pooled.
    """
    truth, pred = _pair(truth, pred)
    if truth.shape[0] < 2:
        raise DegenerateTruth("need at least two samples")
    total = float(np.sum((truth - truth.mean(axis=0)) ** 2))
    if total == 0:
        raise DegenerateTruth("truth is constant")
    return 1.0 - float(np.sum((truth - pred) ** 2)) / total


@dataclass
class ErrorReport:
    mse: float
    rmse: float
    r2: float
    mse_per_target: list
    rmse_per_target: list
    r2_per_target: list
    n_samples: int

    @classmethod
    def compute(cls, truth, pred) -> ErrorReport:
        truth, pred = _pair(truth, pred)
        per_mse = np.mean((truth - pred) ** 2, axis=0)
        per_r2 = []
        for j in range(truth.shape[1]):
            total = np.sum((truth[:, j] - truth[:, j].mean()) ** 2)
            per_r2.append(float(1 - np.sum((truth[:, j] - pred[:, j]) ** 2) / total)
                          if total > 0 else float("nan"))
        try:
            pooled_r2 = r2(truth, pred)
        except DegenerateTruth:
            pooled_r2 = float("nan")
        value = mse(truth, pred)
        return cls(value, math.sqrt(value), pooled_r2, per_mse.tolist(),
                   np.sqrt(per_mse).tolist(), per_r2, int(truth.shape[0]))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["target", "mse", "rmse", "r2", "n_samples"])
            for name, m, r, q in zip(("na", "k", "ca"), self.mse_per_target,
                                     self.rmse_per_target, self.r2_per_target):
                writer.writerow([name, repr(m), repr(r), repr(q), self.n_samples])
            writer.writerow(["pooled", repr(self.mse), repr(self.rmse), repr(self.r2),
                             self.n_samples])
        return path


def rollout_error(ref, test, outflow_only: bool = False) -> float:
    """Mean over time steps of the per-step RMSE of the cation concentrations.

    By default the RMSE runs over every cell; ``outflow_only`` restricts it
    to the outlet cell.
    """
    if ref.n_steps != test.n_steps or not np.array_equal(ref.time, test.time):
        raise GridMismatch("rollouts have different time grids")
    if outflow_only:
        a = ref.outflow[:, None, :3]
        b = test.outflow[:, None, :3]
    else:
        if ref.cation_fields is None or test.cation_fields is None:
            raise GridMismatch("full-field error needs recorded cation fields")
        a, b = ref.cation_fields, test.cation_fields
        if a.shape != b.shape:
            raise GridMismatch(f"cell grids differ: {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        return 0.0
    per_step = np.sqrt(np.mean((a - b) ** 2, axis=(1, 2)))
    return float(per_step.mean())


def per_step_rmse(ref, test) -> np.ndarray:
    """Full-field RMSE at every step (useful for plotting error growth)."""
    if ref.cation_fields is None or test.cation_fields is None:
        raise GridMismatch("need recorded cation fields")
    if ref.cation_fields.shape != test.cation_fields.shape:
        raise GridMismatch("cell grids differ")
    return np.sqrt(np.mean((ref.cation_fields - test.cation_fields) ** 2, axis=(1, 2)))
