from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MinMaxScaler:
    """Per-column affine map of [min, max] onto [-1, 1].

    Constant columns (max == min) map to 0 and invert back to their value.
    """

    data_min: np.ndarray
    data_max: np.ndarray

    @classmethod
    def fit(cls, data) -> MinMaxScaler:
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] == 0:
            raise ValueError("scaler needs a non-empty 2D array")
        return cls(data.min(axis=0), data.max(axis=0))

    @property
    def _half_range(self):
        return (self.data_max - self.data_min) / 2.0

    @property
    def _center(self):
        return (self.data_max + self.data_min) / 2.0

    def transform(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        half = self._half_range
        safe = np.where(half > 0, half, 1.0)
        return np.where(half > 0, (data - self._center) / safe, 0.0)

    def inverse_transform(self, scaled) -> np.ndarray:
        scaled = np.asarray(scaled, dtype=float)
        return scaled * self._half_range + self._center

    def to_dict(self) -> dict:
        return {"data_min": self.data_min.tolist(), "data_max": self.data_max.tolist()}

    @classmethod
    def from_dict(cls, state: dict) -> MinMaxScaler:
        return cls(np.array(state["data_min"], dtype=float), np.array(state["data_max"], dtype=float))
