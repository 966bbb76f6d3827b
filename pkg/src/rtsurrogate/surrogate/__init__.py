"""Regression surrogates for the chemistry step."""

from .model import (
    DEFAULT_HYPERPARAMS,
    DegenerateData,
    InvalidSpec,
    ModelKind,
    ModelSpec,
    ShapeMismatch,
    TrainedModel,
    benchmark_predict,
    fit,
)
from .scaling import MinMaxScaler
from .tuning import DEFAULT_GRIDS, grid_search

__all__ = [
    "DEFAULT_GRIDS",
    "DEFAULT_HYPERPARAMS",
    "DegenerateData",
    "InvalidSpec",
    "MinMaxScaler",
    "ModelKind",
    "ModelSpec",
    "ShapeMismatch",
    "TrainedModel",
    "benchmark_predict",
    "fit",
    "grid_search",
]
