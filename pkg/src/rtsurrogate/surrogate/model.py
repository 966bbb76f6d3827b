"""Model specifications, fitting, prediction and the on-disk model format."""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .ensemble import DecisionTreeRegressor, GradientBoostedTrees, RandomForestRegressor
from .linear import LinearRegressor
from .mlp import ACTIVATIONS, MLPRegressor
from .scaling import MinMaxScaler

N_FEATURES = 6
N_TARGETS = 3
FORMAT_NAME = "rtsurrogate-model"
FORMAT_VERSION = 1


class InvalidSpec(ValueError):
    pass


class DegenerateData(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class ModelKind(str, Enum):
    LINEAR = "linear"
    DECISION_TREE = "decision_tree"
    RANDOM_FOREST = "random_forest"
    GRADIENT_BOOSTED_TREES = "gbdt"
    MULTILAYER_PERCEPTRON = "mlp"


DEFAULT_HYPERPARAMS = {
    ModelKind.LINEAR: {"ridge": 1e-12},
    ModelKind.DECISION_TREE: {"max_depth": None, "min_samples_leaf": 1},
    ModelKind.RANDOM_FOREST: {"n_trees": 50, "max_depth": 12, "min_samples_leaf": 2,
                              "max_features": None},
    ModelKind.GRADIENT_BOOSTED_TREES: {"n_trees": 400, "max_depth": 6, "learning_rate": 0.1,
                                       "min_samples_leaf": 1, "max_bins": 255},
    ModelKind.MULTILAYER_PERCEPTRON: {"hidden": [64, 64], "activation": "tanh", "epochs": 150,
                                      "batch_size": 64, "learning_rate": 0.05, "momentum": 0.9},
}

_REGRESSORS = {
    ModelKind.LINEAR: LinearRegressor,
    ModelKind.DECISION_TREE: DecisionTreeRegressor,
    ModelKind.RANDOM_FOREST: RandomForestRegressor,
    ModelKind.GRADIENT_BOOSTED_TREES: GradientBoostedTrees,
    ModelKind.MULTILAYER_PERCEPTRON: MLPRegressor,
}

# hyperparameters that must be strictly positive when set
_POSITIVE = {"n_trees", "max_depth", "min_samples_leaf", "max_features", "learning_rate",
             "epochs", "batch_size", "max_bins"}


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    params: dict = field(default_factory=dict)
    residual_connection: bool = False
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ModelKind(self.kind))
        except ValueError:
            raise InvalidSpec(f"unknown model kind {self.kind!r}") from None
        defaults = DEFAULT_HYPERPARAMS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise InvalidSpec(f"unknown hyperparameters for {self.kind.value}: {sorted(unknown)}")
        merged = {**defaults, **self.params}
        for name, value in merged.items():
            if name in _POSITIVE and value is not None and not value > 0:
                raise InvalidSpec(f"{name} must be positive, got {value!r}")
        if merged.get("ridge", 0.0) < 0:
            raise InvalidSpec("ridge must be non-negative")
        if self.kind is ModelKind.MULTILAYER_PERCEPTRON:
            if not merged["hidden"] or any(int(h) <= 0 for h in merged["hidden"]):
                raise InvalidSpec("hidden layer sizes must be positive")
            if merged["activation"] not in ACTIVATIONS:
                raise InvalidSpec(f"unknown activation {merged['activation']!r}")
            if not 0 <= merged["momentum"] < 1:
                raise InvalidSpec("momentum must lie in [0, 1)")
        object.__setattr__(self, "params", merged)

    @property
    def name(self) -> str:
        return self.kind.value + ("+residual" if self.residual_connection else "")

    def build(self):
        params = dict(self.params)
        if self.kind in (ModelKind.RANDOM_FOREST, ModelKind.MULTILAYER_PERCEPTRON):
            params["seed"] = self.seed
        return _REGRESSORS[self.kind](**params)

    def with_params(self, **params) -> ModelSpec:
        return ModelSpec(self.kind, {**self.params, **params}, self.residual_connection, self.seed)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "params": dict(self.params),
                "residual_connection": self.residual_connection, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> ModelSpec:
        return cls(data["kind"], dict(data.get("params", {})),
                   bool(data.get("residual_connection", False)), int(data.get("seed", 0)))


def _check_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and X.size == N_FEATURES:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ShapeMismatch(f"expected inputs of shape (n, {N_FEATURES}), got {X.shape}")
    return X


def _unpack_training_data(train):
    if hasattr(train, "features") and hasattr(train, "targets"):
        return train.features, train.targets, getattr(train, "digest", None)
    X, Y = train
    return X, Y, None


@dataclass
class TrainedModel:
    spec: ModelSpec
    regressor: object
    feature_scaler: MinMaxScaler
    target_scaler: MinMaxScaler
    metadata: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = _check_features(X)
        if X.shape[0] == 0:
            return np.zeros((0, N_TARGETS))
        raw = self.regressor.predict(self.feature_scaler.transform(X))
        out = self.target_scaler.inverse_transform(np.asarray(raw).reshape(X.shape[0], N_TARGETS))
        if self.spec.residual_connection:
            out = out + X[:, :N_TARGETS]
        return np.maximum(out, 0.0)

    @property
    def loss_history(self):
        return self.metadata.get("loss_history")

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "feature_scaler": self.feature_scaler.to_dict(),
            "target_scaler": self.target_scaler.to_dict(),
            "metadata": self.metadata,
        }
        arrays = {f"reg/{k}": np.asarray(v) for k, v in self.regressor.get_state().items()}
        # scaler bounds are stored as arrays too so they survive without decimal round trips
        arrays["scaler/feature_min"] = self.feature_scaler.data_min
        arrays["scaler/feature_max"] = self.feature_scaler.data_max
        arrays["scaler/target_min"] = self.target_scaler.data_min
        arrays["scaler/target_max"] = self.target_scaler.data_max
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        buffer = io.BytesIO()
        np.savez(buffer, **arrays)
        path.write_bytes(buffer.getvalue())
        return path

    @classmethod
    def load(cls, path) -> TrainedModel:
        with np.load(Path(path), allow_pickle=False) as data:
            if "meta" not in data.files:
                raise InvalidSpec(f"{path} is not a model file")
            meta = json.loads(data["meta"].tobytes().decode())
            if meta.get("format") != FORMAT_NAME or meta.get("version") != FORMAT_VERSION:
                raise InvalidSpec(f"unsupported model format {meta.get('format')!r} "
                                  f"version {meta.get('version')!r}")
            state = {k[4:]: data[k] for k in data.files if k.startswith("reg/")}
            feature_scaler = MinMaxScaler(data["scaler/feature_min"], data["scaler/feature_max"])
            target_scaler = MinMaxScaler(data["scaler/target_min"], data["scaler/target_max"])
        spec = ModelSpec.from_dict(meta["spec"])
        regressor_cls = _REGRESSORS[spec.kind]
        if spec.kind is ModelKind.LINEAR:
            regressor = regressor_cls.from_state(state)
        else:
            params = dict(spec.params)
            if spec.kind in (ModelKind.RANDOM_FOREST, ModelKind.MULTILAYER_PERCEPTRON):
                params["seed"] = spec.seed
            regressor = regressor_cls.from_state(state, **params)
        return cls(spec, regressor, feature_scaler, target_scaler, meta["metadata"])


def fit(spec: ModelSpec, train, dataset_id: str | None = None) -> TrainedModel:
    """Fit ``spec`` on a dataset (or an ``(X, Y)`` pair) by least squares on scaled data.

    With ``residual_connection`` the regressor learns the change of the
    aqueous cations, which :meth:`TrainedModel.predict` adds back.
    """
    X, Y, digest = _unpack_training_data(train)
    X = _check_features(X)
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (X.shape[0], N_TARGETS):
        raise ShapeMismatch(f"expected targets of shape ({X.shape[0]}, {N_TARGETS}), got {Y.shape}")
    if X.shape[0] == 0:
        raise DegenerateData("training set is empty")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise DegenerateData("training data contains non-finite values")
    target = Y - X[:, :N_TARGETS] if spec.residual_connection else Y
    feature_scaler = MinMaxScaler.fit(X)
    target_scaler = MinMaxScaler.fit(target)
    regressor = spec.build()
    start = time.perf_counter()
    regressor.fit(feature_scaler.transform(X), target_scaler.transform(target),
                  rng=np.random.default_rng(spec.seed))
    elapsed = time.perf_counter() - start
    metadata = {"dataset_id": dataset_id or digest, "n_train": int(X.shape[0]),
                "fit_seconds": elapsed}
    history = getattr(regressor, "loss_history", None)
    if history is not None and len(history):
        metadata["loss_history"] = np.asarray(history, dtype=float).tolist()
    return TrainedModel(spec, regressor, feature_scaler, target_scaler, metadata)


def benchmark_predict(model: TrainedModel, batch_sizes, repeats: int = 100,
                      seed: int = 0) -> list[tuple[int, float]]:
    """Mean wall-clock seconds of ``model.predict`` per batch size.

    Inputs are drawn uniformly inside the training feature range.
    """
    rng = np.random.default_rng(seed)
    lo, hi = model.feature_scaler.data_min, model.feature_scaler.data_max
    rows = []
    for size in batch_sizes:
        X = lo + (hi - lo) * rng.random((int(size), N_FEATURES))
        model.predict(X)  # warm-up
        start = time.perf_counter()
        for _ in range(repeats):
            model.predict(X)
        rows.append((int(size), (time.perf_counter() - start) / repeats))
    return rows
