"""Experiment configuration: one JSON document with nested sections and full defaults."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .coupling import DEFAULT_ORACLE_PERIOD, CouplingConfig
from .dataset import SamplerKind, SamplerSpec
from .geochem import ExchangeParams
from .surrogate import DEFAULT_GRIDS, ModelSpec
from .transport import TransportConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "output_dir": "results",
    "transport": TransportConfig().to_dict(),
    "exchange": {k: v for k, v in ExchangeParams().to_dict().items()},
    "coupling": {"skip_rtol": 1e-9, "oracle_period": DEFAULT_ORACLE_PERIOD},
    # samplers without explicit bounds or moments take them from an oracle rollout
    "samplers": {
        "vanilla": {"kind": "vanilla", "n": 100_000},
        "vanilla_zeros": {"kind": "vanilla_zeros", "n": 100_000, "zero_prob": 0.3},
        "ranged": {"kind": "ranged", "n": 100_000},
        "ranged_zeros": {"kind": "ranged_zeros", "n": 100_000, "zero_prob": 0.3},
        "covariance": {"kind": "covariance", "n": 100_000},
    },
    "models": {
        "linear": {"kind": "linear"},
        "decision_tree": {"kind": "decision_tree"},
        "random_forest": {"kind": "random_forest"},
        "gbdt": {"kind": "gbdt"},
        "gbdt_residual": {"kind": "gbdt", "residual_connection": True},
        "mlp": {"kind": "mlp"},
        "mlp_residual": {"kind": "mlp", "residual_connection": True},
    },
    "split": {"train_fraction": 0.8},
    "tuning": {"enabled": False, "folds": 3, "grids": DEFAULT_GRIDS},
    "ablation": {
        "model": "gbdt_residual",
        "sampler": "vanilla_zeros",
        "presets": ["none", "mod1", "mod1+2", "mod1+2+3"],
    },
    "sweep": {
        "model": "gbdt_residual",
        "samplers": ["vanilla", "vanilla_zeros", "ranged_zeros"],
        "sizes": [4000, 20000, 100000],
        "preset": "none",
    },
    "bench": {"models": ["linear", "gbdt_residual", "mlp_residual"],
              "batch_sizes": [1, 10, 100, 1000, 10000], "repeats": 100},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base and path not in ("samplers", "models", "tuning.grids"):
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(value, dict) and isinstance(base.get(key), dict) and key != "grids":
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, override: dict | None = None) -> ExperimentConfig:
        return cls(_merge(DEFAULTS, override or {}))

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def with_seed(self, seed: int) -> ExperimentConfig:
        data = copy.deepcopy(self.data)
        data["seed"] = int(seed)
        return ExperimentConfig(data)

    def validate(self):
        """Build every nested object once so errors surface before any work starts."""
        try:
            seed = self.data["seed"]
            if int(seed) != seed or seed < 0:
                raise ConfigError("seed must be a non-negative integer")
            self.transport
            self.exchange
            self.coupling("mod1+2+3")
            for name in self.data["samplers"]:
                self.sampler(name, bounds=None)
            for name in self.data["models"]:
                self.model(name)
            fraction = self.data["split"]["train_fraction"]
            if not 0 < fraction < 1:
                raise ConfigError("split.train_fraction must lie in (0, 1)")
            for section in ("ablation", "sweep"):
                ref = self.data[section]
                if ref["model"] not in self.data["models"]:
                    raise ConfigError(f"{section}.model {ref['model']!r} is not a defined model")
            if self.data["ablation"]["sampler"] not in self.data["samplers"]:
                raise ConfigError("ablation.sampler is not a defined sampler")
            for name in self.data["sweep"]["samplers"]:
                if name not in self.data["samplers"]:
                    raise ConfigError(f"sweep sampler {name!r} is not defined")
            for name in self.data["bench"]["models"]:
                if name not in self.data["models"]:
                    raise ConfigError(f"bench model {name!r} is not defined")
            if self.data["bench"]["repeats"] < 1:
                raise ConfigError("bench.repeats must be at least 1")
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    @property
    def transport(self) -> TransportConfig:
        return TransportConfig(**self.data["transport"])

    @property
    def exchange(self) -> ExchangeParams:
        return ExchangeParams(**self.data["exchange"])

    def coupling(self, preset: str) -> CouplingConfig:
        base = CouplingConfig.preset(preset)
        section = self.data["coupling"]
        period = base.oracle_period and section["oracle_period"]
        return CouplingConfig(base.backend, base.skip_equilibrium, section["skip_rtol"], period,
                              base.charge_rescale)

    def needs_bootstrap(self, name: str) -> bool:
        entry = self.data["samplers"][name]
        kind = SamplerKind(entry["kind"])
        if kind is SamplerKind.COVARIANCE:
            return entry.get("mean") is None or entry.get("cov") is None
        if kind in (SamplerKind.RANGED, SamplerKind.RANGED_ZEROS):
            return entry.get("lo") is None or entry.get("hi") is None
        return False

    def sampler(self, name: str, bounds=None, n: int | None = None) -> SamplerSpec:
        """Sampler ``name``; ``bounds`` (bootstrap statistics) fill in missing ranges."""
        if name not in self.data["samplers"]:
            raise ConfigError(f"unknown sampler {name!r}; defined: {sorted(self.data['samplers'])}")
        entry = dict(self.data["samplers"][name])
        entry.setdefault("seed", self.seed)
        entry.setdefault("cec", self.data["exchange"]["cec"])
        if n is not None:
            entry["n"] = n
        if self.needs_bootstrap(name):
            if bounds is None:
                # validation pass: check the remaining fields against placeholder moments
                entry.setdefault("lo", [0.0] * 6)
                entry.setdefault("hi", [1.0] * 6)
                if SamplerKind(entry["kind"]) is SamplerKind.COVARIANCE:
                    entry.setdefault("mean", [0.5] * 6)
                    entry.setdefault("cov", [[float(i == j) for j in range(6)] for i in range(6)])
            else:
                entry.setdefault("lo", list(bounds.lo))
                entry.setdefault("hi", list(bounds.hi))
                entry.setdefault("mean", list(bounds.mean))
                entry.setdefault("cov", [list(r) for r in bounds.cov])
        if SamplerKind(entry["kind"]) is not SamplerKind.COVARIANCE:
            entry.pop("mean", None)
            entry.pop("cov", None)
        return SamplerSpec.from_dict(entry)

    def model(self, name: str) -> ModelSpec:
        if name not in self.data["models"]:
            raise ConfigError(f"unknown model {name!r}; defined: {sorted(self.data['models'])}")
        entry = dict(self.data["models"][name])
        entry.setdefault("seed", self.seed)
        return ModelSpec.from_dict(entry)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    @property
    def digest(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]
