"""Reusable experiment steps shared by the command line and the acceptance tests."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .coupling import CouplingConfig, RolloutResult, initial_column, run_rollout
from .dataset import BootstrapStatistics, Dataset, bootstrap_statistics, generate, split
from .geochem import equilibrate_batch
from .metrics import ErrorReport, rollout_error
from .surrogate import TrainedModel, benchmark_predict, fit, grid_search

log = logging.getLogger(__name__)

ABLATION_PRESETS = ("none", "mod1", "mod1+2", "mod1+2+3")


def _physics_key(cfg: ExperimentConfig) -> str:
    blob = json.dumps({"transport": cfg.data["transport"], "exchange": cfg.data["exchange"]},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def reference_rollout(cfg: ExperimentConfig, cache_dir: Path | None = None) -> RolloutResult:
    """Oracle rollout for the configured column, cached per physics setup."""
    if cache_dir is not None:
        path = Path(cache_dir) / f"reference_{_physics_key(cfg)}.npz"
        if path.exists():
            return RolloutResult.load(path)
    tcfg, params = cfg.transport, cfg.exchange
    result = run_rollout(tcfg, CouplingConfig(backend="oracle"), params,
                         initial_column(tcfg, params))
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        result.save(path)
    return result


def bootstrap(cfg: ExperimentConfig, cache_dir: Path | None = None) -> BootstrapStatistics:
    if cache_dir is not None:
        path = Path(cache_dir) / f"bootstrap_{_physics_key(cfg)}.json"
        if path.exists():
            return BootstrapStatistics.from_dict(json.loads(path.read_text()))
    stats = bootstrap_statistics(cfg.transport, cfg.exchange)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    return stats


def make_dataset(cfg: ExperimentConfig, sampler: str, n: int | None = None,
                 cache_dir: Path | None = None) -> Dataset:
    bounds = bootstrap(cfg, cache_dir) if cfg.needs_bootstrap(sampler) else None
    spec = cfg.sampler(sampler, bounds=bounds, n=n)
    ds = generate(spec, cfg.exchange)
    ds.provenance.update({"sampler_name": sampler, "config_digest": cfg.digest})
    return ds


def train(cfg: ExperimentConfig, model: str, dataset: Dataset
          ) -> tuple[TrainedModel, ErrorReport, dict]:
    """Split, optionally tune, fit and score on the held-out part."""
    spec = cfg.model(model)
    train_part, test_part = split(dataset, cfg.data["split"]["train_fraction"], cfg.seed)
    info = {"model": model, "spec": spec.to_dict(), "n_train": len(train_part),
            "n_test": len(test_part)}
    tuning = cfg.data["tuning"]
    if tuning["enabled"] and spec.kind.value in tuning["grids"]:
        spec, table = grid_search(spec, train_part.features, train_part.targets,
                                  tuning["grids"][spec.kind.value], tuning["folds"], cfg.seed)
        info["tuning"] = [{"params": p, "mean_mse": s} for p, s in table]
        info["spec"] = spec.to_dict()
    trained = fit(spec, train_part, dataset_id=dataset.digest)
    trained.metadata["config_digest"] = cfg.digest
    report = ErrorReport.compute(test_part.targets, trained.predict(test_part.features))
    return trained, report, info


def surrogate_rollout(cfg: ExperimentConfig, model: TrainedModel, preset: str) -> RolloutResult:
    tcfg, params = cfg.transport, cfg.exchange
    return run_rollout(tcfg, cfg.coupling(preset), params, initial_column(tcfg, params),
                       surrogate=model)


@dataclass
class AblationRow:
    preset: str
    rollout_error: float
    outflow_error: float
    surrogate_fraction: float
    clipped_cells: int
    seconds: float


def ablation(cfg: ExperimentConfig, model: TrainedModel, reference: RolloutResult,
             presets=None) -> list[AblationRow]:
    rows = []
    for preset in presets or cfg.data["ablation"]["presets"]:
        start = time.perf_counter()
        result = surrogate_rollout(cfg, model, preset)
        rows.append(AblationRow(preset, rollout_error(reference, result),
                                rollout_error(reference, result, outflow_only=True),
                                result.surrogate_fraction, int(result.clipped_cells.sum()),
                                time.perf_counter() - start))
    return rows


def sampling_sweep(cfg: ExperimentConfig, reference: RolloutResult,
                   cache_dir: Path | None = None) -> list[dict]:
    """Rollout error of the sweep model for every sampler and dataset size."""
    sweep = cfg.data["sweep"]
    rows = []
    for sampler in sweep["samplers"]:
        for size in sweep["sizes"]:
            ds = make_dataset(cfg, sampler, n=int(size), cache_dir=cache_dir)
            trained, report, _ = train(cfg, sweep["model"], ds)
            result = surrogate_rollout(cfg, trained, sweep["preset"])
            rows.append({"sampler": sampler, "size": int(size), "preset": sweep["preset"],
                         "rollout_error": rollout_error(reference, result),
                         "test_rmse": report.rmse, "test_r2": report.r2})
            log.info("sweep %s n=%d error=%.3e", sampler, size, rows[-1]["rollout_error"])
    return rows


def oracle_timing(cfg: ExperimentConfig, batch_sizes, repeats: int) -> list[tuple[int, float]]:
    """Mean seconds of one batched oracle call on random in-range inputs."""
    rng = np.random.default_rng(cfg.seed)
    params = cfg.exchange
    rows = []
    for size in batch_sizes:
        aq = rng.uniform(0, 1.5e-3, (int(size), 3))
        raw = rng.uniform(0, 1.0, (int(size), 3))
        sorbed = raw * (params.cec / (raw @ np.array([1.0, 1.0, 2.0])))[:, None]
        equilibrate_batch(aq, sorbed, params)
        start = time.perf_counter()
        for _ in range(repeats):
            equilibrate_batch(aq, sorbed, params)
        rows.append((int(size), (time.perf_counter() - start) / repeats))
    return rows


def bench_table(cfg: ExperimentConfig, models: dict[str, TrainedModel]) -> list[dict]:
    bench = cfg.data["bench"]
    sizes, repeats = bench["batch_sizes"], bench["repeats"]
    rows = []
    timings = {name: benchmark_predict(m, sizes, repeats, cfg.seed) for name, m in models.items()}
    timings["oracle"] = oracle_timing(cfg, sizes, repeats)
    for name, table in timings.items():
        for size, seconds in table:
            rows.append({"model": name, "batch_size": size, "seconds": seconds,
                         "seconds_per_instance": seconds / size})
    return rows
