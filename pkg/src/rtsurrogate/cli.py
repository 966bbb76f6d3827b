"""Command line entry point: ``rtsurrogate <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ExperimentConfig
from .coupling import CouplingConfig, RolloutResult
from .dataset import Dataset
from .metrics import rollout_error
from .render import render_directory
from .surrogate import TrainedModel

log = logging.getLogger("rtsurrogate")

LOCK_NAME = ".rtsurrogate.lock"


class LockHeld(RuntimeError):
    pass


@contextmanager
def output_lock(out_dir: Path):
    """Exclusive lock on ``out_dir``; a second concurrent command fails fast."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / LOCK_NAME
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockHeld(f"output directory {out_dir} is locked by another run ({path})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _write_csv(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _write_json(path: Path, data: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def _cache(cfg: ExperimentConfig, out: Path) -> Path:
    return out / "cache"


def cmd_generate(cfg: ExperimentConfig, out: Path, args) -> dict:
    ds = ex.make_dataset(cfg, args.sampler, n=args.n, cache_dir=_cache(cfg, out))
    if len(ds) == 0:
        log.warning("sampler %s requested zero rows; writing a header-only file", args.sampler)
    path = ds.to_csv(out / "datasets" / f"{args.sampler}.csv")
    return {"dataset": str(path), "rows": len(ds), "digest": ds.digest}


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> dict:
    ds = Dataset.from_csv(args.dataset)
    trained, report, info = ex.train(cfg, args.model, ds)
    model_path = trained.save(out / "models" / f"{args.model}.npz")
    report.to_json(out / "reports" / f"{args.model}_report.json")
    report.to_csv(out / "reports" / f"{args.model}_report.csv")
    table = out / "reports" / "model_comparison.csv"
    rows = []
    if table.exists():
        with table.open(newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["model"] != args.model]
    rows.append({"model": args.model, "kind": trained.spec.kind.value,
                 "residual_connection": trained.spec.residual_connection,
                 "rmse": report.rmse, "r2": report.r2, "n_test": report.n_samples,
                 "fit_seconds": trained.metadata["fit_seconds"]})
    _write_csv(table, rows)
    return {"model": str(model_path), "rmse": report.rmse, "r2": report.r2, "info": info}


def cmd_rollout(cfg: ExperimentConfig, out: Path, args) -> dict:
    reference = ex.reference_rollout(cfg, _cache(cfg, out))
    if args.backend == "oracle":
        result, name = reference, "oracle"
    else:
        if not args.model:
            raise ConfigError("the surrogate backend needs --model")
        model = TrainedModel.load(args.model)
        result = ex.surrogate_rollout(cfg, model, args.preset)
        name = f"surrogate_{args.preset}"
    rollouts = out / "rollouts"
    rollouts.mkdir(parents=True, exist_ok=True)
    result.to_csv(rollouts / f"{name}_outflow.csv")
    result.save(rollouts / f"{name}.npz")
    summary = {"backend": args.backend, "preset": args.preset if args.backend != "oracle" else None,
               "rollout_error": rollout_error(reference, result),
               "outflow_error": rollout_error(reference, result, outflow_only=True),
               "surrogate_fraction": result.surrogate_fraction, "steps": result.n_steps}
    _write_json(rollouts / f"{name}_summary.json", summary)
    return summary


def cmd_ablate(cfg: ExperimentConfig, out: Path, args) -> dict:
    reference = ex.reference_rollout(cfg, _cache(cfg, out))
    model = TrainedModel.load(args.model)
    rows = [asdict(r) for r in ex.ablation(cfg, model, reference)]
    _write_csv(out / "ablation.csv", rows)
    result = {"ablation": rows}
    if not args.skip_sweep:
        sweep = ex.sampling_sweep(cfg, reference, _cache(cfg, out))
        _write_csv(out / "sampling_sweep.csv", sweep)
        result["sweep"] = sweep
    return result


def cmd_bench(cfg: ExperimentConfig, out: Path, args) -> dict:
    models = {}
    for item in args.model:
        name, _, path = item.partition("=")
        if not path:
            name, path = Path(item).stem, item
        models[name] = TrainedModel.load(path)
    rows = ex.bench_table(cfg, models)
    _write_csv(out / "bench.csv", rows)
    return {"rows": len(rows)}


def cmd_render(cfg: ExperimentConfig, out: Path, args) -> dict:
    written = render_directory(args.input or out)
    return {"svg": [str(p) for p in written]}


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
    "render": cmd_render,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="rtsurrogate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="sample and label a dataset")
    p.add_argument("--sampler", default="vanilla")
    p.add_argument("--n", type=int, help="override the sampler's row count")

    p = sub.add_parser("train", parents=[common], help="fit a model and score it on a held-out split")
    p.add_argument("--model", default="gbdt_residual")
    p.add_argument("--dataset", type=Path, required=True)

    p = sub.add_parser("rollout", parents=[common], help="run the coupled column simulation")
    p.add_argument("--backend", choices=("oracle", "surrogate"), default="oracle")
    p.add_argument("--model", type=Path)
    p.add_argument("--preset", default="mod1+2+3", choices=list(ex.ABLATION_PRESETS))

    p = sub.add_parser("ablate", parents=[common], help="correction ablation and sampling sweep")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--skip-sweep", action="store_true")

    p = sub.add_parser("bench", parents=[common], help="prediction timing table")
    p.add_argument("--model", action="append", default=[], metavar="NAME=PATH")

    p = sub.add_parser("render", parents=[common], help="draw SVG charts for CSV outputs")
    p.add_argument("--input", type=Path, help="directory to scan (default: --out)")
    return parser


def _error_line(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = cfg.with_seed(args.seed)
        out = args.out or cfg.output_dir
        with output_lock(out):
            (out / "config.json").write_text(cfg.to_json() + "\n")
            result = COMMANDS[args.command](cfg, out, args)
            manifest = {"command": args.command, "config_digest": cfg.digest, "result": result}
            _write_json(out / f"{args.command}_manifest.json", manifest)
    except (ConfigError, LockHeld, OSError, ValueError, RuntimeError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, LockHeld)) else 1
    print(json.dumps({"command": args.command, "config_digest": cfg.digest}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
