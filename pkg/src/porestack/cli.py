"""Command-line operator surface.

Every subcommand works inside one experiment directory: a config file,
a lock, and one subdirectory per stage.  Commands never overwrite an
existing output directory; a rerun gets a fresh versioned sibling.
Failures exit nonzero with a machine-readable JSON error on stderr,
keyed by category.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, replace
from pathlib import Path

from filelock import FileLock, Timeout

from .bulk import DEFAULT_BULK_STEPS, bulk_series, rmse_series, write_series
from .config import ExperimentConfig
from .data import Ensemble, split_ensemble, validate_simulation
from .errors import ConfigError, DataError, MissingInputError, PorestackError
from .features import NormStats, fit_norm_stats, windows_for, with_engineered_channels
from .metrics import curves, read_curve, write_curves
from .physics import generate_ensemble
from .rollout import StackPredictor, read_rollout, rollout, save_rollout
from .stacking import (STACK_MANIFEST, StackedModel, build_level_dataset,
                       load_stack, save_stack, train_correction_level,
                       train_level0)
from .storage import import_ensemble, read_ensemble, write_ensemble, write_split

EXIT_CODES = {
    "config": 2,
    "data": 3,
    "solver": 4,
    "training": 5,
    "missing-input": 6,
}

CONFIG_NAME = "config.json"
LOCK_NAME = ".lock"
LOCK_TIMEOUT_SECONDS = 10.0

# Desk-scale context for the timing tables: solver-replacement surrogates
# of this kind are reported to run 10^3 to 10^4 times faster than the
# reference pore-scale solvers they emulate at production resolution.
SPEEDUP_CONTEXT = (
    "For context: stacked surrogate rollouts of this kind are reported to run "
    "10^3 to 10^4 times faster than the reference pore-scale solvers they "
    "replace at production scale. The timings above are desk-scale "
    "measurements of this artifact, not that comparison."
)


# plumbing ----------------------------------------------------------------


@contextmanager
def experiment_lock(root: Path):
    """One command at a time per experiment directory."""
    root.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(root / LOCK_NAME))
    try:
        lock.acquire(timeout=LOCK_TIMEOUT_SECONDS)
    except Timeout as exc:
        raise ConfigError(
            f"another command holds the lock on {root}; retry when it finishes"
        ) from exc
    try:
        yield
    finally:
        lock.release()


def fresh_dir(path: str | Path) -> Path:
    """`path` if unused, otherwise the first free `-vK` sibling."""
    path = Path(path)
    if not path.exists():
        return path
    k = 2
    while True:
        candidate = path.with_name(f"{path.name}-v{k}")
        if not candidate.exists():
            return candidate
        k += 1


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Load the experiment config and fold in command-line overrides."""
    root = Path(args.root)
    config_path = Path(args.config) if args.config else root / CONFIG_NAME
    if args.config or config_path.is_file():
        cfg = ExperimentConfig.load(config_path)
    else:
        cfg = ExperimentConfig()
    updates: dict = {"root": str(root)}
    for name in ("seed", "device", "features", "levels", "family"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    return replace(cfg, **updates)


def persist_config(cfg: ExperimentConfig) -> None:
    """Record the effective config once; never clobber an edited file."""
    path = cfg.root_path / CONFIG_NAME
    if not path.exists():
        cfg.save(path)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _load_prepared(cfg: ExperimentConfig, data_arg: str | None,
                   prep_arg: str | None) -> tuple[Ensemble, NormStats, Path, Path]:
    data_dir = Path(data_arg) if data_arg else cfg.data_path
    prep_dir = Path(prep_arg) if prep_arg else cfg.root_path / "prep"
    stats_path = prep_dir / "stats.json"
    if not stats_path.is_file():
        raise MissingInputError(
            f"no normalization statistics at {stats_path}; run preprocess first"
        )
    return (read_ensemble(data_dir), NormStats.load(stats_path),
            data_dir, prep_dir)


def _split_windows(ensemble: Ensemble, cfg: ExperimentConfig):
    train_sims = ensemble.train()
    val_sims = ensemble.validation()
    if cfg.features == 7:
        train_sims = [with_engineered_channels(s) for s in train_sims]
        val_sims = [with_engineered_channels(s) for s in val_sims]
    train_w = windows_for(train_sims, cfg.in_steps, cfg.out_steps, cfg.stride)
    val_w = windows_for(val_sims, cfg.in_steps, cfg.out_steps, cfg.stride)
    return train_w, val_w


def _default_stack_dir(cfg: ExperimentConfig) -> Path:
    """Prefer the corrected stack, fall back to the bare level-0 one."""
    stacked = cfg.root_path / "models" / f"{cfg.family}-stack"
    if (stacked / STACK_MANIFEST).is_file():
        return stacked
    return cfg.root_path / "models" / cfg.family


def _write_level_artifacts(out_dir: Path, checkpoints) -> None:
    from .plotting import plot_history

    for ck in checkpoints:
        if not ck.log:
            continue
        stem = f"log_level_{ck.level:02d}"
        with open(out_dir / f"{stem}.json", "w") as fh:
            json.dump(ck.log, fh, indent=2)
            fh.write("\n")
        plot_history(ck.log, out_dir / f"history_level_{ck.level:02d}.png")


def _scan_rollouts(rollout_dir: Path):
    if not rollout_dir.is_dir():
        raise MissingInputError(f"no rollout directory at {rollout_dir}")
    dirs = sorted(p for p in rollout_dir.iterdir()
                  if (p / "rollout.json").is_file())
    if not dirs:
        raise MissingInputError(f"{rollout_dir} holds no rollout results")
    return [read_rollout(p) for p in dirs]


def _forward_stats(result) -> dict:
    ms = [s * 1000.0 for s in result.forward_seconds]
    return {
        "trajectory": result.sim_id,
        "forward_passes": len(ms),
        "mean_forward_ms": statistics.fmean(ms),
        "min_forward_ms": min(ms),
        "max_forward_ms": max(ms),
        "total_rollout_seconds": result.wall_seconds,
    }


# subcommands --------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> dict:
    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        count = args.count if args.count is not None else cfg.sim_count
        out = fresh_dir(args.out or cfg.data_path)
        synth = cfg.synth_config()
        started = time.perf_counter()
        ensemble = generate_ensemble(synth, count)
        write_ensemble(ensemble, out)
        with open(out / "generation.json", "w") as fh:
            json.dump({"synth": asdict(synth), "count": count}, fh, indent=2)
            fh.write("\n")
        return {
            "command": "generate",
            "out": str(out),
            "count": count,
            "steps_per_sim": synth.steps,
            "seconds": round(time.perf_counter() - started, 3),
        }


def cmd_import(args: argparse.Namespace) -> dict:
    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        out = fresh_dir(args.out or cfg.data_path)
        ensemble = import_ensemble(args.src, args.manifest, out)
        return {
            "command": "import",
            "out": str(out),
            "count": len(ensemble),
            "simulations": sorted(s.id for s in ensemble.simulations),
        }


def cmd_preprocess(args: argparse.Namespace) -> dict:
    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        data_dir = Path(args.data) if args.data else cfg.data_path
        ensemble = read_ensemble(data_dir)
        for sim in ensemble.simulations:
            report = validate_simulation(sim)
            if not report.ok:
                raise DataError(
                    f"simulation {sim.id!r} failed validation: {report.issues[0]}"
                )
        train_count = (args.train_count if args.train_count is not None
                       else cfg.train_count)
        ensemble = split_ensemble(ensemble, train_count, cfg.seed)
        write_split(ensemble, data_dir)
        stats = fit_norm_stats(ensemble.train())
        out = fresh_dir(args.out or cfg.root_path / "prep")
        out.mkdir(parents=True)
        stats.save(out / "stats.json")
        with open(out / "prep.json", "w") as fh:
            json.dump({
                "data": str(data_dir),
                "train_count": train_count,
                "seed": cfg.seed,
                "features": cfg.features,
                "stats_hash": stats.content_hash(),
                "split": dict(sorted(ensemble.split.items())),
            }, fh, indent=2)
            fh.write("\n")
        return {
            "command": "preprocess",
            "out": str(out),
            "stats_hash": stats.content_hash(),
            "split": dict(sorted(ensemble.split.items())),
        }


def cmd_train(args: argparse.Namespace) -> dict:
    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        ensemble, stats, _, _ = _load_prepared(cfg, args.data, args.prep)
        train_w, val_w = _split_windows(ensemble, cfg)
        spec = cfg.model_spec()
        started = time.perf_counter()
        ck = train_level0(spec, train_w, val_w, stats, cfg.train_config())
        seconds = time.perf_counter() - started
        out = fresh_dir(args.out or cfg.root_path / "models" / cfg.family)
        save_stack(StackedModel([ck]), out)
        _write_level_artifacts(out, [ck])
        return {
            "command": "train",
            "out": str(out),
            "family": cfg.family,
            "epochs": len(ck.log),
            "best_val_loss": min(row["val_loss"] for row in ck.log),
            "train_windows": len(train_w),
            "val_windows": len(val_w),
            "seconds": round(seconds, 3),
        }


def cmd_stack(args: argparse.Namespace) -> dict:
    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        ensemble, stats, _, _ = _load_prepared(cfg, args.data, args.prep)
        base_dir = Path(args.stack) if args.stack \
            else cfg.root_path / "models" / cfg.family
        stack = load_stack(base_dir)
        if stack.levels >= cfg.levels:
            raise ConfigError(
                f"stack at {base_dir} already has {stack.levels} correction "
                f"level(s); requested {cfg.levels}"
            )
        train_w, val_w = _split_windows(ensemble, cfg)
        trained = []
        started = time.perf_counter()
        for level in range(stack.levels + 1, cfg.levels + 1):
            train_ds = build_level_dataset(stack, train_w, stats,
                                           device=cfg.device)
            val_ds = build_level_dataset(stack, val_w, stats, device=cfg.device)
            ck = train_correction_level(level, train_ds, val_ds, stack.spec,
                                        cfg.train_config(),
                                        stats.content_hash())
            stack = StackedModel(stack.checkpoints + [ck])
            trained.append({
                "level": level,
                "epochs": len(ck.log),
                "best_val_loss": min(row["val_loss"] for row in ck.log),
            })
        seconds = time.perf_counter() - started
        out = fresh_dir(args.out or cfg.root_path / "models"
                        / f"{cfg.family}-stack")
        save_stack(stack, out)
        _write_level_artifacts(out, stack.checkpoints)
        return {
            "command": "stack",
            "out": str(out),
            "family": cfg.family,
            "levels": stack.levels,
            "trained": trained,
            "seconds": round(seconds, 3),
        }


def cmd_rollout(args: argparse.Namespace) -> dict:
    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        ensemble, stats, _, _ = _load_prepared(cfg, args.data, args.prep)
        stack_dir = Path(args.stack) if args.stack else _default_stack_dir(cfg)
        stack = load_stack(stack_dir)
        predictor = StackPredictor(stack, stats, device=cfg.device)
        if args.sims:
            sims = [ensemble.get(sim_id) for sim_id in args.sims.split(",")]
        else:
            sims = ensemble.validation()
        out = fresh_dir(args.out or cfg.root_path / "rollouts" / cfg.family)
        out.mkdir(parents=True)
        table = []
        for sim in sims:
            result = rollout(predictor, sim)
            result.meta.update({
                "family": stack.spec.family,
                "levels": stack.levels,
                "stack_dir": str(stack_dir),
            })
            save_rollout(result, out / sim.id)
            table.append(_forward_stats(result))
        with open(out / "timings.json", "w") as fh:
            json.dump(table, fh, indent=2)
            fh.write("\n")
        return {
            "command": "rollout",
            "out": str(out),
            "stack": str(stack_dir),
            "levels": stack.levels,
            "timings": table,
        }


def cmd_eval(args: argparse.Namespace) -> dict:
    from .plotting import plot_curves

    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        data_dir = Path(args.data) if args.data else cfg.data_path
        ensemble = read_ensemble(data_dir)
        rollout_dir = Path(args.rollouts) if args.rollouts \
            else cfg.root_path / "rollouts" / cfg.family
        results = _scan_rollouts(rollout_dir)
        truths = [ensemble.get(res.sim_id) for res in results]
        curve_list = curves(results, truths)
        out = fresh_dir(args.out or cfg.root_path / "eval")
        csv_paths = write_curves(curve_list, out)
        png_paths = plot_curves(curve_list, out)
        summary = {}
        for curve in curve_list:
            summary[f"{curve.metric}/{curve.channel}"] = {
                "first_step": float(curve.values[0]),
                "last_step": float(curve.values[-1]),
            }
        return {
            "command": "eval",
            "out": str(out),
            "rollouts": len(results),
            "files": [p.name for p in csv_paths + png_paths],
            "summary": summary,
        }


def cmd_bulk(args: argparse.Namespace) -> dict:
    from .plotting import plot_bulk

    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        data_dir = Path(args.data) if args.data else cfg.data_path
        ensemble = read_ensemble(data_dir)
        rollout_dir = Path(args.rollouts) if args.rollouts \
            else cfg.root_path / "rollouts" / cfg.family
        results = _scan_rollouts(rollout_dir)
        if args.steps:
            steps = [int(s) for s in args.steps.split(",")]
            skipped = []
        else:
            horizon = min(len(res.states) for res in results)
            steps = [s for s in DEFAULT_BULK_STEPS if s < horizon]
            skipped = [s for s in DEFAULT_BULK_STEPS if s >= horizon]
            if not steps:
                raise DataError(
                    f"trajectories of {horizon} steps hold none of the default "
                    f"sampling steps; pass --steps explicitly"
                )
        out = fresh_dir(args.out or cfg.root_path / "bulk")
        properties = ("porosity", "permeability")
        truth_rows = {p: [] for p in properties}
        pred_rows = {p: [] for p in properties}
        for res in results:
            truth = ensemble.get(res.sim_id)
            series = bulk_series(truth, {"prediction": res}, steps=steps)
            write_series(series, out / res.sim_id)
            plot_bulk(series, out / res.sim_id)
            for s in series:
                truth_rows[s.property].append(s.truth)
                pred_rows[s.property].append(s.variants["prediction"])
        rmse = {}
        for prop in properties:
            values = rmse_series(pred_rows[prop], truth_rows[prop])
            rmse[prop] = {str(step): float(v) for step, v in zip(steps, values)}
        with open(out / "rmse.json", "w") as fh:
            json.dump({"steps": steps, "skipped_default_steps": skipped,
                       "rmse": rmse}, fh, indent=2)
            fh.write("\n")
        return {
            "command": "bulk",
            "out": str(out),
            "steps": steps,
            "skipped_default_steps": skipped,
            "rmse": rmse,
        }


def _report_models_section(root: Path, lines: list[str]) -> None:
    manifests = sorted(root.glob(f"models/*/{STACK_MANIFEST}"))
    lines.append("## Trained models")
    lines.append("")
    if not manifests:
        lines.append("No trained models found.")
        lines.append("")
        return
    lines.append("| directory | family | level | weights hash |")
    lines.append("|---|---|---|---|")
    for manifest_path in manifests:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        rel = manifest_path.parent.relative_to(root)
        for level, digest in enumerate(manifest["hashes"]):
            lines.append(f"| {rel} | {manifest['family']} | {level} "
                         f"| {digest[:12]} |")
    lines.append("")


def _report_timing_section(root: Path, lines: list[str]) -> None:
    timing_files = sorted(root.glob("rollouts/*/timings.json"))
    lines.append("## Rollout timings")
    lines.append("")
    if not timing_files:
        lines.append("No rollouts recorded.")
        lines.append("")
        return
    lines.append("| run | trajectory | forward passes | mean forward (ms) "
                 "| total rollout (s) |")
    lines.append("|---|---|---|---|---|")
    for path in timing_files:
        with open(path) as fh:
            rows = json.load(fh)
        run = path.parent.relative_to(root)
        for row in rows:
            lines.append(
                f"| {run} | {row['trajectory']} | {row['forward_passes']} "
                f"| {row['mean_forward_ms']:.2f} "
                f"| {row['total_rollout_seconds']:.3f} |"
            )
    lines.append("")
    lines.append(SPEEDUP_CONTEXT)
    lines.append("")


def _report_eval_section(root: Path, lines: list[str]) -> None:
    csv_files = sorted(root.glob("eval*/[pm]*_*.csv"))
    lines.append("## Evaluation curves")
    lines.append("")
    if not csv_files:
        lines.append("No evaluation curves found.")
        lines.append("")
        return
    lines.append("| curve | first predicted step | last predicted step |")
    lines.append("|---|---|---|")
    for path in csv_files:
        curve = read_curve(path)
        rel = path.relative_to(root)
        lines.append(f"| {rel} | {curve.values[0]:.4f} "
                     f"| {curve.values[-1]:.4f} |")
    lines.append("")


def _report_bulk_section(root: Path, lines: list[str]) -> None:
    rmse_files = sorted(root.glob("bulk*/rmse.json"))
    lines.append("## Bulk properties")
    lines.append("")
    if not rmse_files:
        lines.append("No bulk series found.")
        lines.append("")
        return
    for path in rmse_files:
        with open(path) as fh:
            payload = json.load(fh)
        rel = path.parent.relative_to(root)
        lines.append(f"### {rel}")
        lines.append("")
        if payload.get("skipped_default_steps"):
            gaps = ", ".join(str(s) for s in payload["skipped_default_steps"])
            lines.append(f"Gap: default sampling steps {gaps} exceed the "
                         f"trajectory and were not evaluated.")
            lines.append("")
        lines.append("| property | step | rmse |")
        lines.append("|---|---|---|")
        for prop in sorted(payload["rmse"]):
            for step, value in payload["rmse"][prop].items():
                lines.append(f"| {prop} | {step} | {value:.6g} |")
        lines.append("")


def cmd_report(args: argparse.Namespace) -> dict:
    cfg = resolve_config(args)
    with experiment_lock(cfg.root_path):
        persist_config(cfg)
        root = cfg.root_path
        lines = ["# Experiment report", ""]
        lines.append("## Configuration")
        lines.append("")
        lines.append("```json")
        lines.append(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        lines.append("```")
        lines.append("")
        _report_models_section(root, lines)
        _report_timing_section(root, lines)
        _report_eval_section(root, lines)
        _report_bulk_section(root, lines)
        out = Path(args.out) if args.out else root / "report.md"
        # the report is a pure function of the experiment directory, so
        # regenerating it in place is idempotent rather than destructive
        out.write_text("\n".join(lines) + "\n")
        return {"command": "report", "out": str(out)}


# parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="porestack",
        description="Train and evaluate stacked surrogates for pore-scale "
                    "reactive dissolution.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--root", default="experiment",
                        help="experiment directory (default: ./experiment)")
    common.add_argument("--config", default=None,
                        help="config JSON (default: <root>/config.json if present)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--device", default=None)
    common.add_argument("--features", type=int, choices=(4, 7), default=None,
                        help="input channels: 4 physical or 7 with engineered")
    common.add_argument("--levels", type=int, default=None,
                        help="number of correction levels")
    common.add_argument("--family", default=None,
                        choices=("convlstm", "ufno", "tau"))

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="generate a synthetic ensemble")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("import", parents=[common],
                       help="convert an external dataset to the native layout")
    p.add_argument("--src", required=True)
    p.add_argument("--manifest", required=True,
                   help="import manifest JSON (layout, channel_map, members)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("preprocess", parents=[common],
                       help="validate, split, and fit normalization statistics")
    p.add_argument("--data", default=None)
    p.add_argument("--train-count", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common],
                       help="train the level-0 forecaster")
    p.add_argument("--data", default=None)
    p.add_argument("--prep", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stack", parents=[common],
                       help="train correction levels on a frozen stack")
    p.add_argument("--data", default=None)
    p.add_argument("--prep", default=None)
    p.add_argument("--stack", default=None,
                   help="existing stack directory (default: <root>/models/<family>)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("rollout", parents=[common],
                       help="roll the stack along full trajectories")
    p.add_argument("--data", default=None)
    p.add_argument("--prep", default=None)
    p.add_argument("--stack", default=None)
    p.add_argument("--sims", default=None,
                   help="comma-separated ids (default: validation split)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", parents=[common],
                       help="per-step metric curves against ground truth")
    p.add_argument("--data", default=None)
    p.add_argument("--rollouts", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bulk", parents=[common],
                       help="bulk porosity and permeability series")
    p.add_argument("--data", default=None)
    p.add_argument("--rollouts", default=None)
    p.add_argument("--steps", default=None,
                   help="comma-separated trajectory steps to sample")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bulk)

    p = sub.add_parser("report", parents=[common],
                       help="collate metrics, timings, and bulk series")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        payload = args.func(args)
    except PorestackError as exc:
        json.dump({"error": exc.category, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_CODES.get(exc.category, 1)
    _emit(payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
