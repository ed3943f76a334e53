"""Command line interface: gen-data, train, eval, plot.

Every failure the pipeline anticipates (bad config, missing file, malformed
dataset, horizon mismatch, incompatible checkpoint, diverged training) exits
non-zero after printing one machine-readable JSON line to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .checkpoint import (
    CheckpointError,
    decode_rng,
    load_checkpoint,
    restore_optimizer,
    save_checkpoint,
)
from .config import (
    ExperimentConfig,
    apply_overrides,
    config_hash,
    config_to_dict,
    load_config,
)
from .discriminator import TrajectoryDiscriminator
from .generator import TrajectoryGenerator, forecast_scenes
from .metrics import baseline_forecast, evaluate_forecasts
from .refine import refine_forecasts
from .scenes import ParseError, ValidationError, load_scenes, save_scenes
from .seeding import seed_module, stream_seed
from .sim import NumericalError
from .synth import (
    GenerationError,
    forking_training_scenes,
    generate_dataset,
    generate_forking_scene,
)
from .training import TrainingDivergence, TrainingLog, train

LEARNED_MODELS = ("sganv2", "sganv2-l")
BASELINES = ("up", "cv")


def _fail_kinds():
    return (
        ParseError,
        ValidationError,
        CheckpointError,
        GenerationError,
        TrainingDivergence,
        NumericalError,
        OSError,
    )


# ------------------------------------------------------------------ helpers

def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    variant = None
    if getattr(args, "model", None) == "sganv2-l":
        variant = "recurrent"
    if getattr(args, "disc", None):
        variant = args.disc
    return apply_overrides(
        cfg,
        seed=args.seed,
        no_interaction=getattr(args, "no_interaction", None) or None,
        variant=variant,
        objective=getattr(args, "objective", None),
    )


def _build_models(cfg: ExperimentConfig):
    gen = TrajectoryGenerator(cfg.generator_config(), cfg.no_interaction)
    disc = TrajectoryDiscriminator(cfg.discriminator_config(), cfg.no_interaction)
    seed_module(gen, cfg.seed, "init/gen")
    seed_module(disc, cfg.seed, "init/disc")
    return gen, disc


def _restore_from_checkpoint(path):
    """Rebuild (gen, disc, cfg, ckpt) from a checkpoint file."""
    from .config import config_from_dict

    ckpt = load_checkpoint(path)
    snapshot = ckpt.config
    cfg = config_from_dict(snapshot["experiment"])
    gen = TrajectoryGenerator(cfg.generator_config(), cfg.no_interaction)
    disc = TrajectoryDiscriminator(cfg.discriminator_config(), cfg.no_interaction)
    missing_g = gen.load_state_dict(ckpt.state_dict("gen"))
    missing_d = disc.load_state_dict(ckpt.state_dict("disc"))
    for missing in (missing_g, missing_d):
        if missing.missing_keys or missing.unexpected_keys:
            raise CheckpointError(
                f"{path}: state does not match the configured architecture "
                f"({missing.missing_keys or missing.unexpected_keys})"
            )
    return gen, disc, cfg, ckpt


def _parse_k(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as err:
        raise ValidationError(f"--k expects a comma list of integers, got {text!r}") from err
    if not values or any(v < 1 for v in values):
        raise ValidationError("--k values must be positive")
    return values


# --------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    cfg = _load_experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_seed = stream_seed(cfg.seed, "data")
    manifest = {
        "kind": cfg.data.kind,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "files": {},
    }
    if cfg.data.kind == "crossing":
        scenes = generate_dataset(cfg.world, cfg.data.n_scenes, data_seed, cfg.horizon)
        counts = [int(cfg.data.n_scenes * f) for f in cfg.data.split]
        counts[0] += cfg.data.n_scenes - sum(counts)
        names = ("train", "val", "test")
        lo = 0
        for name, count in zip(names, counts):
            chunk = scenes[lo : lo + count]
            lo += count
            path = out / f"{name}.ndjson"
            save_scenes(chunk, path)
            manifest["files"][name] = {"path": path.name, "scenes": len(chunk)}
    else:
        prefix, futures = generate_forking_scene(
            mode_count=cfg.data.mode_count,
            samples_per_mode=cfg.data.samples_per_mode,
            seed=data_seed,
            horizon=cfg.horizon,
        )
        scenes = forking_training_scenes(prefix, futures)
        save_scenes(scenes, out / "train.ndjson")
        manifest["files"]["train"] = {"path": "train.ndjson", "scenes": len(scenes)}
        modes = {
            "prefix": {
                "primary_id": prefix.primary_id,
                "track": np.asarray(prefix.primary).tolist(),
                "dt": prefix.dt,
            },
            "futures": [
                {"mode": int(mode), "track": np.asarray(track).tolist()}
                for mode, track in futures
            ],
        }
        (out / "modes.json").write_text(json.dumps(modes, sort_keys=True))
        manifest["files"]["modes"] = {"path": "modes.json", "scenes": 0}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(json.dumps({"written": str(out), **manifest["files"]}))
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start_epoch = 0
    optimizers = None
    rng_states = None
    log = TrainingLog()
    if args.resume:
        gen, disc, cfg, ckpt = _restore_from_checkpoint(args.resume)
        model_name = ckpt.config.get("model", "sganv2")
        start_epoch = ckpt.epoch
        import torch

        opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.train.lr_g)
        opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.train.lr_d)
        restore_optimizer(opt_g, ckpt, "opt_g")
        restore_optimizer(opt_d, ckpt, "opt_d")
        optimizers = (opt_g, opt_d)
        rng = decode_rng(ckpt.header)
        rng_states = {
            "order": rng["order"],
            "noise": rng["noise"],
            "gp": rng["gp"],
        }
        log_path = out / "log.jsonl"
        if log_path.exists():
            log = TrainingLog.load_jsonl(log_path)
            log.entries = [e for e in log.entries if e["epoch"] <= start_epoch]
    else:
        cfg = _load_experiment(args)
        model_name = args.model
        gen, disc = _build_models(cfg)

    data_dir = Path(args.data)
    train_scenes = load_scenes(data_dir / "train.ndjson", cfg.horizon)
    val_path = data_dir / "val.ndjson"
    val_scenes = load_scenes(val_path, cfg.horizon) if val_path.exists() else []

    snapshot = {
        "experiment": config_to_dict(cfg),
        "model": model_name,
        "config_hash": config_hash(cfg),
    }

    def on_epoch(epoch: int, entry: dict, ctx: dict) -> None:
        log.save_jsonl(out / "log.jsonl")
        save_checkpoint(
            out / "checkpoint_last.ckpt",
            config=snapshot,
            epoch=epoch,
            gen=gen,
            disc=disc,
            opt_g=ctx["opt_g"],
            opt_d=ctx["opt_d"],
            rng_states=ctx["rng_states"],
        )

    train(
        train_scenes,
        gen,
        disc,
        cfg.train,
        horizon=cfg.horizon,
        val_scenes=val_scenes,
        epoch_callback=on_epoch,
        log=log,
        start_epoch=start_epoch,
        optimizers=optimizers,
        rng_states=rng_states,
    )
    summary = {
        "checkpoint": str(out / "checkpoint_last.ckpt"),
        "log": str(out / "log.jsonl"),
        "epochs": cfg.train.epochs,
        "model": model_name,
    }
    if log.entries and "val_col" in log.entries[-1]:
        summary["val_col"] = log.entries[-1]["val_col"]
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    k_override = _parse_k(args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    refined_report = None
    if args.model in BASELINES:
        cfg = _load_experiment(args)
        horizon = cfg.horizon
        scenes = load_scenes(args.data, horizon)
        k_values = (1,) if args.model == "cv" else tuple(k_override or cfg.eval.k)
        k_max = max(k_values)
        forecasts = [
            baseline_forecast(scene, horizon, args.model, k_max) for scene in scenes
        ]
        model_label = args.model
        eval_cfg = cfg.eval
        if args.refine:
            raise ValidationError("--refine needs a trained discriminator checkpoint")
    else:
        if not args.checkpoint:
            raise ValidationError(f"--checkpoint is required for model {args.model!r}")
        gen, disc, cfg, ckpt = _restore_from_checkpoint(args.checkpoint)
        if args.seed is not None:
            cfg = apply_overrides(cfg, seed=args.seed)
        horizon = cfg.horizon
        scenes = load_scenes(args.data, horizon)
        k_values = tuple(k_override or cfg.eval.k)
        k_max = max(k_values)
        forecasts = forecast_scenes(
            gen, scenes, k_max, stream_seed(cfg.seed, "eval-noise"), horizon
        )
        model_label = ckpt.config.get("model", "sganv2")
        eval_cfg = cfg.eval
        if args.refine:
            forecasts, refined_report = refine_forecasts(
                disc, scenes, forecasts, cfg.refine, horizon
            )
            refined_report.save_jsonl(out / "refinement.jsonl")
    report = evaluate_forecasts(
        scenes,
        forecasts,
        horizon,
        k_values=k_values,
        collision_threshold=eval_cfg.collision_threshold,
        substeps=eval_cfg.substeps,
    )
    doc = {
        "model": model_label,
        "refined": bool(args.refine),
        "k_values": list(k_values),
        "report": report.to_dict(),
    }
    if refined_report is not None:
        doc["refinement"] = {
            "col_before": refined_report.col_before,
            "col_after": refined_report.col_after,
            "refined_samples": refined_report.refined_samples,
            "total_samples": refined_report.total_samples,
        }
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    table = f"model: {model_label}  refined: {bool(args.refine)}\n" + report.to_table()
    (out / "metrics.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_scenes

    if args.checkpoint:
        gen, disc, cfg, _ = _restore_from_checkpoint(args.checkpoint)
    else:
        gen = disc = None
        cfg = _load_experiment(args)
    horizon = cfg.horizon
    scenes = load_scenes(args.data, horizon)
    if args.limit:
        scenes = scenes[: args.limit]
    forecasts = refined = None
    if gen is not None and scenes:
        k = max(_parse_k(args.k) or (3,))
        forecasts = forecast_scenes(
            gen, scenes, k, stream_seed(cfg.seed, "eval-noise"), horizon
        )
        if args.refine:
            refined, _ = refine_forecasts(disc, scenes, forecasts, cfg.refine, horizon)
    paths = plot_scenes(scenes, horizon, args.out, forecasts, refined)
    print(json.dumps({"images": len(paths), "out": str(args.out)}))
    return 0


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sganv2",
        description="Socially-aware GAN trajectory forecasting pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_seed=True):
        p.add_argument("--config", help="experiment config JSON")
        if with_seed:
            p.add_argument("--seed", type=int, default=None, help="override root seed")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train generator and discriminator")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (train/val.ndjson)")
    p.add_argument("--out", required=True, help="run directory for checkpoints/logs")
    p.add_argument("--model", choices=LEARNED_MODELS, default="sganv2")
    p.add_argument("--disc", choices=("transformer", "recurrent"), default=None,
                   help="override discriminator variant")
    p.add_argument("--no-interaction", action="store_true",
                   help="ablate interaction grids in both networks")
    p.add_argument("--objective", choices=("lsgan", "lsgan+gp"), default=None)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model or baseline")
    common(p)
    p.add_argument("--data", required=True, help="scene file to evaluate on")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", choices=LEARNED_MODELS + BASELINES, default="sganv2")
    p.add_argument("--checkpoint", help="trained checkpoint (learned models)")
    p.add_argument("--k", help="comma list of top-k sample counts, e.g. 3,20")
    p.add_argument("--refine", action="store_true",
                   help="apply discriminator-guided refinement before scoring")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render scenes with forecasts")
    common(p)
    p.add_argument("--data", required=True, help="scene file to render")
    p.add_argument("--out", required=True, help="image output directory")
    p.add_argument("--checkpoint", help="forecast with this checkpoint")
    p.add_argument("--k", help="samples per scene when forecasting")
    p.add_argument("--refine", action="store_true")
    p.add_argument("--limit", type=int, default=12,
                   help="render at most this many scenes (0 = all)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _fail_kinds() as err:
        print(
            json.dumps({"error": type(err).__name__, "message": str(err)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
