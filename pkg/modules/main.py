# -*- coding: utf-8 -*-
"""
Main entry point for the DG Video Enhancer.
"""
import argparse
import logging
import platform
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import psutil
import torch
import yaml
from pydantic import ValidationError

from modules.analysis import analyse_representations, render_scatter, write_projection_csv
from modules.budget import budget_report, format_budget_table, write_budget_csv
from modules.checkpoint import read_app_version
from modules.config import FLAG_FIELDS, RunConfig, apply_overrides, load_config, snapshot_config
from modules.constants import DEFAULT_CONFIG_FILE, DEGRADATION_KINDS, LEVELS
from modules.datasets import SPLITS, CorpusManifest, DatasetError, build_manifest, synthesize_corpus
from modules.imaging import load_image, save_image
from modules.metrics import evaluate_directory, load_niqe_model
from modules.networks import build_models, enhance
from modules.training import (
    checkpoint_dir,
    load_components,
    load_corpus_images,
    run_stage1,
    run_stage2,
    train_drpm,
)
from modules.utils import (
    FRAME_BLANK,
    FRAME_RULE,
    FrameFormatter,
    log_frame,
    log_section,
    resolve_device,
    set_determinism,
    write_run_manifest,
)
from modules.video_engine import enhance_video_dir, load_inference_bundle

logger = logging.getLogger(__name__)

CORPUS_MANIFEST = "corpus_manifest.txt"


def display_header(config: RunConfig, device: torch.device):
    """Displays header information in log format."""
    try:
        total_mem = int(psutil.virtual_memory().total / (1024**3))  # GB
        avail_mem = int(psutil.virtual_memory().available / (1024**3))  # GB
    except (ImportError, AttributeError):
        total_mem = avail_mem = 0

    logging.info(FRAME_RULE)
    logging.info(FRAME_BLANK)
    log_frame("D G   V I D E O   E N H A N C E R", 'center')
    log_frame("degradation-guided enhancement for endoscopic video", 'center')
    logging.info(FRAME_BLANK)
    log_frame(f"Version: {read_app_version()}", 'left')
    log_frame(f"Platform: {platform.platform()}", 'left')
    log_frame(f"Total Memory: {total_mem} GB", 'left')
    log_frame(f"Available Memory: {avail_mem} GB", 'left')
    log_frame(f"Torch: {torch.__version__} on {device}", 'left')
    log_frame(f"Seed: {config.system.seed}  Output: {config.system.out_dir}", 'left')
    logging.info(FRAME_BLANK)
    logging.info(FRAME_RULE)


def setup_logging(debug: bool = False):
    """Configures the root logger."""
    level = logging.DEBUG if debug else logging.INFO
    if debug:
        fmt = '%(asctime)s [%(filename)s:%(lineno)d] [%(levelname)s] %(message)s'
    else:
        fmt = '%(asctime)s [%(levelname)s] %(message)s'
    logging.basicConfig(level=level, handlers=[logging.StreamHandler()], force=True)
    handler = logging.getLogger().handlers[0]
    handler.setFormatter(FrameFormatter(fmt, datefmt='%Y-%m-%d %H:%M:%S'))
    if not debug:
        logging.getLogger("matplotlib").setLevel(logging.WARNING)
        logging.getLogger("PIL").setLevel(logging.WARNING)


def _require(value: Optional[Path], flag: str) -> Path:
    if value is None:
        raise ValueError(f"{flag} is required for this command")
    return Path(value)


def resolve_manifest(config: RunConfig) -> CorpusManifest:
    """Load --manifest, or build one from --corpus and save it into the run directory."""
    if config.paths.manifest is not None:
        return CorpusManifest.load(config.paths.manifest)
    if config.paths.corpus is None:
        raise DatasetError("Either --manifest or --corpus is required")
    manifest = build_manifest(config.paths.corpus, config.data.split_ratios, config.system.seed)
    manifest.save(Path(config.system.out_dir) / CORPUS_MANIFEST)
    return manifest


def cmd_degrade(config: RunConfig, device: torch.device) -> None:
    manifest = resolve_manifest(config)
    d = config.data
    target = Path(config.paths.output or Path(config.system.out_dir) / "degraded")
    for split in SPLITS:
        if not manifest.select(split, "image"):
            continue
        synthesize_corpus(manifest, split, [d.degrade_kind], [d.degrade_level], d.count, config.system.seed,
                          target / split, d.patch_size, d.scale,
                          clip_kind=d.degrade_kind if d.degrade_clips else None, clip_level=d.degrade_level)


def cmd_pretrain_dam(config: RunConfig, device: torch.device) -> None:
    manifest = resolve_manifest(config)
    bundle = build_models(config).to(device)
    run_stage1(config, bundle, load_corpus_images(manifest))


def cmd_train(config: RunConfig, device: torch.device) -> None:
    manifest = resolve_manifest(config)
    bundle = build_models(config).to(device)
    if config.train.dam_epochs > 0:
        load_components(bundle, checkpoint_dir(config), ["dam"])
    else:
        logger.warning("train.dam_epochs is 0; stage 2 starts from a randomly initialised DAM.")
    run_stage2(config, bundle, manifest)


def cmd_train_drpm(config: RunConfig, device: torch.device) -> None:
    manifest = resolve_manifest(config)
    bundle = build_models(config).to(device)
    train_drpm(config, bundle, manifest)


def cmd_enhance(config: RunConfig, device: torch.device) -> None:
    source = _require(config.paths.input, "--input")
    target = Path(config.paths.output or Path(config.system.out_dir) / f"{source.stem}_enhanced.png")
    bundle = load_inference_bundle(config).to(device).eval()
    with torch.no_grad():
        x_enh, _ = enhance(load_image(source).to(device), bundle.generator)
    save_image(x_enh.cpu(), target)
    logger.info(f"Enhanced {source} -> {target}")


def cmd_enhance_video(config: RunConfig, device: torch.device) -> None:
    source = _require(config.paths.input, "--input")
    target = Path(config.paths.output or Path(config.system.out_dir) / "frames")
    bundle = load_inference_bundle(config).to(device)
    enhance_video_dir(source, target, bundle, config)


def cmd_eval(config: RunConfig, device: torch.device) -> None:
    source = _require(config.paths.input, "--input")
    report = evaluate_directory(source, config.paths.reference, load_niqe_model(config.paths.niqe_model))
    path = report.to_csv(Path(config.system.out_dir) / "metrics.csv")
    log_section("Metric report")
    for line in report.summary():
        log_frame(line)
    logger.info(f"Per-image metrics written to {path}")


def cmd_viz_repr(config: RunConfig, device: torch.device) -> None:
    manifest = resolve_manifest(config)
    bundle = build_models(config).to(device)
    load_components(bundle, checkpoint_dir(config), ["dam"])
    images = load_corpus_images(manifest, "test" if manifest.select("test", "image") else "train")
    result, stats = analyse_representations(images, bundle.dam.encoder, config)
    out_dir = Path(config.system.out_dir)
    write_projection_csv(result, out_dir / "projection.csv")
    with open(out_dir / "projection_stats.yml", "w", encoding="utf-8") as f:
        yaml.safe_dump({**stats, "explained_variance_ratio": [float(v) for v in result.explained_variance_ratio]},
                       f, sort_keys=True)
    if config.analysis.render_scatter:
        render_scatter(result, out_dir / "projection.png", "Degradation representations")


def cmd_budget(config: RunConfig, device: torch.device) -> None:
    rows = budget_report(config, bundle=build_models(config).to(device))
    log_section("Parameter and FLOPs budget")
    for line in format_budget_table(rows):
        log_frame(line)
    write_budget_csv(rows, Path(config.system.out_dir) / "budget.csv")


COMMANDS: Dict[str, Dict[str, Any]] = {
    "degrade": {"run": cmd_degrade, "help": "synthesize a degraded corpus",
                "flags": ["corpus", "manifest", "output", "kind", "level", "count"]},
    "pretrain-dam": {"run": cmd_pretrain_dam, "help": "stage 1: contrastive DAM pretraining",
                     "flags": ["corpus", "manifest", "checkpoint_dir", "dam_epochs"]},
    "train": {"run": cmd_train, "help": "stage 2: single-frame cycle-adversarial training",
              "flags": ["corpus", "manifest", "checkpoint_dir", "dam_epochs", "single_epochs", "total_epochs"]},
    "train-drpm": {"run": cmd_train_drpm, "help": "stage 3: DRPM training on clips",
                   "flags": ["corpus", "manifest", "checkpoint_dir", "dam_epochs", "single_epochs", "total_epochs",
                             "delta_t"]},
    "enhance": {"run": cmd_enhance, "help": "enhance a single image",
                "flags": ["input", "output", "checkpoint_dir"]},
    "enhance-video": {"run": cmd_enhance_video, "help": "enhance a frame directory with key-frame scheduling",
                      "flags": ["input", "output", "checkpoint_dir", "delta_t"]},
    "eval": {"run": cmd_eval, "help": "compute PSNR, SSIM, NIQE and PIQE",
             "flags": ["input", "reference"]},
    "viz-repr": {"run": cmd_viz_repr, "help": "export a PCA projection of degradation representations",
                 "flags": ["corpus", "manifest", "checkpoint_dir"]},
    "budget": {"run": cmd_budget, "help": "report parameters and FLOPs per component", "flags": []},
}

FLAG_SPECS: Dict[str, Dict[str, Any]] = {
    "corpus": {"type": Path, "help": "corpus root with images and clip directories"},
    "manifest": {"type": Path, "help": "existing corpus manifest"},
    "input": {"type": Path, "help": "input image, frame directory or directory to evaluate"},
    "output": {"type": Path, "help": "output file or directory"},
    "reference": {"type": Path, "help": "reference images for full-reference metrics"},
    "checkpoint_dir": {"type": Path, "help": "checkpoint directory (default: <out-dir>/checkpoints)"},
    "delta_t": {"type": int, "help": "key-frame interval"},
    "dam_epochs": {"type": int, "help": "stage 1 epochs (N_d)"},
    "single_epochs": {"type": int, "help": "stage 2 epochs (N_s)"},
    "total_epochs": {"type": int, "help": "total epochs over all stages (N)"},
    "kind": {"choices": DEGRADATION_KINDS, "help": "degradation kind"},
    "level": {"choices": LEVELS, "help": "severity level"},
    "count": {"type": int, "help": "pairs per split"},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help=f"TOML or YAML config (default: {DEFAULT_CONFIG_FILE} if present)")
    common.add_argument("--seed", type=int, default=None, help="global seed")
    common.add_argument("--out-dir", dest="out_dir", type=Path, default=None, help="run directory")
    common.add_argument("--device", default=None, help="auto, cpu, mps, cuda or cuda:N")
    common.add_argument("--debug", action="store_const", const=True, default=None, help="debug logging")

    parser = argparse.ArgumentParser(prog="dgve", description="Degradation-guided image and video enhancement.")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    for name, command in COMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common], help=command["help"])
        for flag in command["flags"]:
            sub.add_argument(f"--{flag.replace('_', '-')}", dest=flag, default=None, **FLAG_SPECS[flag])
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    return {dotted: getattr(args, flag) for flag, dotted in FLAG_FIELDS.items() if hasattr(args, flag)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    path = args.config
    if path is None and DEFAULT_CONFIG_FILE.exists():
        path = DEFAULT_CONFIG_FILE
    return apply_overrides(load_config(path), overrides_from_args(args))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main function to run the DG Video Enhancer."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage()
        return 2

    try:
        config = resolve_config(args)
    except (ValidationError, ValueError, FileNotFoundError) as e:
        setup_logging(bool(args.debug))
        logging.error(f"Invalid configuration: {e}")
        return 1

    setup_logging(config.system.debug)
    try:
        device = resolve_device(config.system.device)
        display_header(config, device)
        set_determinism(config.system.seed)
        out_dir = Path(config.system.out_dir)
        snapshot_config(config, out_dir)
        log_frame(f"Command: {args.command}", 'center')
        run: Callable[[RunConfig, torch.device], None] = COMMANDS[args.command]["run"]
        run(config, device)
        write_run_manifest(out_dir)
        log_section(f"{args.command} finished")
        return 0
    except Exception as e:
        logging.error(f"{args.command} failed: {e}", exc_info=config.system.debug)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
