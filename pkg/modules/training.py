# -*- coding: utf-8 -*-
"""
Three-stage training: contrastive DAM pretraining, single-frame cycle-adversarial training and
DRPM training on video clips.

Every stage derives its data order and noise seeds from (seed, stage, epoch, step), so a run
resumes from weights, optimiser states and the epoch counter alone.
"""
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.checkpoint import CheckpointError, checkpoint_path, load_checkpoint, load_module, save_checkpoint, save_module
from modules.config import RunConfig
from modules.constants import STAGE_DAM, STAGE_SINGLE, STAGE_VIDEO
from modules.contrastive import ContrastiveStep, make_optimizer, pretrain_dam
from modules.cycle import CycleResult, LossWeights, cycle_loss, discriminator_objective, generator_objective
from modules.datasets import CorpusManifest, DatasetError, PairedSample, degrade_clip, make_pairs, sample_clip
from modules.imaging import load_image
from modules.networks import ModelBundle, PropagationState, RepresentationSource, propagate
from modules.scheduler import KeyFrameScheduler
from modules.utils import derive_seed, log_section

logger = logging.getLogger(__name__)

STAGE1_LOG = "stage1_losses.csv"
STAGE2_LOG = "stage2_losses.csv"
STAGE3_LOG = "stage3_frames.csv"
STAGE2_COMPONENTS = ("dam", "dgem", "heads", "discriminators")


class TrainingDivergedError(RuntimeError):
    """Raised on a non-finite loss; dump_path holds the offending batch."""

    def __init__(self, message: str, dump_path: Path):
        super().__init__(f"{message} (batch dumped to {dump_path})")
        self.dump_path = dump_path


@dataclass
class RunState:
    """Resume point of one stage. epoch is the next absolute epoch to run."""
    stage: int
    epoch: int
    step: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)

    def to_record(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "RunState":
        return cls(stage=int(record["stage"]), epoch=int(record["epoch"]), step=int(record.get("step", 0)),
                   history=list(record.get("history", [])))


class LossLog:
    """Append-only CSV with a fixed header. A resumed run rewrites the rows it already holds."""

    def __init__(self, path: Path, fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]] = ()):
        self.path = Path(path)
        self.fieldnames = list(fieldnames)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=self.fieldnames)
            writer.writeheader()
            writer.writerows(rows)

    def append(self, row: Dict[str, Any]) -> None:
        with open(self.path, "a", newline="", encoding="utf-8") as f:
            csv.DictWriter(f, fieldnames=self.fieldnames).writerow(row)


def checkpoint_dir(config: RunConfig) -> Path:
    return Path(config.paths.checkpoint_dir or Path(config.system.out_dir) / "checkpoints")


def set_trainable(module: nn.Module, trainable: bool) -> None:
    for param in module.parameters():
        param.requires_grad_(trainable)


def _merged_state(modules: Dict[str, nn.Module]) -> Dict[str, torch.Tensor]:
    return {f"{name}.{key}": value for name, module in modules.items() for key, value in module.state_dict().items()}


def _load_merged_state(modules: Dict[str, nn.Module], state: Dict[str, torch.Tensor]) -> None:
    for name, module in modules.items():
        prefix = f"{name}."
        module.load_state_dict({key[len(prefix):]: value for key, value in state.items() if key.startswith(prefix)})


def _save_resume(directory: Path, stage: str, modules: Dict[str, nn.Module], run_state: RunState,
                 optimizers: Dict[str, torch.optim.Optimizer]) -> Path:
    extra = {"run_state": run_state.to_record(),
             "optimizers": {name: opt.state_dict() for name, opt in optimizers.items()}}
    return save_checkpoint(checkpoint_path(directory, "trainer", stage), f"trainer-{stage}", _merged_state(modules),
                           extra)


def _try_resume(directory: Path, stage: str, modules: Dict[str, nn.Module],
                optimizers: Dict[str, torch.optim.Optimizer]) -> Optional[RunState]:
    path = checkpoint_path(directory, "trainer", stage)
    if not path.exists():
        return None
    expected = {key: list(value.shape) for key, value in _merged_state(modules).items()}
    payload = load_checkpoint(path, f"trainer-{stage}", expected)
    _load_merged_state(modules, payload["state"])
    for name, opt in optimizers.items():
        opt.load_state_dict(payload["extra"]["optimizers"][name])
    run_state = RunState.from_record(payload["extra"]["run_state"])
    logger.info(f"Resuming {stage} at epoch {run_state.epoch} from {path}")
    return run_state


def save_components(bundle: ModelBundle, directory: Path, names: Sequence[str]) -> None:
    components = bundle.components()
    for name in names:
        save_module(components[name], checkpoint_path(directory, name), name)


def load_components(bundle: ModelBundle, directory: Path, names: Sequence[str]) -> None:
    """Raises CheckpointError when any named component has no checkpoint in directory."""
    components = bundle.components()
    for name in names:
        load_module(components[name], checkpoint_path(directory, name), name)


def load_corpus_images(manifest: CorpusManifest, split: str = "train") -> List[torch.Tensor]:
    items = manifest.select(split, "image")
    if not items:
        raise DatasetError(f"No images in split '{split}'")
    return [load_image(manifest.resolve(item)) for item in items]


def _check_finite(losses: Dict[str, torch.Tensor], batch: Dict[str, torch.Tensor], run_dir: Path, stage: str,
                  epoch: int, step: int) -> None:
    bad = [name for name, value in losses.items() if not torch.isfinite(value).all()]
    if not bad:
        return
    dump_path = Path(run_dir) / f"diverged-{stage}-e{epoch}-s{step}.pt"
    dump_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"epoch": epoch, "step": step,
                "losses": {name: value.detach().cpu() for name, value in losses.items()},
                "batch": {name: value.detach().cpu() for name, value in batch.items()}}, dump_path)
    logger.error(f"[{stage}] epoch {epoch} step {step}: non-finite {', '.join(bad)}")
    raise TrainingDivergedError(f"Non-finite loss in {stage} at epoch {epoch} step {step}: {', '.join(bad)}", dump_path)


def run_stage1(config: RunConfig, bundle: ModelBundle, images: Sequence[torch.Tensor],
               run_dir: Optional[Path] = None, resume: bool = True) -> List[ContrastiveStep]:
    """
    Pretrain the DAM encoder for train.dam_epochs epochs, checkpointing after every epoch.

    Returns the loss history of the whole stage, including epochs restored from a resume point.
    """
    log_section("Stage 1: contrastive DAM pretraining")
    run_dir = Path(run_dir or config.system.out_dir)
    ckpt_dir = checkpoint_dir(config)
    epochs = config.train.dam_epochs
    if epochs == 0:
        logger.warning("train.dam_epochs is 0; the DAM keeps its random initialisation.")
        save_components(bundle, ckpt_dir, ["dam"])
        return []

    logger.info(f"tau={config.dam.tau} momentum={config.dam.momentum} queue={config.dam.queue_size} "
                f"lr={config.train.lr_dam} batch={config.train.batch_size}")
    dam = bundle.dam
    optimizer = make_optimizer(dam, config)
    modules = {"dam": dam}
    run_state = (_try_resume(ckpt_dir, "stage1", modules, {"dam": optimizer}) if resume else None) \
        or RunState(stage=STAGE_DAM, epoch=0)
    history = [ContrastiveStep(**record) for record in run_state.history]
    log = LossLog(run_dir / STAGE1_LOG, ["epoch", "step", "loss"], [asdict(r) for r in history])

    def on_epoch_end(epoch: int, records: List[ContrastiveStep]) -> None:
        history.extend(records)
        for record in records:
            log.append(asdict(record))
        state = RunState(stage=STAGE_DAM, epoch=epoch + 1, history=[asdict(r) for r in history])
        _save_resume(ckpt_dir, "stage1", modules, state, {"dam": optimizer})

    pretrain_dam(images, dam, config, epochs=epochs, optimizer=optimizer, start_epoch=run_state.epoch,
                 on_epoch_end=on_epoch_end)
    save_components(bundle, ckpt_dir, ["dam"])
    return history


def _stack(samples: Sequence[PairedSample], attribute: str, device: torch.device) -> torch.Tensor:
    return torch.stack([getattr(sample, attribute) for sample in samples]).to(device)


def _stage2_batches(config: RunConfig, manifest: Optional[CorpusManifest], epoch: int,
                    pairs: Optional[Sequence[PairedSample]]) -> List[Tuple[List[PairedSample], List[PairedSample]]]:
    """(low, high) sample batches; without fixed pairs the two sides come from independent draws."""
    size = config.train.batch_size
    if pairs is not None:
        low, high = list(pairs), list(pairs)
    else:
        if manifest is None:
            raise DatasetError("Stage 2 needs a corpus manifest or fixed pairs")
        d = config.data
        base = config.system.seed
        low = list(make_pairs(manifest, "train", d.kinds, d.levels, d.pairs_per_epoch,
                              derive_seed(base, STAGE_SINGLE, epoch, 0), d.patch_size, d.scale))
        high = list(make_pairs(manifest, "train", d.kinds, d.levels, d.pairs_per_epoch,
                               derive_seed(base, STAGE_SINGLE, epoch, 1), d.patch_size, d.scale))
    steps = math.ceil(len(low) / size)
    return [(low[i * size:(i + 1) * size], high[i * size:(i + 1) * size]) for i in range(steps)]


def generator_step(bundle: ModelBundle, x_l: torch.Tensor, x_h: torch.Tensor, weights: LossWeights,
                   config: RunConfig, opt_g: Optional[torch.optim.Optimizer], seed: int,
                   d_c: Optional[torch.Tensor] = None,
                   extra_loss: Optional[torch.Tensor] = None) -> Tuple[CycleResult, Dict[str, torch.Tensor]]:
    """Generator losses with the discriminators frozen; steps opt_g unless it is None."""
    c = config.cycle
    set_trainable(bundle.discriminators, False)
    try:
        result = cycle_loss(x_l, x_h, bundle.generator, bundle.heads, bundle.dam.encoder, weights, seed=seed,
                            cd_space=c.cd_space, d_c=d_c)
        g_losses = generator_objective(result, bundle.discriminators, weights, c.highpass_sigma)
        g_losses.update({"l_cl": result.l_cl, "l_ch": result.l_ch, "l_cd": result.l_cd})
        if extra_loss is not None:
            g_losses["distill"] = extra_loss
            g_losses["g_total"] = g_losses["g_total"] + config.drpm.distill_weight * extra_loss
        if opt_g is not None:
            opt_g.zero_grad(set_to_none=True)
            if torch.isfinite(g_losses["g_total"]):
                g_losses["g_total"].backward()
                opt_g.step()
    finally:
        set_trainable(bundle.discriminators, True)
    return result, g_losses


def discriminator_step(bundle: ModelBundle, x_l: torch.Tensor, x_h: torch.Tensor, result: CycleResult,
                       config: RunConfig, opt_d: torch.optim.Optimizer) -> Dict[str, torch.Tensor]:
    """Discriminator losses on detached generator outputs; only opt_d steps."""
    d_losses = discriminator_objective(x_l, x_h, result, bundle.discriminators, config.cycle.highpass_sigma)
    opt_d.zero_grad(set_to_none=True)
    if torch.isfinite(d_losses["d_total"]):
        d_losses["d_total"].backward()
        opt_d.step()
    return d_losses


def adversarial_step(bundle: ModelBundle, x_l: torch.Tensor, x_h: torch.Tensor, weights: LossWeights,
                     config: RunConfig, opt_g: torch.optim.Optimizer, opt_d: torch.optim.Optimizer,
                     seed: int, d_c: Optional[torch.Tensor] = None, extra_loss: Optional[torch.Tensor] = None,
                     update_generator: bool = True) -> Tuple[Dict[str, torch.Tensor], Dict[str, torch.Tensor]]:
    """One generator step with the discriminators fixed, then one discriminator step."""
    result, g_losses = generator_step(bundle, x_l, x_h, weights, config, opt_g if update_generator else None,
                                      seed, d_c=d_c, extra_loss=extra_loss)
    d_losses = discriminator_step(bundle, x_l, x_h, result, config, opt_d)
    return g_losses, d_losses


def _optimizer(params: Iterable[torch.Tensor], lr: float, config: RunConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam([p for p in params], lr=lr, betas=tuple(config.train.betas))


def _generator_params(bundle: ModelBundle, config: RunConfig) -> List[torch.Tensor]:
    params = list(bundle.dgem.parameters()) + list(bundle.heads.parameters())
    if not config.train.freeze_dam_stage2:
        params = list(bundle.dam.encoder_q.parameters()) + params
    return params


def run_stage2(config: RunConfig, bundle: ModelBundle, manifest: Optional[CorpusManifest] = None,
               run_dir: Optional[Path] = None, pairs: Optional[Sequence[PairedSample]] = None,
               resume: bool = True) -> List[Dict[str, float]]:
    """
    Cycle-adversarial training of the single-frame model over epochs [N_d, N_d + N_s).

    Args:
        pairs: fixed samples used every epoch instead of fresh draws from the manifest
    Raises:
        TrainingDivergedError: on the first non-finite loss
    """
    log_section("Stage 2: single-frame cycle-adversarial training")
    run_dir = Path(run_dir or config.system.out_dir)
    ckpt_dir = checkpoint_dir(config)
    weights = LossWeights.from_config(config.cycle)
    logger.info(f"Loss weights: adv={weights.adv} cyc={weights.cyc} hf={weights.hf} cd={weights.cd}")
    device = next(bundle.dgem.parameters()).device

    set_trainable(bundle.dam.encoder_q, not config.train.freeze_dam_stage2)
    set_trainable(bundle.dgem, True)
    set_trainable(bundle.heads, True)
    opt_g = _optimizer(_generator_params(bundle, config), config.train.lr_g, config)
    opt_d = _optimizer(bundle.discriminators.parameters(), config.train.lr_d, config)
    optimizers = {"g": opt_g, "d": opt_d}
    modules = {name: bundle.components()[name] for name in STAGE2_COMPONENTS}

    first, last = config.train.dam_epochs, config.train.dam_epochs + config.train.single_epochs
    run_state = (_try_resume(ckpt_dir, "stage2", modules, optimizers) if resume else None) \
        or RunState(stage=STAGE_SINGLE, epoch=first)
    fields = ["epoch", "step", "l_cl", "l_ch", "l_cd", "g_adv_h", "g_adv_l", "g_adv_hf", "g_total",
              "d_adv_h", "d_adv_l", "d_adv_hf", "d_total"]
    log = LossLog(run_dir / STAGE2_LOG, fields, run_state.history)

    bundle.train()
    for epoch in range(run_state.epoch, last):
        epoch_rows = []
        for step, (low, high) in enumerate(_stage2_batches(config, manifest, epoch, pairs)):
            x_l, x_h = _stack(low, "x_l", device), _stack(high, "x_h", device)
            g_losses, d_losses = adversarial_step(bundle, x_l, x_h, weights, config, opt_g, opt_d,
                                                  derive_seed(config.system.seed, STAGE_SINGLE, epoch, step))
            _check_finite({**g_losses, **d_losses}, {"x_l": x_l, "x_h": x_h}, run_dir, "stage2", epoch, step)
            row = {"epoch": epoch, "step": step}
            row.update({name: float(value.detach()) for name, value in {**g_losses, **d_losses}.items()
                        if name in fields})
            log.append(row)
            epoch_rows.append(row)
            logger.debug(f"[G/D] epoch {epoch} step {step} g_total {row['g_total']:.5f} d_total {row['d_total']:.5f}")
        run_state.history.extend(epoch_rows)
        run_state.epoch = epoch + 1
        mean_g = np.mean([r["g_total"] for r in epoch_rows])
        mean_cyc = np.mean([r["l_cl"] + r["l_ch"] for r in epoch_rows])
        logger.info(f"[G/D] epoch {epoch + 1}/{last}: g_total {mean_g:.4f}, cycle {mean_cyc:.4f}")
        _save_resume(ckpt_dir, "stage2", modules, run_state, optimizers)

    save_components(bundle, ckpt_dir, STAGE2_COMPONENTS)
    return run_state.history


def _stage3_pair(config: RunConfig, manifest: CorpusManifest, epoch: int,
                 clip_index: int) -> Tuple[List[torch.Tensor], List[torch.Tensor]]:
    """Low-quality frames and the high-quality frames the adversarial and cycle terms compare against."""
    d = config.data
    seed = derive_seed(config.system.seed, STAGE_VIDEO, epoch, clip_index)
    clip = sample_clip(manifest, "train", d.clip_length, seed)
    if d.degrade_clips:
        rng = np.random.default_rng(seed)
        kind = d.kinds[int(rng.integers(len(d.kinds)))]
        level = d.levels[int(rng.integers(len(d.levels)))]
        low, _ = degrade_clip(clip, kind, level, derive_seed(seed, 1), d.scale)
        return low.frames, clip.frames
    height, width = clip.frames[0].shape[-2:]
    if height != width:
        raise DatasetError("Undegraded clips need square frames to draw matching high-quality patches")
    high = make_pairs(manifest, "train", d.kinds, d.levels, len(clip), derive_seed(seed, 2), height * d.scale, d.scale)
    return clip.frames, [sample.x_h for sample in high]


def run_stage3(config: RunConfig, bundle: ModelBundle, manifest: CorpusManifest,
               run_dir: Optional[Path] = None, resume: bool = True) -> List[Dict[str, Any]]:
    """
    Train the DRPM over epochs [N_d + N_s, N) on clips.

    Key frames take d_c from the DAM and carry no DRPM gradient; the others take it from
    propagation over a detached history. The discriminators keep training on every frame.
    """
    log_section("Stage 3: DRPM training on video clips")
    run_dir = Path(run_dir or config.system.out_dir)
    ckpt_dir = checkpoint_dir(config)
    weights = LossWeights.from_config(config.cycle)
    delta_t = config.scheduler.delta_t
    if delta_t == 1:
        logger.warning("scheduler.delta_t is 1: every frame is a key frame and the DRPM receives no training steps.")
    logger.info(f"Loss weights: adv={weights.adv} cyc={weights.cyc} hf={weights.hf} cd={weights.cd}; "
                f"distill={'on' if config.drpm.distill else 'off'} ({config.drpm.distill_weight})")
    device = next(bundle.drpm.parameters()).device

    set_trainable(bundle.dam, False)
    set_trainable(bundle.heads, False)
    set_trainable(bundle.dgem, config.train.unfreeze_dgem_stage3)
    set_trainable(bundle.drpm, True)
    trainable = list(bundle.drpm.parameters())
    if config.train.unfreeze_dgem_stage3:
        trainable += list(bundle.dgem.parameters())
    opt_p = _optimizer(trainable, config.train.lr_g, config)
    opt_d = _optimizer(bundle.discriminators.parameters(), config.train.lr_d, config)
    optimizers = {"p": opt_p, "d": opt_d}
    modules = {"drpm": bundle.drpm, "dgem": bundle.dgem, "discriminators": bundle.discriminators}

    first = config.train.dam_epochs + config.train.single_epochs
    run_state = (_try_resume(ckpt_dir, "stage3", modules, optimizers) if resume else None) \
        or RunState(stage=STAGE_VIDEO, epoch=first)
    fields = ["epoch", "clip", "frame", "source", "g_total", "distill", "d_total"]
    log = LossLog(run_dir / STAGE3_LOG, fields, run_state.history)

    bundle.train()
    bundle.dam.eval()
    for epoch in range(run_state.epoch, config.train.total_epochs):
        epoch_rows = []
        for clip_index in range(config.data.clips_per_epoch):
            low_frames, high_frames = _stage3_pair(config, manifest, epoch, clip_index)
            scheduler = KeyFrameScheduler(config.scheduler)
            state = PropagationState(capacity=config.drpm.context)
            for index, (low, high) in enumerate(zip(low_frames, high_frames)):
                x_l, x_h = low.unsqueeze(0).to(device), high.unsqueeze(0).to(device)
                source = scheduler.next_source(index)
                with torch.no_grad():
                    d_c_dam = bundle.generator.represent(x_l)
                distill = None
                if source is RepresentationSource.DAM:
                    d_c = d_c_dam
                else:
                    d_c = propagate(state, bundle.drpm).unsqueeze(0)
                    if config.drpm.distill:
                        distill = F.mse_loss(d_c, d_c_dam)
                update = source is RepresentationSource.DRPM or config.train.unfreeze_dgem_stage3
                step_seed = derive_seed(config.system.seed, STAGE_VIDEO, epoch, clip_index, index)
                g_losses, d_losses = adversarial_step(bundle, x_l, x_h, weights, config, opt_p, opt_d, step_seed,
                                                      d_c=d_c, extra_loss=distill, update_generator=update)
                _check_finite({**g_losses, **d_losses}, {"x_l": x_l, "x_h": x_h}, run_dir, "stage3", epoch, index)
                state.update(index, d_c.detach().squeeze(0), source)
                row = {"epoch": epoch, "clip": clip_index, "frame": index, "source": source.value,
                       "g_total": float(g_losses["g_total"].detach()),
                       "distill": float(distill.detach()) if distill is not None else "",
                       "d_total": float(d_losses["d_total"].detach())}
                log.append(row)
                epoch_rows.append(row)
            logger.debug(f"[DRPM] epoch {epoch} clip {clip_index}: {scheduler.state.key_frames} key frames, "
                         f"{scheduler.state.propagated_frames} propagated")
        run_state.history.extend(epoch_rows)
        run_state.epoch = epoch + 1
        mean_g = np.mean([r["g_total"] for r in epoch_rows]) if epoch_rows else float("nan")
        logger.info(f"[DRPM] epoch {epoch + 1}/{config.train.total_epochs}: g_total {mean_g:.4f}")
        _save_resume(ckpt_dir, "stage3", modules, run_state, optimizers)

    save_components(bundle, ckpt_dir, ["drpm", "dgem", "discriminators"])
    return run_state.history


def train_drpm(config: RunConfig, bundle: ModelBundle, manifest: CorpusManifest,
               run_dir: Optional[Path] = None, resume: bool = True) -> List[Dict[str, Any]]:
    """Stage 3 from the single-frame checkpoints in the run's checkpoint directory."""
    ckpt_dir = checkpoint_dir(config)
    try:
        load_components(bundle, ckpt_dir, STAGE2_COMPONENTS)
    except CheckpointError as e:
        raise CheckpointError(f"DRPM training needs the single-frame weights: {e}") from e
    return run_stage3(config, bundle, manifest, run_dir, resume)
