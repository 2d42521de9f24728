# -*- coding: utf-8 -*-
"""
Momentum-contrast pretraining of the degradation encoder.

Two crops of one clean image degraded with the same parameters form a positive pair; keys of
earlier batches held in the momentum queue are the negatives.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.config import RunConfig
from modules.constants import STAGE_DAM
from modules.datasets import DatasetError
from modules.degradations import sample_parameters, synthesize
from modules.imaging import ShapeError, crop
from modules.networks.dam import DegradationAwareModule, MomentumQueue
from modules.utils import derive_seed

logger = logging.getLogger(__name__)

Negatives = Union[MomentumQueue, torch.Tensor, None]


@dataclass
class ContrastiveStep:
    epoch: int
    step: int
    loss: float


def info_nce_loss(q: torch.Tensor, k_pos: torch.Tensor, queue: Negatives, tau: float) -> torch.Tensor:
    """
    Mean over the batch of -log softmax of the positive logit.

    With a queue (or a (K, D) tensor) the negatives are its entries; with queue=None the other
    keys of the batch are the negatives.
    """
    if tau <= 0:
        raise ValueError(f"Temperature must be > 0, got {tau}")
    if q.shape != k_pos.shape or q.dim() != 2:
        raise ShapeError(f"Queries {tuple(q.shape)} and keys {tuple(k_pos.shape)} must share a (B, D) shape")

    if queue is None:
        logits = q @ k_pos.t() / tau
        labels = torch.arange(q.shape[0], device=q.device)
        return F.cross_entropy(logits, labels)

    negatives = queue.negatives() if isinstance(queue, MomentumQueue) else queue
    l_pos = (q * k_pos).sum(dim=1, keepdim=True)
    l_neg = q @ negatives.to(q).t()
    logits = torch.cat([l_pos, l_neg], dim=1) / tau
    labels = torch.zeros(q.shape[0], dtype=torch.long, device=q.device)
    return F.cross_entropy(logits, labels)


def _parameters(source: Union[nn.Module, Iterable[torch.Tensor]]) -> List[torch.Tensor]:
    return list(source.parameters()) if isinstance(source, nn.Module) else list(source)


@torch.no_grad()
def momentum_update(query_params, key_params, m: float):
    """k <- m * k + (1 - m) * q for every parameter pair, in place; returns the key weights."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"Momentum must lie in [0, 1], got {m}")
    queries, keys = _parameters(query_params), _parameters(key_params)
    if len(queries) != len(keys):
        raise ShapeError(f"Query has {len(queries)} parameters, key has {len(keys)}")
    for param_q, param_k in zip(queries, keys):
        if param_q.shape != param_k.shape:
            raise ShapeError(f"Parameter shape mismatch: {tuple(param_q.shape)} vs {tuple(param_k.shape)}")
        param_k.mul_(m).add_(param_q.detach(), alpha=1.0 - m)
    return key_params


def make_views(images: Sequence[torch.Tensor], indices: Sequence[int], kinds: Sequence[str], levels: Sequence[str],
               crop_size: int, scale: int, seed: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Query and key batches: per item, two crops degraded with one parameter draw."""
    views_q, views_k = [], []
    for position, index in enumerate(indices):
        rng = np.random.default_rng(derive_seed(seed, position))
        image = images[int(index)]
        height, width = image.shape[-2:]
        if min(height, width) < crop_size:
            raise DatasetError(f"Image {index} ({height}x{width}) is smaller than the {crop_size}px crop")
        kind = kinds[int(rng.integers(len(kinds)))]
        level = levels[int(rng.integers(len(levels)))]
        params = sample_parameters(kind, level, int(rng.integers(2 ** 31)), size=(crop_size, crop_size), scale=scale)
        for views in (views_q, views_k):
            top = int(rng.integers(0, height - crop_size + 1))
            left = int(rng.integers(0, width - crop_size + 1))
            views.append(synthesize(crop(image, top, left, crop_size), params, int(rng.integers(2 ** 31))))
    return torch.stack(views_q), torch.stack(views_k)


def contrastive_step(dam: DegradationAwareModule, optimizer: torch.optim.Optimizer, view_q: torch.Tensor,
                     view_k: torch.Tensor, tau: float, momentum: float) -> float:
    q = dam.encoder_q(view_q).d_vec
    with torch.no_grad():
        momentum_update(dam.encoder_q, dam.encoder_k, momentum)
        k = dam.encoder_k(view_k).d_vec
    queue = dam.queue if dam.queue.capacity > 0 else None
    loss = info_nce_loss(q, k, queue, tau)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"Contrastive loss is not finite: {float(loss)}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    if queue is not None:
        queue.enqueue(k)
    return float(loss.detach())


def make_optimizer(dam: DegradationAwareModule, config: RunConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(dam.encoder_q.parameters(), lr=config.train.lr_dam, betas=tuple(config.train.betas))


def pretrain_dam(images: Sequence[torch.Tensor], dam: DegradationAwareModule, config: RunConfig,
                 epochs: Optional[int] = None, seed: Optional[int] = None,
                 optimizer: Optional[torch.optim.Optimizer] = None, start_epoch: int = 0,
                 on_epoch_end: Optional[Callable[[int, List[ContrastiveStep]], None]] = None) -> List[ContrastiveStep]:
    """
    Train the query encoder with InfoNCE for the given epochs; one step per batch.

    Args:
        images: clean images, each at least dam.crop_size on its shorter side
        on_epoch_end: called after every epoch with the epoch index and that epoch's records
    """
    if not images:
        raise DatasetError("Cannot pretrain on an empty corpus")
    epochs = config.train.dam_epochs if epochs is None else epochs
    seed = config.system.seed if seed is None else seed
    optimizer = optimizer or make_optimizer(dam, config)
    device = next(dam.parameters()).device
    batch_size = config.train.batch_size
    steps = math.ceil(len(images) / batch_size)
    records: List[ContrastiveStep] = []

    dam.train()
    for epoch in range(start_epoch, epochs):
        order = np.random.default_rng(derive_seed(seed, STAGE_DAM, epoch)).permutation(len(images))
        epoch_records = []
        for step in range(steps):
            indices = order[step * batch_size:(step + 1) * batch_size]
            view_q, view_k = make_views(images, indices, config.data.kinds, config.data.levels, config.dam.crop_size,
                                        config.data.scale, derive_seed(seed, STAGE_DAM, epoch, step))
            loss = contrastive_step(dam, optimizer, view_q.to(device), view_k.to(device), config.dam.tau,
                                    config.dam.momentum)
            epoch_records.append(ContrastiveStep(epoch, step, loss))
            logger.debug(f"[DAM] epoch {epoch} step {step} loss {loss:.6f}")
        mean_loss = sum(r.loss for r in epoch_records) / len(epoch_records)
        logger.info(f"[DAM] epoch {epoch + 1}/{epochs}: mean InfoNCE {mean_loss:.4f} over {len(epoch_records)} steps")
        records.extend(epoch_records)
        if on_epoch_end is not None:
            on_epoch_end(epoch, epoch_records)
    return records
