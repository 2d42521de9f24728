# -*- coding: utf-8 -*-
"""
Degradation-aware module: a residual-block encoder producing implicit degradation
representations, trained with momentum contrast.
"""
import copy
import logging
from dataclasses import dataclass
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.imaging import ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DegradationRepresentation:
    """d_map is (B, C_rep, H/4, W/4); d_vec is (B, D_proj) with unit L2 norm."""
    d_map: torch.Tensor
    d_vec: torch.Tensor


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


def _stage_sizes(total_blocks: int) -> List[int]:
    return [total_blocks // 3 + (1 if i < total_blocks % 3 else 0) for i in range(3)]


class DegradationEncoder(nn.Module):
    """
    Residual encoder with two stride-2 downsamplings and a projection head.

    Widths double at each downsampling (base, 2*base, 4*base); C_rep = 4*base.
    """

    def __init__(self, base_channels: int = 64, res_blocks: int = 6, proj_dim: int = 256):
        super().__init__()
        widths = [base_channels, base_channels * 2, base_channels * 4]
        sizes = _stage_sizes(res_blocks)
        self.rep_channels = widths[-1]
        self.proj_dim = proj_dim

        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 3, padding=1), nn.LeakyReLU(0.1, inplace=True))
        self.stage1 = nn.Sequential(*[ResidualBlock(widths[0]) for _ in range(sizes[0])])
        self.down1 = nn.Sequential(nn.Conv2d(widths[0], widths[1], 3, stride=2, padding=1),
                                   nn.LeakyReLU(0.1, inplace=True))
        self.stage2 = nn.Sequential(*[ResidualBlock(widths[1]) for _ in range(sizes[1])])
        self.down2 = nn.Sequential(nn.Conv2d(widths[1], widths[2], 3, stride=2, padding=1),
                                   nn.LeakyReLU(0.1, inplace=True))
        self.stage3 = nn.Sequential(*[ResidualBlock(widths[2]) for _ in range(sizes[2])])
        self.fuse = nn.Conv2d(widths[2], widths[2], 3, padding=1)
        self.head = nn.Sequential(
            nn.Linear(widths[2], proj_dim),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Linear(proj_dim, proj_dim),
        )

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] % 4 or x.shape[-1] % 4:
            raise ShapeError(f"Encoder input {x.shape[-2]}x{x.shape[-1]} must be divisible by 4")
        x = self.stage1(self.stem(x))
        x = self.stage2(self.down1(x))
        x = self.stage3(self.down2(x))
        return self.fuse(x)

    def project(self, d_map: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.head(d_map.mean(dim=(2, 3))), dim=1)

    def forward(self, x: torch.Tensor) -> DegradationRepresentation:
        d_map = self.features(x)
        return DegradationRepresentation(d_map=d_map, d_vec=self.project(d_map))


def encode(image: torch.Tensor, encoder: DegradationEncoder) -> DegradationRepresentation:
    """Encode a (3, H, W) image or (B, 3, H, W) batch."""
    batch = image.unsqueeze(0) if image.dim() == 3 else image
    return encoder(batch)


class MomentumQueue(nn.Module):
    """Ring buffer of K unit vectors; enqueueing B keys evicts the oldest B."""

    def __init__(self, capacity: int, dim: int, fill_random: bool = True, seed: int = 0):
        super().__init__()
        self.capacity = int(capacity)
        self.dim = int(dim)
        generator = torch.Generator().manual_seed(seed)
        entries = F.normalize(torch.randn(self.capacity, self.dim, generator=generator), dim=1)
        self.register_buffer("entries", entries)
        self.register_buffer("write_head", torch.zeros((), dtype=torch.long))
        self.register_buffer("filled", torch.tensor(self.capacity if fill_random else 0, dtype=torch.long))

    def __len__(self) -> int:
        return int(self.filled)

    def negatives(self) -> torch.Tensor:
        """Stored keys, oldest first."""
        count = len(self)
        if count < self.capacity:
            return self.entries[:count]
        head = int(self.write_head)
        return torch.cat([self.entries[head:], self.entries[:head]], dim=0)

    @torch.no_grad()
    def enqueue(self, keys: torch.Tensor) -> None:
        if keys.dim() != 2 or keys.shape[1] != self.dim:
            raise ShapeError(f"Expected keys of shape (B, {self.dim}), got {tuple(keys.shape)}")
        norms = keys.norm(dim=1)
        if not torch.allclose(norms, torch.ones_like(norms), atol=1e-5):
            raise ValueError("Queue entries must have unit norm")
        if self.capacity == 0:
            return
        keys = keys.detach().to(self.entries.dtype)[-self.capacity:]
        head = int(self.write_head)
        for offset in range(keys.shape[0]):
            self.entries[(head + offset) % self.capacity] = keys[offset]
        self.write_head.fill_((head + keys.shape[0]) % self.capacity)
        self.filled.fill_(min(self.capacity, len(self) + keys.shape[0]))


class DegradationAwareModule(nn.Module):
    """Query encoder, momentum key encoder and the negative-key queue."""

    def __init__(self, base_channels: int = 64, res_blocks: int = 6, proj_dim: int = 256, queue_size: int = 1024):
        super().__init__()
        self.encoder_q = DegradationEncoder(base_channels, res_blocks, proj_dim)
        self.encoder_k = copy.deepcopy(self.encoder_q)
        for param in self.encoder_k.parameters():
            param.requires_grad = False
        self.queue = MomentumQueue(queue_size, proj_dim)

    @property
    def encoder(self) -> DegradationEncoder:
        return self.encoder_q

    def forward(self, x: torch.Tensor) -> DegradationRepresentation:
        return self.encoder_q(x)
