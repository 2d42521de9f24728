# -*- coding: utf-8 -*-
"""
Lightweight parameter regression heads for the reverse (degrading) generator.

Each KindHead maps the compressed representation d_c to the explicit parameters of one
predefined degradation model. Spatial quantities are regressed on a coarse grid and
resampled by the degradation operators; every output satisfies the parameter
invariants by construction.
"""
import logging
import math
from typing import List, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.constants import DEGRADATION_KINDS, FIELD_FLOOR
from modules.degradations import DegradationParameterError, DegradationParameters

logger = logging.getLogger(__name__)

_SOFTPLUS_ONE = math.log(math.e - 1.0)


class KindHead(nn.Module):
    """d_c (B, D_c) -> DegradationParameters with batched fields for one degradation kind."""

    def __init__(self, kind: str = "ses_composite", embed_dim: int = 60, hidden: int = 64, grid: int = 8,
                 kernel_size: int = 15, scale: int = 2):
        super().__init__()
        if kind not in DEGRADATION_KINDS:
            raise DegradationParameterError("kind", f"unknown degradation kind '{kind}'")
        if kernel_size % 2 == 0:
            raise DegradationParameterError("blur_kernel", "regressed kernel size must be odd")
        self.kind = kind
        self.grid = grid
        self.kernel_size = kernel_size
        self.scale = scale
        cells = grid * grid

        self.trunk = nn.Sequential(nn.Linear(embed_dim, hidden), nn.LeakyReLU(0.1, inplace=True))
        self.noise = nn.Linear(hidden, cells)
        self.kernel = nn.Linear(hidden, kernel_size * kernel_size) if kind in ("motion_blur", "ses_composite") else None
        self.illumination = nn.Linear(hidden, cells) if kind == "low_light" else None
        self.transmission = nn.Linear(hidden, cells) if kind in ("smoke", "ses_composite") else None
        self.airlight = nn.Linear(hidden, 1) if kind in ("smoke", "ses_composite") else None
        self.gains = nn.Linear(hidden, 3) if kind == "ses_composite" else None
        self._init_biases()

    def _init_biases(self) -> None:
        # start near clean: weak noise, a narrow kernel, full light and transmission, unit gains
        nn.init.constant_(self.noise.bias, -4.0)
        if self.kernel is not None:
            radius = self.kernel_size // 2
            taps = torch.arange(-radius, radius + 1, dtype=torch.float32)
            dist2 = taps.view(-1, 1) ** 2 + taps.view(1, -1) ** 2
            with torch.no_grad():
                self.kernel.bias.copy_(-dist2.flatten() / 2.0)
        for head in (self.illumination, self.transmission):
            if head is not None:
                nn.init.constant_(head.bias, 3.0)
        if self.airlight is not None:
            nn.init.constant_(self.airlight.bias, 1.5)
        if self.gains is not None:
            nn.init.constant_(self.gains.bias, _SOFTPLUS_ONE)

    def _field(self, head: nn.Linear, hidden: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(head(hidden)).view(-1, 1, self.grid, self.grid).clamp_min(FIELD_FLOOR)

    def forward(self, d_c: torch.Tensor) -> DegradationParameters:
        hidden = self.trunk(d_c)
        params = DegradationParameters(kind=self.kind, scale=self.scale)
        params.noise_std = 0.5 * torch.sigmoid(self.noise(hidden)).view(-1, 1, self.grid, self.grid)
        if self.kernel is not None:
            logits = self.kernel(hidden).double()
            kernel = F.softmax(logits, dim=-1).to(d_c.dtype)
            params.blur_kernel = kernel.view(-1, self.kernel_size, self.kernel_size)
        if self.illumination is not None:
            params.illumination = self._field(self.illumination, hidden)
        if self.transmission is not None:
            params.transmission = self._field(self.transmission, hidden)
        if self.airlight is not None:
            params.airlight = torch.sigmoid(self.airlight(hidden)).view(-1, 1)
        if self.gains is not None:
            alpha, beta, gamma = (F.softplus(self.gains(hidden)) + 1e-4).unbind(dim=-1)
            params.alpha, params.beta, params.gamma = alpha, beta, gamma
        return params


class RegressionHeads(nn.Module):
    """One KindHead per degradation kind; forward uses default_kind unless told otherwise."""

    def __init__(self, kinds: Union[str, Sequence[str]] = DEGRADATION_KINDS, embed_dim: int = 60, hidden: int = 64,
                 grid: int = 8, kernel_size: int = 15, scale: int = 2, default_kind: Optional[str] = None):
        super().__init__()
        kinds = [kinds] if isinstance(kinds, str) else list(kinds)
        if not kinds:
            raise DegradationParameterError("kind", "at least one degradation kind is required")
        self.heads = nn.ModuleDict({kind: KindHead(kind, embed_dim, hidden, grid, kernel_size, scale) for kind in kinds})
        self.default_kind = default_kind or kinds[0]
        if self.default_kind not in self.heads:
            raise DegradationParameterError("kind", f"default kind '{self.default_kind}' has no head")

    @property
    def kinds(self) -> List[str]:
        return list(self.heads.keys())

    def head(self, kind: Optional[str] = None) -> KindHead:
        kind = kind or self.default_kind
        if kind not in self.heads:
            raise DegradationParameterError("kind", f"no regression head for '{kind}'; available: {self.kinds}")
        return self.heads[kind]

    def forward(self, d_c: torch.Tensor, kind: Optional[str] = None) -> DegradationParameters:
        return self.head(kind)(d_c)
