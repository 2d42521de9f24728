# -*- coding: utf-8 -*-
import logging
from typing import Optional, Tuple

import torch
import torch.nn as nn

from .dam import DegradationEncoder
from .dgem import DegradationGuidedEnhancer

logger = logging.getLogger(__name__)


class EnhancementGenerator(nn.Module):
    """G_H: the DAM encoder followed by the degradation-guided enhancer; also returns d_c."""

    def __init__(self, encoder: DegradationEncoder, dgem: DegradationGuidedEnhancer):
        super().__init__()
        self.encoder = encoder
        self.dgem = dgem

    def compress(self, d_map: torch.Tensor) -> torch.Tensor:
        return self.dgem.compress(d_map)

    def represent(self, x_l: torch.Tensor) -> torch.Tensor:
        return self.compress(self.encoder.features(x_l))

    def forward(self, x_l: torch.Tensor, d_c: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        if d_c is None:
            d_c = self.represent(x_l)
        return self.dgem(x_l, d_c=d_c)


def enhance(x_l: torch.Tensor, generator: EnhancementGenerator) -> Tuple[torch.Tensor, torch.Tensor]:
    """Enhance a (3, H, W) image or (B, 3, H, W) batch; returns (x_enh, d_c) in the input layout."""
    squeezed = x_l.dim() == 3
    batch = x_l.unsqueeze(0) if squeezed else x_l
    x_enh, d_c = generator(batch)
    if squeezed:
        return x_enh.squeeze(0), d_c.squeeze(0)
    return x_enh, d_c
