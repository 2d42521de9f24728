# -*- coding: utf-8 -*-
"""
Patch discriminators for the low-quality domain, the high-quality domain and the
high-frequency residuals of high-quality images.
"""
import logging

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)


class PatchDiscriminator(nn.Module):
    """Strided convolutional patch classifier emitting a realness map in (0, 1)."""

    def __init__(self, input_nc: int = 3, ndf: int = 64, n_layers: int = 3):
        super().__init__()
        layers = [
            nn.Conv2d(input_nc, ndf, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2, True),
        ]
        nf_mult = 1
        for n in range(1, n_layers):
            nf_mult_prev = nf_mult
            nf_mult = min(2 ** n, 8)
            layers += [
                nn.Conv2d(ndf * nf_mult_prev, ndf * nf_mult, kernel_size=4, stride=2, padding=1),
                nn.InstanceNorm2d(ndf * nf_mult),
                nn.LeakyReLU(0.2, True),
            ]
        nf_mult_prev = nf_mult
        nf_mult = min(2 ** n_layers, 8)
        layers += [
            nn.Conv2d(ndf * nf_mult_prev, ndf * nf_mult, kernel_size=4, stride=1, padding=1),
            nn.InstanceNorm2d(ndf * nf_mult),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf * nf_mult, 1, kernel_size=4, stride=1, padding=1),
            nn.Sigmoid(),
        ]
        self.model = nn.Sequential(*layers)
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Conv2d):
        nn.init.normal_(module.weight, 0.0, 0.02)
        nn.init.zeros_(module.bias)


class DiscriminatorSet(nn.Module):
    """D_L judges low-quality images, D_H enhanced images, D_hf highpass residuals."""

    def __init__(self, ndf: int = 64, n_layers: int = 3):
        super().__init__()
        self.low = PatchDiscriminator(3, ndf, n_layers)
        self.high = PatchDiscriminator(3, ndf, n_layers)
        self.highfreq = PatchDiscriminator(3, ndf, n_layers)
