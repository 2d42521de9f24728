# -*- coding: utf-8 -*-
"""
Reverse generation and loss assembly for cycle-consistent adversarial training.

G_H enhances a low-quality image and exposes d_c. G_L regresses explicit degradation
parameters from d_c and runs the matching degradation model. Three discriminators judge
low-quality images, enhanced images and highpass residuals.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.config import CycleConfig
from modules.constants import DISCRIMINATOR_EPS
from modules.degradations import DegradationParameters, synthesize
from modules.imaging import ShapeError, highpass
from modules.networks.dam import DegradationEncoder
from modules.networks.discriminators import DiscriminatorSet
from modules.networks.generator import EnhancementGenerator
from modules.networks.heads import RegressionHeads

logger = logging.getLogger(__name__)


class DiscriminatorOutputError(ValueError):
    """Raised when a discriminator emits values outside [0, 1] or non-finite values."""


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    cyc: float = 10.0
    hf: float = 0.5
    cd: float = 1.0

    def __post_init__(self):
        for name in ("adv", "cyc", "hf", "cd"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"Loss weight '{name}' must be finite and non-negative, got {value}")

    @classmethod
    def from_config(cls, config: CycleConfig) -> "LossWeights":
        return cls(adv=config.lambda_adv, cyc=config.lambda_cyc, hf=config.lambda_hf, cd=config.lambda_cd)


def guard(output: torch.Tensor, eps: float = DISCRIMINATOR_EPS) -> torch.Tensor:
    """Check a realness map and clamp it into [eps, 1 - eps]."""
    values = output.detach()
    if not torch.isfinite(values).all():
        raise DiscriminatorOutputError("Discriminator output contains non-finite values")
    if values.min() < 0 or values.max() > 1:
        raise DiscriminatorOutputError(
            f"Discriminator output must lie in [0, 1], got [{float(values.min()):.4g}, {float(values.max()):.4g}]"
        )
    return output.clamp(eps, 1.0 - eps)


def adversarial_value(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """E[log D(real)] + E[log(1 - D(fake))]; the discriminator ascends this value."""
    return torch.log(guard(d_real)).mean() + torch.log(1.0 - guard(d_fake)).mean()


def adv_loss_GH(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """D_H on real high-quality images and on G_H(x_l)."""
    return adversarial_value(d_real, d_fake)


def adv_loss_GL(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """D_L on real low-quality images and on G_L(x_h)."""
    return adversarial_value(d_real, d_fake)


def adv_loss_hf(x_h: torch.Tensor, x_enh: torch.Tensor, d_hf: nn.Module, sigma: float = 1.0) -> torch.Tensor:
    return adversarial_value(d_hf(highpass(x_h, sigma)), d_hf(highpass(x_enh, sigma)))


def generator_adv_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term, -E[log D(fake)]."""
    return -torch.log(guard(d_fake)).mean()


def degrade_back(x_enh: torch.Tensor, d_c: torch.Tensor, heads: RegressionHeads,
                 seed: Optional[int], kind: Optional[str] = None) -> Tuple[torch.Tensor, DegradationParameters]:
    """G_L: regress explicit parameters from d_c with the head for kind and apply that degradation model."""
    params = heads(d_c, kind=kind)
    return synthesize(x_enh, params, seed), params


@dataclass
class CycleResult:
    """Loss terms plus the intermediate images the adversarial terms need."""
    l_cl: torch.Tensor
    l_ch: torch.Tensor
    l_cd: torch.Tensor
    total: torch.Tensor
    x_enh: torch.Tensor
    x_fake_low: torch.Tensor
    d_c: torch.Tensor


def _l1(a: torch.Tensor, b: torch.Tensor, name: str) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: {tuple(a.shape)} does not match {tuple(b.shape)}")
    return F.l1_loss(a, b)


def cycle_loss(x_l: torch.Tensor, x_h: torch.Tensor, generator: EnhancementGenerator, heads: RegressionHeads,
               encoder: DegradationEncoder, weights: LossWeights, seed: int = 0, cd_space: str = "d_vec",
               d_c: Optional[torch.Tensor] = None) -> CycleResult:
    """
    L_cl = |G_L(G_H(x_l)) - x_l|, L_ch = |G_H(G_L(x_h)) - x_h|, L_cd = |DAM(G_L(x_h)) - DAM(x_l)|.

    G_L(x_h) uses the d_c of the paired x_l (item i with item i). A given d_c replaces the
    encoder's estimate for x_l, which is how propagated representations enter the cycle.
    """
    if x_l.shape[0] != x_h.shape[0]:
        raise ShapeError(f"Batch sizes differ: {x_l.shape[0]} low-quality vs {x_h.shape[0]} high-quality")
    rep_l = encoder(x_l)
    if d_c is None:
        d_c = generator.compress(rep_l.d_map)
    x_enh, d_c = generator(x_l, d_c=d_c)

    x_rec_low, _ = degrade_back(x_enh, d_c, heads, seed)
    l_cl = _l1(x_rec_low, x_l, "L_cl")

    x_fake_low, _ = degrade_back(x_h, d_c, heads, seed + 1)
    x_rec_high, _ = generator(x_fake_low)
    l_ch = _l1(x_rec_high, x_h, "L_ch")

    rep_fake = encoder(x_fake_low)
    if cd_space == "d_map":
        l_cd = _l1(rep_fake.d_map, rep_l.d_map, "L_cd")
    else:
        l_cd = _l1(rep_fake.d_vec, rep_l.d_vec, "L_cd")

    total = l_cl + l_ch + weights.cd * l_cd
    return CycleResult(l_cl=l_cl, l_ch=l_ch, l_cd=l_cd, total=total, x_enh=x_enh, x_fake_low=x_fake_low, d_c=d_c)


def generator_objective(result: CycleResult, discriminators: DiscriminatorSet, weights: LossWeights,
                        sigma: float = 1.0) -> Dict[str, torch.Tensor]:
    """lambda_adv * (H and L terms) + lambda_hf * high-frequency term + lambda_cyc * cycle total."""
    adv_h = generator_adv_loss(discriminators.high(result.x_enh))
    adv_l = generator_adv_loss(discriminators.low(result.x_fake_low))
    adv_hf = generator_adv_loss(discriminators.highfreq(highpass(result.x_enh, sigma)))
    total = weights.adv * (adv_h + adv_l) + weights.hf * adv_hf + weights.cyc * result.total
    return {"g_adv_h": adv_h, "g_adv_l": adv_l, "g_adv_hf": adv_hf, "g_total": total}


def discriminator_objective(x_l: torch.Tensor, x_h: torch.Tensor, result: CycleResult,
                            discriminators: DiscriminatorSet, sigma: float = 1.0) -> Dict[str, torch.Tensor]:
    """Negated sum of the three adversarial values; generated images are detached."""
    value_h = adv_loss_GH(discriminators.high(x_h), discriminators.high(result.x_enh.detach()))
    value_l = adv_loss_GL(discriminators.low(x_l), discriminators.low(result.x_fake_low.detach()))
    value_hf = adv_loss_hf(x_h, result.x_enh.detach(), discriminators.highfreq, sigma)
    return {"d_adv_h": value_h, "d_adv_l": value_l, "d_adv_hf": value_hf,
            "d_total": -(value_h + value_l + value_hf)}
