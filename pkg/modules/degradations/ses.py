# -*- coding: utf-8 -*-
"""
Composite degradation for stereo endoscopic sequences:

    I = (beta * (alpha * J conv k) ** gamma * T + A * (1 - T)) downscaled by s, plus n
"""
import logging
from typing import Tuple

import numpy as np
import torch

from modules.constants import (
    AIRLIGHT_RANGE,
    DEFAULT_SCALE,
    GAMMA_FLOOR,
    LOWLIGHT_MEAN_RANGES,
    NOISE_STD_RANGES,
    SES_ALPHA_RANGE,
    SES_GAMMA_RANGES,
    SMOKE_MEAN_RANGES,
)
from .base import (
    DegradationModel,
    DegradationParameters,
    as_scalar,
    batched,
    check_airlight,
    check_kernel,
    check_positive,
    check_unit_field,
    convolve,
    is_identity_kernel,
    smooth_field,
)
from .blur import sample_motion_kernel
from .smoke import apply_haze

logger = logging.getLogger(__name__)


def _is_one(value) -> bool:
    return not isinstance(value, torch.Tensor) and float(value) == 1.0


def apply_gamma(image: torch.Tensor, gamma) -> torch.Tensor:
    if _is_one(gamma):
        return image
    batch, squeezed = batched(image)
    exponent = as_scalar(gamma, batch)
    positive = batch.clamp(min=0.0)
    out = torch.where(positive > 0, positive.clamp(min=GAMMA_FLOOR).pow(exponent), torch.zeros_like(positive))
    return out.squeeze(0) if squeezed else out


def apply_gain(image: torch.Tensor, gain) -> torch.Tensor:
    if _is_one(gain):
        return image
    batch, squeezed = batched(image)
    out = batch * as_scalar(gain, batch)
    return out.squeeze(0) if squeezed else out


class SESCompositeModel(DegradationModel):
    kind = "ses_composite"

    def _perform_validation(self, params: DegradationParameters) -> None:
        check_positive(params.alpha, "alpha")
        check_positive(params.beta, "beta")
        check_positive(params.gamma, "gamma")
        check_kernel(params.blur_kernel)
        check_unit_field(params.transmission, "transmission")
        check_airlight(params.airlight)

    def _perform_degradation(self, image: torch.Tensor, params: DegradationParameters) -> torch.Tensor:
        out = apply_gain(image, params.alpha)
        if not is_identity_kernel(params.blur_kernel):
            out = convolve(out, params.blur_kernel)
        out = apply_gamma(out, params.gamma)
        out = apply_gain(out, params.beta)
        return apply_haze(out, params.transmission, params.airlight)

    def _perform_sampling(self, level: str, rng: np.random.Generator, size: Tuple[int, int]) -> DegradationParameters:
        return DegradationParameters(
            kind=self.kind,
            alpha=float(rng.uniform(*SES_ALPHA_RANGE)),
            blur_kernel=sample_motion_kernel(level, rng),
            gamma=float(rng.uniform(*SES_GAMMA_RANGES[level])),
            beta=float(rng.uniform(*LOWLIGHT_MEAN_RANGES[level])),
            transmission=smooth_field(rng, size, float(rng.uniform(*SMOKE_MEAN_RANGES[level]))),
            airlight=float(rng.uniform(*AIRLIGHT_RANGE)),
            noise_std=float(rng.uniform(*NOISE_STD_RANGES[level])),
            scale=DEFAULT_SCALE,
        )


def degrade_ses(image: torch.Tensor, params: DegradationParameters, seed: int) -> torch.Tensor:
    return SESCompositeModel().synthesize(image, params, seed)
