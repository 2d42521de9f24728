# -*- coding: utf-8 -*-
import logging
from typing import Tuple

import numpy as np
import torch

from modules.constants import LOWLIGHT_MEAN_RANGES, LOWLIGHT_NOISE_RANGES
from .base import (
    DegradationModel,
    DegradationParameters,
    add_noise,
    as_map,
    batched,
    check_noise_std,
    check_unit_field,
    smooth_field,
)

logger = logging.getLogger(__name__)


def apply_illumination(image: torch.Tensor, illumination) -> torch.Tensor:
    batch, squeezed = batched(image)
    out = batch * as_map(illumination, batch)
    return out.squeeze(0) if squeezed else out


class LowLightModel(DegradationModel):
    """Low illumination with sensor noise, I = J * L + n."""

    kind = "low_light"

    def _perform_validation(self, params: DegradationParameters) -> None:
        check_unit_field(params.illumination, "illumination")

    def _perform_degradation(self, image: torch.Tensor, params: DegradationParameters) -> torch.Tensor:
        return apply_illumination(image, params.illumination)

    def _perform_sampling(self, level: str, rng: np.random.Generator, size: Tuple[int, int]) -> DegradationParameters:
        mean = float(rng.uniform(*LOWLIGHT_MEAN_RANGES[level]))
        noise_std = float(rng.uniform(*LOWLIGHT_NOISE_RANGES[level]))
        return DegradationParameters(kind=self.kind, illumination=smooth_field(rng, size, mean),
                                     noise_std=noise_std, extra={"illumination_target_mean": mean})


def degrade_lowlight(image: torch.Tensor, illumination, n_std, seed: int) -> torch.Tensor:
    check_unit_field(illumination, "illumination")
    check_noise_std(n_std)
    return add_noise(apply_illumination(image, illumination), n_std, seed).clamp(0.0, 1.0)
