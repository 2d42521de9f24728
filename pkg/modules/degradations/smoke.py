# -*- coding: utf-8 -*-
import logging
from typing import Tuple

import numpy as np
import torch

from modules.constants import AIRLIGHT_RANGE, SMOKE_MEAN_RANGES
from .base import (
    DegradationModel,
    DegradationParameters,
    as_airlight,
    as_map,
    batched,
    check_airlight,
    check_unit_field,
    smooth_field,
)

logger = logging.getLogger(__name__)


def apply_haze(image: torch.Tensor, transmission, airlight) -> torch.Tensor:
    """I = J * T + A * (1 - T), pointwise."""
    batch, squeezed = batched(image)
    t = as_map(transmission, batch)
    a = as_airlight(airlight, batch)
    out = batch * t + a * (1 - t)
    return out.squeeze(0) if squeezed else out


class SmokeModel(DegradationModel):
    """Surgical smoke as a haze layer."""

    kind = "smoke"

    def _perform_validation(self, params: DegradationParameters) -> None:
        check_unit_field(params.transmission, "transmission")
        check_airlight(params.airlight)

    def _perform_degradation(self, image: torch.Tensor, params: DegradationParameters) -> torch.Tensor:
        return apply_haze(image, params.transmission, params.airlight)

    def _perform_sampling(self, level: str, rng: np.random.Generator, size: Tuple[int, int]) -> DegradationParameters:
        mean = float(rng.uniform(*SMOKE_MEAN_RANGES[level]))
        airlight = float(rng.uniform(*AIRLIGHT_RANGE))
        return DegradationParameters(kind=self.kind, transmission=smooth_field(rng, size, mean), airlight=airlight,
                                     extra={"transmission_target_mean": mean})


def degrade_smoke(image: torch.Tensor, transmission, airlight) -> torch.Tensor:
    check_unit_field(transmission, "transmission")
    check_airlight(airlight)
    return apply_haze(image, transmission, airlight).clamp(0.0, 1.0)
