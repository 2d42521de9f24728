# -*- coding: utf-8 -*-
import logging
from typing import Tuple

import numpy as np
import torch

from modules.constants import NOISE_STD_RANGES
from .base import DegradationModel, DegradationParameters, add_noise, check_noise_std

logger = logging.getLogger(__name__)


class NoiseModel(DegradationModel):
    """Additive gaussian noise, I = J + n."""

    kind = "noise"

    def _perform_validation(self, params: DegradationParameters) -> None:
        pass

    def _perform_degradation(self, image: torch.Tensor, params: DegradationParameters) -> torch.Tensor:
        return image

    def _perform_sampling(self, level: str, rng: np.random.Generator, size: Tuple[int, int]) -> DegradationParameters:
        low, high = NOISE_STD_RANGES[level]
        return DegradationParameters(kind=self.kind, noise_std=float(rng.uniform(low, high)))


def degrade_noise(image: torch.Tensor, n_std, seed: int) -> torch.Tensor:
    check_noise_std(n_std)
    return add_noise(image, n_std, seed).clamp(0.0, 1.0)
