# -*- coding: utf-8 -*-
import logging
import math
from typing import Tuple

import numpy as np
import torch

from modules.constants import BLUR_LENGTH_RANGES
from .base import DegradationModel, DegradationParameters, check_kernel, convolve, is_identity_kernel

logger = logging.getLogger(__name__)


def motion_kernel(length: int, angle: float, oversample: int = 4) -> torch.Tensor:
    """Anti-aliased straight-line kernel of the given length (px) and angle (radians), normalized."""
    length = max(1, int(length))
    size = length if length % 2 == 1 else length + 1
    center = size // 2
    kernel = np.zeros((size, size), dtype=np.float64)
    half = (length - 1) / 2.0
    steps = max(2, oversample * length)
    for t in np.linspace(-half, half, steps):
        x = center + t * math.cos(angle)
        y = center - t * math.sin(angle)
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                yy, xx = y0 + dy, x0 + dx
                if 0 <= yy < size and 0 <= xx < size:
                    kernel[yy, xx] += wy * wx
    kernel /= kernel.sum()
    return torch.from_numpy(kernel)


def delta_kernel(size: int = 1, dtype=torch.float64) -> torch.Tensor:
    kernel = torch.zeros(size, size, dtype=dtype)
    kernel[size // 2, size // 2] = 1.0
    return kernel


def sample_motion_kernel(level: str, rng: np.random.Generator) -> torch.Tensor:
    low, high = BLUR_LENGTH_RANGES[level]
    length = int(rng.integers(low, high + 1))
    angle = float(rng.uniform(0.0, math.pi))
    return motion_kernel(length, angle)


class MotionBlurModel(DegradationModel):
    """Motion blur, I = k * J."""

    kind = "motion_blur"

    def _perform_validation(self, params: DegradationParameters) -> None:
        check_kernel(params.blur_kernel)

    def _perform_degradation(self, image: torch.Tensor, params: DegradationParameters) -> torch.Tensor:
        if is_identity_kernel(params.blur_kernel):
            return image
        return convolve(image, params.blur_kernel)

    def _perform_sampling(self, level: str, rng: np.random.Generator, size: Tuple[int, int]) -> DegradationParameters:
        return DegradationParameters(kind=self.kind, blur_kernel=sample_motion_kernel(level, rng))


def degrade_blur(image: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    check_kernel(kernel)
    if is_identity_kernel(kernel):
        return image
    return convolve(image, kernel).clamp(0.0, 1.0)
