# -*- coding: utf-8 -*-
"""
Predefined degradation models.
This module acts as a factory for the degradation operators used to build training data and as
the reverse generator of the cycle.
"""
import logging
from typing import Dict, Optional, Tuple

import torch

from modules.constants import DEGRADATION_KINDS, LEVELS
from .base import DegradationModel, DegradationParameterError, DegradationParameters
from .blur import MotionBlurModel, degrade_blur, delta_kernel, motion_kernel
from .lowlight import LowLightModel, degrade_lowlight
from .noise import NoiseModel, degrade_noise
from .ses import SESCompositeModel, degrade_ses
from .smoke import SmokeModel, degrade_smoke

logger = logging.getLogger(__name__)

_MODELS: Dict[str, DegradationModel] = {
    model.kind: model
    for model in (NoiseModel(), MotionBlurModel(), LowLightModel(), SmokeModel(), SESCompositeModel())
}

__all__ = [
    "DegradationModel",
    "DegradationParameterError",
    "DegradationParameters",
    "degrade_blur",
    "degrade_lowlight",
    "degrade_noise",
    "degrade_ses",
    "degrade_smoke",
    "delta_kernel",
    "get_degradation",
    "identity_parameters",
    "motion_kernel",
    "sample_parameters",
    "synthesize",
]


def get_degradation(kind: str) -> DegradationModel:
    """
    Factory function to get a degradation model by kind.
    """
    model = _MODELS.get(kind)
    if model is None:
        raise DegradationParameterError("kind", f"unknown degradation kind '{kind}' (expected one of {DEGRADATION_KINDS})")
    return model


def sample_parameters(kind: str, level: str, seed: int, size: Tuple[int, int] = (320, 320),
                      scale: Optional[int] = None) -> DegradationParameters:
    """Draw parameters for `kind` within the ranges of `level`; deterministic given seed."""
    if level not in LEVELS:
        raise DegradationParameterError("level", f"unknown level '{level}' (expected one of {LEVELS})")
    params = get_degradation(kind).sample(level, seed, size)
    if scale is not None:
        params.scale = int(scale)
    return params


def synthesize(image: torch.Tensor, params: DegradationParameters, seed: Optional[int]) -> torch.Tensor:
    return get_degradation(params.kind).synthesize(image, params, seed)


def identity_parameters(kind: str, scale: int = 1) -> DegradationParameters:
    """Parameters under which the deterministic part of `kind` is the identity and no noise is added."""
    get_degradation(kind)
    return DegradationParameters(
        kind=kind,
        noise_std=0.0,
        blur_kernel=delta_kernel(1),
        illumination=1.0,
        transmission=1.0,
        airlight=1.0,
        scale=scale,
    )
