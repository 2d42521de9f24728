# -*- coding: utf-8 -*-
"""
Neural components of the enhancer.
This module acts as a factory that builds every network from the run configuration.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict

import torch.nn as nn

from modules.config import RunConfig
from modules.constants import DEGRADATION_KINDS
from .dam import DegradationAwareModule, DegradationEncoder, DegradationRepresentation, MomentumQueue, encode
from .dgem import DegradationGuidedEnhancer, ModulatedWindowAttention
from .discriminators import DiscriminatorSet, PatchDiscriminator
from .drpm import (
    DegradationPropagator,
    PropagationState,
    PropagationStateError,
    RepresentationSource,
    propagate,
    update_state,
)
from .generator import EnhancementGenerator, enhance
from .heads import KindHead, RegressionHeads

logger = logging.getLogger(__name__)

__all__ = [
    "DegradationAwareModule",
    "DegradationEncoder",
    "DegradationGuidedEnhancer",
    "DegradationPropagator",
    "DegradationRepresentation",
    "DiscriminatorSet",
    "EnhancementGenerator",
    "KindHead",
    "ModelBundle",
    "ModulatedWindowAttention",
    "MomentumQueue",
    "PatchDiscriminator",
    "PropagationState",
    "PropagationStateError",
    "RegressionHeads",
    "RepresentationSource",
    "build_dam",
    "build_dgem",
    "build_drpm",
    "build_models",
    "encode",
    "enhance",
    "propagate",
    "update_state",
]


@dataclass
class ModelBundle:
    """Every trainable component. The generator shares its encoder with the DAM."""
    dam: DegradationAwareModule
    dgem: DegradationGuidedEnhancer
    drpm: DegradationPropagator
    heads: RegressionHeads
    discriminators: DiscriminatorSet
    generator: EnhancementGenerator = field(init=False)

    def __post_init__(self):
        self.generator = EnhancementGenerator(self.dam.encoder, self.dgem)

    def components(self) -> Dict[str, nn.Module]:
        """Checkpointable modules keyed by their checkpoint module_name."""
        return {
            "dam": self.dam,
            "dgem": self.dgem,
            "drpm": self.drpm,
            "heads": self.heads,
            "discriminators": self.discriminators,
        }

    def to(self, device) -> "ModelBundle":
        for module in self.components().values():
            module.to(device)
        return self

    def train(self, mode: bool = True) -> "ModelBundle":
        for module in self.components().values():
            module.train(mode)
        return self

    def eval(self) -> "ModelBundle":
        return self.train(False)


def build_dam(config: RunConfig) -> DegradationAwareModule:
    c = config.dam
    return DegradationAwareModule(c.base_channels, c.res_blocks, c.proj_dim, c.queue_size)


def build_dgem(config: RunConfig) -> DegradationGuidedEnhancer:
    c = config.dgem
    return DegradationGuidedEnhancer(
        rep_channels=config.dam.base_channels * 4,
        embed_dim=c.embed_dim,
        num_heads=c.num_heads,
        window_size=c.window_size,
        num_blocks=c.num_blocks,
        mlp_ratio=c.mlp_ratio,
        compress_hidden=c.compress_hidden,
        shallow_hidden=c.shallow_hidden,
        recon_channels=c.recon_channels,
        recon_depth=c.recon_depth,
        scale=config.data.scale,
        bicubic_skip=c.bicubic_skip,
    )


def build_drpm(config: RunConfig) -> DegradationPropagator:
    c = config.drpm
    return DegradationPropagator(config.dgem.embed_dim, c.model_dim, c.context, c.num_layers, c.num_heads, c.ff_dim)


def build_models(config: RunConfig) -> ModelBundle:
    """Build every component in a fixed order so a seeded run initialises identically."""
    c = config.cycle
    return ModelBundle(
        dam=build_dam(config),
        dgem=build_dgem(config),
        drpm=build_drpm(config),
        heads=RegressionHeads(DEGRADATION_KINDS, config.dgem.embed_dim, c.head_hidden, c.head_grid, c.head_kernel,
                              config.data.scale, default_kind=c.pdm_kind),
        discriminators=DiscriminatorSet(c.disc_channels, c.disc_layers),
    )
