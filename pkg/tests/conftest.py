from pathlib import Path
from typing import Callable

import numpy as np
import pytest
import torch

from modules.config import RunConfig
from modules.datasets import CorpusManifest, build_manifest
from modules.imaging import VideoSequence, save_image, save_video
from modules.networks import ModelBundle, build_models


def textured_image(size: int, seed: int, shift: int = 0) -> torch.Tensor:
    """Smooth random texture in [0.05, 0.95]; shift translates it horizontally."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    xx = xx + shift
    channels = []
    for _ in range(3):
        value = rng.uniform(0.3, 0.7) + 0.1 * (yy / size)
        for _ in range(4):
            fy, fx = rng.uniform(0.02, 0.25, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            value = value + rng.uniform(0.03, 0.1) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        channels.append(value)
    return torch.from_numpy(np.clip(np.stack(channels), 0.05, 0.95)).float()


@pytest.fixture
def make_image() -> Callable[..., torch.Tensor]:
    return textured_image


@pytest.fixture
def corpus_dir(tmp_path) -> Path:
    """16 still images (64 and 128 px) and three 8-frame 32 px clips."""
    root = tmp_path / "corpus"
    for index in range(16):
        size = 64 if index % 2 == 0 else 128
        save_image(textured_image(size, seed=100 + index), root / "images" / f"img_{index:02d}.png")
    for clip in range(3):
        frames = [textured_image(32, seed=500 + clip, shift=t) for t in range(8)]
        save_video(VideoSequence(frames=frames, frame_rate=25.0), root / "clips" / f"clip_{clip}")
    return root


@pytest.fixture
def manifest(corpus_dir) -> CorpusManifest:
    return build_manifest(corpus_dir, seed=0)


@pytest.fixture
def tiny_config(tmp_path) -> RunConfig:
    return RunConfig.model_validate(
        {
            "system": {"seed": 0, "device": "cpu", "out_dir": str(tmp_path / "run"), "prefetch": 0},
            "paths": {"niqe_model": str(tmp_path / "niqe.npz")},
            "data": {
                "patch_size": 32,
                "scale": 2,
                "pairs_per_epoch": 4,
                "clip_length": 6,
                "clips_per_epoch": 1,
                "count": 2,
            },
            "dam": {"base_channels": 8, "res_blocks": 3, "proj_dim": 16, "queue_size": 8, "crop_size": 32},
            "dgem": {
                "embed_dim": 8,
                "num_heads": 2,
                "window_size": 4,
                "num_blocks": 2,
                "compress_hidden": 8,
                "recon_channels": 8,
                "recon_depth": 1,
            },
            "drpm": {"model_dim": 16, "context": 4, "num_layers": 1, "num_heads": 2, "ff_dim": 16},
            "cycle": {"disc_channels": 4, "disc_layers": 2, "head_hidden": 8, "head_grid": 4, "head_kernel": 5},
            "train": {"dam_epochs": 1, "single_epochs": 1, "total_epochs": 3, "batch_size": 2},
            "scheduler": {"delta_t": 3},
            "analysis": {"samples_per_class": 3, "kinds": ["noise", "smoke"], "levels": ["L1", "L4"]},
        }
    )


@pytest.fixture
def tiny_bundle(tiny_config) -> ModelBundle:
    torch.manual_seed(0)
    return build_models(tiny_config)
