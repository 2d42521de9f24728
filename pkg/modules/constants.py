# -*- coding: utf-8 -*-
"""
Centralized constants for the DG Video Enhancer.
"""
from pathlib import Path

# File Paths
ROOT_DIR = Path(__file__).resolve().parent.parent
VERSION_FILE = ROOT_DIR / "VERSION"
DEFAULT_CONFIG_FILE = Path("config/config.yml")

# Environment overrides
ENV_PREFIX = "DGVE_"

# Image conventions
MIN_IMAGE_SIDE = 8
PIXEL_MAX = 255.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
FRAME_PATTERN = "frame_{:06d}.png"
FRAME_GLOB = "frame_*.png"
VIDEO_SIDECAR = "video.yml"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

# Degradation kinds and severity levels
DEGRADATION_KINDS = ("noise", "motion_blur", "low_light", "smoke", "ses_composite")
SINGLE_KINDS = ("noise", "motion_blur", "low_light", "smoke")
LEVELS = ("L1", "L2", "L3", "L4")

# Per-level parameter ranges. Each level sits above the previous one in severity.
NOISE_STD_RANGES = {"L1": (0.02, 0.05), "L2": (0.05, 0.10), "L3": (0.10, 0.20), "L4": (0.20, 0.35)}
BLUR_LENGTH_RANGES = {"L1": (3, 5), "L2": (5, 9), "L3": (9, 15), "L4": (15, 25)}
LOWLIGHT_MEAN_RANGES = {"L1": (0.6, 0.8), "L2": (0.4, 0.6), "L3": (0.25, 0.4), "L4": (0.1, 0.25)}
LOWLIGHT_NOISE_RANGES = {"L1": (0.0, 0.01), "L2": (0.01, 0.02), "L3": (0.02, 0.03), "L4": (0.03, 0.05)}
SMOKE_MEAN_RANGES = {"L1": (0.75, 0.9), "L2": (0.6, 0.75), "L3": (0.4, 0.6), "L4": (0.2, 0.4)}
SES_GAMMA_RANGES = {"L1": (1.0, 1.2), "L2": (1.2, 1.5), "L3": (1.5, 1.8), "L4": (1.8, 2.2)}
AIRLIGHT_RANGE = (0.7, 1.0)
SES_ALPHA_RANGE = (0.9, 1.1)
FIELD_SMOOTHING_SIGMA = 16.0
FIELD_VARIATION = 0.3
DEFAULT_SCALE = 2

# Numeric guards
DISCRIMINATOR_EPS = 1e-6
FIELD_FLOOR = 1e-3
GAMMA_FLOOR = 1e-8

# Checkpoint container
CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_SUFFIX = ".pt"

# Quality metrics
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
NIQE_PATCH_SIZE = 96
NIQE_MODEL_VERSION = 1
NIQE_PRISTINE_IMAGES = 24
NIQE_PRISTINE_SIZE = 384
PIQE_BLOCK_SIZE = 16

# Logging Configuration
FRAME_WIDTH = 100

# Training stages, mixed into derived seeds
STAGE_DAM = 1
STAGE_SINGLE = 2
STAGE_VIDEO = 3
