# -*- coding: utf-8 -*-
"""
Pixel-level primitives shared by the rest of the package.

Images are float torch tensors in [0, 1], channel-first: (3, H, W) for a single image and
(B, 3, H, W) for a batch. Every operator accepts both layouts and returns the same layout.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from modules.constants import (
    FRAME_GLOB,
    FRAME_PATTERN,
    LUMA_WEIGHTS,
    MIN_IMAGE_SIDE,
    PIXEL_MAX,
    VIDEO_SIDECAR,
)
from modules.utils import read_key_values, write_key_values

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Raised when tensor dimensions violate an operator's contract."""


def _as_batch(image: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    if image.dim() == 3:
        return image.unsqueeze(0), True
    if image.dim() == 4:
        return image, False
    raise ShapeError(f"Expected (3, H, W) or (B, 3, H, W) tensor, got shape {tuple(image.shape)}")


def _restore(batch: torch.Tensor, squeezed: bool) -> torch.Tensor:
    return batch.squeeze(0) if squeezed else batch


def image_size(image: torch.Tensor) -> Tuple[int, int]:
    return int(image.shape[-2]), int(image.shape[-1])


def validate_image(image: torch.Tensor) -> torch.Tensor:
    """Check the stored-image invariants and return the image unchanged."""
    batch, _ = _as_batch(image)
    if batch.shape[1] != 3:
        raise ShapeError(f"Expected 3 channels, got {batch.shape[1]}")
    height, width = image_size(batch)
    if height < MIN_IMAGE_SIDE or width < MIN_IMAGE_SIDE:
        raise ShapeError(f"Image {height}x{width} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
    if not torch.isfinite(batch).all():
        raise ValueError("Image contains non-finite values")
    if batch.min() < 0 or batch.max() > 1:
        raise ValueError("Image values must lie within [0, 1]")
    return image


def crop_patches(image: torch.Tensor, size: int, stride: int) -> List[torch.Tensor]:
    """Return every full size x size patch in row-major order."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    height, width = image_size(image)
    if size > min(height, width):
        raise ShapeError("patch exceeds image")
    patches = []
    for top in range(0, height - size + 1, stride):
        for left in range(0, width - size + 1, stride):
            patches.append(image[..., top:top + size, left:left + size])
    return patches


def crop(image: torch.Tensor, top: int, left: int, size: int) -> torch.Tensor:
    height, width = image_size(image)
    if top < 0 or left < 0 or top + size > height or left + size > width:
        raise ShapeError("patch exceeds image")
    return image[..., top:top + size, left:left + size]


def resize_bicubic(image: torch.Tensor, scale: Optional[float] = None, size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
    """Bicubic resampling with antialiasing on the downscale path; output clamped to [0, 1]."""
    batch, squeezed = _as_batch(image)
    height, width = image_size(batch)
    if size is None:
        if scale is None or scale <= 0:
            raise ValueError("scale must be positive")
        size = (int(round(height * scale)), int(round(width * scale)))
    if min(size) < MIN_IMAGE_SIDE:
        raise ShapeError(f"Output {size[0]}x{size[1]} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
    if tuple(size) == (height, width):
        return image
    downscaling = size[0] < height or size[1] < width
    out = F.interpolate(batch, size=tuple(size), mode="bicubic", align_corners=False, antialias=downscaling)
    return _restore(out.clamp(0.0, 1.0), squeezed)


def gaussian_kernel1d(sigma: float, dtype=torch.float32, device=None) -> torch.Tensor:
    """Normalized gaussian taps truncated at radius ceil(3 sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = max(1, math.ceil(3 * sigma))
    taps = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    kernel = torch.exp(-0.5 * (taps / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(image: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable per-channel gaussian blur with reflective padding."""
    batch, squeezed = _as_batch(image)
    channels = batch.shape[1]
    kernel = gaussian_kernel1d(sigma, dtype=batch.dtype, device=batch.device)
    radius = kernel.numel() // 2
    height, width = image_size(batch)
    if radius >= min(height, width):
        raise ShapeError(f"Blur radius {radius} too large for {height}x{width} image")
    horizontal = kernel.view(1, 1, 1, -1).repeat(channels, 1, 1, 1)
    vertical = kernel.view(1, 1, -1, 1).repeat(channels, 1, 1, 1)
    out = F.pad(batch, (radius, radius, 0, 0), mode="reflect")
    out = F.conv2d(out, horizontal, groups=channels)
    out = F.pad(out, (0, 0, radius, radius), mode="reflect")
    out = F.conv2d(out, vertical, groups=channels)
    return _restore(out, squeezed)


def highpass(image: torch.Tensor, sigma: float = 1.0) -> torch.Tensor:
    """Residual image minus its gaussian blur; values in [-1, 1]."""
    return image - gaussian_blur(image, sigma)


def to_grayscale(image: torch.Tensor) -> torch.Tensor:
    """Luminance with 0.299/0.587/0.114 weights, keeping a singleton channel axis."""
    weights = torch.tensor(LUMA_WEIGHTS, dtype=image.dtype, device=image.device).view(3, 1, 1)
    return (image * weights).sum(dim=-3, keepdim=True)


def load_image(path: Path, dtype=torch.float32) -> torch.Tensor:
    with Image.open(path) as img:
        array = np.asarray(img.convert("RGB"), dtype=np.float64) / PIXEL_MAX
    return torch.from_numpy(array).permute(2, 0, 1).to(dtype).contiguous()


def save_image(image: torch.Tensor, path: Path) -> None:
    validate_image(image)
    array = (image.detach().cpu().double().clamp(0, 1) * PIXEL_MAX).round().byte().permute(1, 2, 0).numpy()
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)


@dataclass
class VideoSequence:
    """Ordered frames with identical dimensions; frame i has index i."""
    frames: List[torch.Tensor] = field(default_factory=list)
    frame_rate: float = 30.0

    def __post_init__(self):
        if self.frames:
            first = tuple(self.frames[0].shape)
            for index, frame in enumerate(self.frames):
                if tuple(frame.shape) != first:
                    raise ShapeError(f"Frame {index} has shape {tuple(frame.shape)}, expected {first}")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def window(self, start: int, length: int) -> "VideoSequence":
        return VideoSequence(frames=self.frames[start:start + length], frame_rate=self.frame_rate)


def list_frame_paths(directory: Path) -> List[Path]:
    return sorted(Path(directory).glob(FRAME_GLOB))


def read_frame_rate(directory: Path) -> float:
    sidecar = Path(directory) / VIDEO_SIDECAR
    if not sidecar.exists():
        logger.warning(f"No {VIDEO_SIDECAR} in {directory}. Assuming 30 fps.")
        return 30.0
    return float(read_key_values(sidecar).get("frame_rate", 30.0))


def load_video(directory: Path) -> VideoSequence:
    paths = list_frame_paths(directory)
    if not paths:
        raise FileNotFoundError(f"No frames matching {FRAME_GLOB} in {directory}")
    return VideoSequence(frames=[load_image(p) for p in paths], frame_rate=read_frame_rate(directory))


def save_video(sequence: VideoSequence, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, frame in enumerate(sequence.frames):
        save_image(frame, directory / FRAME_PATTERN.format(index))
    write_key_values(directory / VIDEO_SIDECAR, {"frame_rate": float(sequence.frame_rate)})


def iter_video_frames(directory: Path, prefetch: int = 2) -> Iterator[torch.Tensor]:
    """Yield frames strictly in order while decoding up to `prefetch` frames ahead."""
    paths: Sequence[Path] = list_frame_paths(directory)
    if not paths:
        raise FileNotFoundError(f"No frames matching {FRAME_GLOB} in {directory}")
    if prefetch <= 0:
        for path in paths:
            yield load_image(path)
        return
    with ThreadPoolExecutor(max_workers=prefetch) as pool:
        pending = [pool.submit(load_image, p) for p in paths[:prefetch]]
        next_path = prefetch
        while pending:
            frame = pending.pop(0).result()
            if next_path < len(paths):
                pending.append(pool.submit(load_image, paths[next_path]))
                next_path += 1
            yield frame
