# -*- coding: utf-8 -*-
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from modules.constants import FIELD_FLOOR, FIELD_SMOOTHING_SIGMA, FIELD_VARIATION
from modules.imaging import ShapeError, image_size, resize_bicubic

logger = logging.getLogger(__name__)

Scalar = Union[float, torch.Tensor]


class DegradationParameterError(ValueError):
    """Raised when a degradation parameter violates its invariant."""

    def __init__(self, component: str, message: str):
        super().__init__(f"{component}: {message}")
        self.component = component


@dataclass
class DegradationParameters:
    """
    Explicit parameters of a predefined degradation model.

    Spatial fields are (H, W) for a single image or (B, 1, H, W) for a batch. Per-image
    scalars are floats or tensors of shape (B,). Airlight may also be per-channel: (3,) or (B, 3).
    """
    kind: str
    noise_std: Scalar = 0.0
    blur_kernel: Optional[torch.Tensor] = None
    illumination: Optional[Scalar] = None
    transmission: Optional[Scalar] = None
    airlight: Scalar = 1.0
    alpha: Scalar = 1.0
    beta: Scalar = 1.0
    gamma: Scalar = 1.0
    scale: int = 1
    level: Optional[str] = None
    seed: Optional[int] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> Dict[str, Any]:
        """Key-value payload for the human-readable sidecar."""
        record: Dict[str, Any] = {"kind": self.kind, "scale": int(self.scale)}
        if self.level is not None:
            record["level"] = self.level
        if self.seed is not None:
            record["seed"] = int(self.seed)
        for name in ("noise_std", "illumination", "transmission", "airlight", "alpha", "beta", "gamma"):
            value = getattr(self, name)
            if value is None:
                continue
            if isinstance(value, torch.Tensor) and value.numel() > 1:
                data = value.detach().double()
                record[name] = {"mean": float(data.mean()), "min": float(data.min()), "max": float(data.max())}
            else:
                record[name] = float(value)
        if self.blur_kernel is not None:
            kernel = self.blur_kernel.detach().double()
            record["blur_kernel"] = [[round(float(v), 8) for v in row] for row in kernel.reshape(-1, kernel.shape[-1])]
        record.update(self.extra)
        return record


def _check(condition: bool, component: str, message: str) -> None:
    if not condition:
        raise DegradationParameterError(component, message)


def _values(value: Scalar) -> torch.Tensor:
    return value.detach() if isinstance(value, torch.Tensor) else torch.tensor(float(value))


def check_noise_std(value: Scalar) -> None:
    data = _values(value)
    _check(bool(torch.isfinite(data).all()), "noise", "std must be finite")
    _check(bool((data >= 0).all() and (data <= 0.5).all()), "noise", "std must lie in [0, 0.5]")


def check_kernel(kernel: Optional[torch.Tensor]) -> None:
    _check(kernel is not None, "blur_kernel", "kernel is required")
    data = kernel.detach()
    _check(data.dim() in (2, 3), "blur_kernel", f"expected (k, k) or (B, k, k), got {tuple(data.shape)}")
    size = data.shape[-1]
    _check(data.shape[-2] == size and size % 2 == 1, "blur_kernel", "kernel must be square and odd-sized")
    _check(bool((data >= 0).all()), "blur_kernel", "entries must be >= 0")
    sums = data.reshape(-1, size * size).double().sum(dim=1)
    _check(bool(((sums - 1.0).abs() <= 1e-6).all()), "blur_kernel", "kernel must sum to 1")


def check_unit_field(value: Optional[Scalar], component: str) -> None:
    _check(value is not None, component, "field is required")
    data = _values(value)
    _check(bool(torch.isfinite(data).all()), component, "values must be finite")
    _check(bool((data > 0).all() and (data <= 1).all()), component, "values must lie in (0, 1]")


def check_airlight(value: Scalar) -> None:
    data = _values(value)
    _check(bool((data >= 0).all() and (data <= 1).all()), "airlight", "values must lie in [0, 1]")


def check_positive(value: Scalar, component: str) -> None:
    data = _values(value)
    _check(bool(torch.isfinite(data).all() and (data > 0).all()), component, "must be > 0")


def as_map(value: Scalar, like: torch.Tensor) -> Scalar:
    """Broadcast a field to (B, 1, H, W) against a batched image."""
    if not isinstance(value, torch.Tensor) or value.dim() == 0:
        return value
    if value.dim() == 2:
        value = value.view(1, 1, *value.shape)
    if value.dim() != 4:
        raise ShapeError(f"Field must be (H, W) or (B, 1, H, W), got {tuple(value.shape)}")
    if value.shape[-2:] != like.shape[-2:]:
        value = F.interpolate(value, size=like.shape[-2:], mode="bilinear", align_corners=False)
    return value.to(dtype=like.dtype, device=like.device)


def as_scalar(value: Scalar, like: torch.Tensor) -> Scalar:
    """Broadcast a per-image scalar to (B, 1, 1, 1)."""
    if not isinstance(value, torch.Tensor) or value.dim() == 0:
        return value
    return value.reshape(-1, 1, 1, 1).to(dtype=like.dtype, device=like.device)


def as_airlight(value: Scalar, like: torch.Tensor) -> Scalar:
    if not isinstance(value, torch.Tensor) or value.dim() == 0:
        return value
    if value.dim() == 1:
        return value.view(1, -1, 1, 1).to(dtype=like.dtype, device=like.device)
    return value.view(value.shape[0], -1, 1, 1).to(dtype=like.dtype, device=like.device)


def batched(image: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    if image.dim() == 3:
        return image.unsqueeze(0), True
    return image, False


def is_identity_kernel(kernel: torch.Tensor) -> bool:
    if kernel.requires_grad:
        return False
    size = kernel.shape[-1]
    center = kernel[..., size // 2, size // 2]
    return bool((center == 1).all()) and int(torch.count_nonzero(kernel)) == center.numel()


def convolve(image: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Per-channel true convolution with reflective padding; kernel (k, k) or (B, k, k)."""
    batch, squeezed = batched(image)
    b, c, h, w = batch.shape
    size = kernel.shape[-1]
    pad = size // 2
    if pad >= min(h, w):
        raise ShapeError(f"Kernel of size {size} too large for {h}x{w} image")
    kernel = torch.flip(kernel.to(dtype=batch.dtype, device=batch.device), dims=(-2, -1))
    padded = F.pad(batch, (pad, pad, pad, pad), mode="reflect")
    if kernel.dim() == 2:
        weight = kernel.expand(c, 1, size, size)
        out = F.conv2d(padded, weight, groups=c)
    else:
        if kernel.shape[0] != b:
            raise ShapeError(f"Got {kernel.shape[0]} kernels for a batch of {b}")
        weight = kernel.repeat_interleave(c, dim=0).unsqueeze(1)
        out = F.conv2d(padded.reshape(1, b * c, *padded.shape[-2:]), weight, groups=b * c).reshape(b, c, h, w)
    return out.squeeze(0) if squeezed else out


def noise_generator(seed: Optional[int]) -> torch.Generator:
    generator = torch.Generator(device="cpu")
    generator.manual_seed(0 if seed is None else int(seed))
    return generator


def add_noise(image: torch.Tensor, std: Scalar, seed: Optional[int]) -> torch.Tensor:
    """Add zero-mean gaussian noise with a (possibly spatial) std; no clamping here."""
    if not isinstance(std, torch.Tensor) and float(std) == 0.0:
        return image
    noise = torch.randn(image.shape, generator=noise_generator(seed), dtype=image.dtype)
    noise = noise.to(image.device)
    if isinstance(std, torch.Tensor) and std.dim() >= 2:
        batch, squeezed = batched(image)
        spread = as_map(std, batch)
        out = batch + noise.reshape(batch.shape) * spread
        return out.squeeze(0) if squeezed else out
    if isinstance(std, torch.Tensor) and std.dim() == 1:
        batch, squeezed = batched(image)
        out = batch + noise.reshape(batch.shape) * as_scalar(std, batch)
        return out.squeeze(0) if squeezed else out
    return image + noise * std


def smooth_field(rng: np.random.Generator, size: Tuple[int, int], mean: float) -> torch.Tensor:
    """Seeded smooth random field around `mean`, kept inside (0, 1]."""
    from scipy.ndimage import gaussian_filter

    sigma = max(2.0, FIELD_SMOOTHING_SIGMA * min(size) / 320.0)
    white = rng.standard_normal(size)
    smooth = gaussian_filter(white, sigma=sigma, mode="reflect")
    peak = np.abs(smooth).max()
    if peak > 0:
        smooth = smooth / peak
    values = np.clip(mean * (1.0 + FIELD_VARIATION * smooth), FIELD_FLOOR, 1.0)
    return torch.from_numpy(values.astype(np.float32))


class DegradationModel(ABC):
    """A predefined degradation model: deterministic forward operator followed by resampling and noise."""

    kind: str = ""

    @abstractmethod
    def _perform_validation(self, params: DegradationParameters) -> None:
        """Raise DegradationParameterError naming the first invalid component."""
        pass

    @abstractmethod
    def _perform_degradation(self, image: torch.Tensor, params: DegradationParameters) -> torch.Tensor:
        """Deterministic part of the operator at input resolution."""
        pass

    @abstractmethod
    def _perform_sampling(self, level: str, rng: np.random.Generator,
                          size: Tuple[int, int]) -> DegradationParameters:
        pass

    def validate(self, params: DegradationParameters) -> None:
        if params.kind != self.kind:
            raise DegradationParameterError("kind", f"expected '{self.kind}', got '{params.kind}'")
        _check(int(params.scale) >= 1, "scale", "must be an integer >= 1")
        check_noise_std(params.noise_std)
        self._perform_validation(params)

    def sample(self, level: str, seed: int, size: Tuple[int, int]) -> DegradationParameters:
        params = self._perform_sampling(level, np.random.default_rng(seed), size)
        params.level = level
        params.seed = seed
        return params

    def synthesize(self, image: torch.Tensor, params: DegradationParameters, seed: Optional[int]) -> torch.Tensor:
        """Full pipeline: operator, bicubic downscale by params.scale, additive noise, clamp."""
        self.validate(params)
        out = self._perform_degradation(image, params)
        scale = int(params.scale)
        if scale > 1:
            height, width = image_size(out)
            if height % scale or width % scale:
                raise ShapeError(f"Image {height}x{width} is not divisible by scale {scale}")
            out = resize_bicubic(out, size=(height // scale, width // scale))
        out = add_noise(out, params.noise_std, seed)
        return out.clamp(0.0, 1.0)
