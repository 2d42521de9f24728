# -*- coding: utf-8 -*-
"""
Image quality metrics.

PSNR and SSIM compare against a reference. NIQE measures the distance of an image's natural
scene statistics from a pristine model; PIQE, computed by pyiqa, scores block-level distortion without any model.
NIQE scores depend on the pristine model in use and are only comparable between runs that use
the same model file.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.ndimage
import scipy.special
import torch
import torch.nn.functional as F
from PIL import Image

from modules.constants import (
    IMAGE_SUFFIXES,
    NIQE_MODEL_VERSION,
    NIQE_PATCH_SIZE,
    NIQE_PRISTINE_IMAGES,
    NIQE_PRISTINE_SIZE,
    PIQE_BLOCK_SIZE,
    PIXEL_MAX,
    SSIM_C1,
    SSIM_C2,
    SSIM_SIGMA,
    SSIM_WINDOW,
)
from modules.imaging import gaussian_kernel1d, load_image, to_grayscale

logger = logging.getLogger(__name__)

GAMMA_RANGE = np.arange(0.2, 10, 0.001)
_a = scipy.special.gamma(2.0 / GAMMA_RANGE)
PREC_GAMMAS = _a * _a / (scipy.special.gamma(1.0 / GAMMA_RANGE) * scipy.special.gamma(3.0 / GAMMA_RANGE))


class MetricError(ValueError):
    """Raised on mismatched dimensions, out-of-range inputs or images too small for a metric."""


def _check_pair(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise MetricError(f"Image shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() not in (3, 4) or x.shape[-3] != 3:
        raise MetricError(f"Expected (3, H, W) or (B, 3, H, W) images, got {tuple(x.shape)}")


def psnr(x: torch.Tensor, y: torch.Tensor) -> float:
    """10 * log10(1 / MSE) over all channels; +inf when the images are identical."""
    _check_pair(x, y)
    mse = float(torch.mean((x.double() - y.double()) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(x: torch.Tensor, y: torch.Tensor) -> float:
    """Mean local SSIM on luminance with an 11x11 gaussian window (sigma 1.5), valid region only."""
    _check_pair(x, y)
    gx = to_grayscale(x.double())
    gy = to_grayscale(y.double())
    if gx.dim() == 3:
        gx, gy = gx.unsqueeze(0), gy.unsqueeze(0)
    if min(gx.shape[-2:]) < SSIM_WINDOW:
        raise MetricError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    taps = gaussian_kernel1d(SSIM_SIGMA, dtype=torch.float64)
    if taps.numel() != SSIM_WINDOW:
        raise MetricError(f"SSIM window mismatch: {taps.numel()} taps")
    window = (taps.view(-1, 1) * taps.view(1, -1)).view(1, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, window)

    mu_x, mu_y = filt(gx), filt(gy)
    var_x = filt(gx * gx) - mu_x ** 2
    var_y = filt(gy * gy) - mu_y ** 2
    cov = filt(gx * gy) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float((num / den).mean())


def _gray255(image: torch.Tensor) -> np.ndarray:
    if image.dim() != 3 or image.shape[0] != 3:
        raise MetricError(f"Expected a (3, H, W) image, got {tuple(image.shape)}")
    return to_grayscale(image.detach().cpu().double()).squeeze(0).numpy() * PIXEL_MAX


def _gauss_window(lw: int = 3, sigma: float = 7.0 / 6.0) -> np.ndarray:
    taps = np.exp(-0.5 * np.arange(-lw, lw + 1) ** 2 / sigma ** 2)
    return taps / taps.sum()


def mscn(image: np.ndarray, c: float = 1.0) -> np.ndarray:
    """Mean-subtracted contrast-normalised coefficients of a 0..255 grayscale image."""
    window = _gauss_window()
    mu = scipy.ndimage.correlate1d(image, window, 0, mode="nearest")
    mu = scipy.ndimage.correlate1d(mu, window, 1, mode="nearest")
    var = scipy.ndimage.correlate1d(image ** 2, window, 0, mode="nearest")
    var = scipy.ndimage.correlate1d(var, window, 1, mode="nearest")
    sigma = np.sqrt(np.abs(var - mu ** 2))
    return (image - mu) / (sigma + c)


def aggd_features(values: np.ndarray) -> Tuple[float, float, float, float]:
    """Asymmetric generalised gaussian fit: (shape, mean, left scale, right scale)."""
    values = values.ravel()
    squared = values * values
    left, right = squared[values < 0], squared[values >= 0]
    left_sqrt = np.sqrt(left.mean()) if left.size else 0.0
    right_sqrt = np.sqrt(right.mean()) if right.size else 0.0
    gamma_hat = left_sqrt / right_sqrt if right_sqrt != 0 else np.inf
    mean_sq = squared.mean()
    r_hat = np.mean(np.abs(values)) ** 2 / mean_sq if mean_sq != 0 else np.inf
    rhat_norm = r_hat * ((gamma_hat ** 3 + 1) * (gamma_hat + 1)) / (gamma_hat ** 2 + 1) ** 2
    alpha = GAMMA_RANGE[np.argmin((PREC_GAMMAS - rhat_norm) ** 2)]
    gam1, gam2, gam3 = (scipy.special.gamma(k / alpha) for k in (1.0, 2.0, 3.0))
    ratio = np.sqrt(gam1) / np.sqrt(gam3)
    bl, br = ratio * left_sqrt, ratio * right_sqrt
    return float(alpha), float((br - bl) * (gam2 / gam1)), float(bl), float(br)


def _paired_products(coefs: np.ndarray) -> Tuple[np.ndarray, ...]:
    return (
        np.roll(coefs, 1, axis=1) * coefs,
        np.roll(coefs, 1, axis=0) * coefs,
        np.roll(np.roll(coefs, 1, axis=0), 1, axis=1) * coefs,
        np.roll(np.roll(coefs, 1, axis=0), -1, axis=1) * coefs,
    )


def _patch_features(coefs: np.ndarray) -> np.ndarray:
    alpha, _, bl, br = aggd_features(coefs)
    features = [alpha, (bl + br) / 2.0]
    for product in _paired_products(coefs):
        features.extend(aggd_features(product))
    return np.array(features)


def _on_patches(coefs: np.ndarray, size: int) -> np.ndarray:
    height, width = coefs.shape
    return np.array([_patch_features(coefs[top:top + size, left:left + size])
                     for top in range(0, height - size + 1, size)
                     for left in range(0, width - size + 1, size)])


def _half_size(image: np.ndarray) -> np.ndarray:
    height, width = image.shape
    resized = Image.fromarray(image.astype(np.float32)).resize((width // 2, height // 2), Image.BICUBIC)
    return np.asarray(resized, dtype=np.float64)


def niqe_features(gray: np.ndarray, patch_size: int = NIQE_PATCH_SIZE) -> np.ndarray:
    """(patches, 36) features: 18 at full scale and 18 at half scale."""
    if min(gray.shape) < patch_size:
        raise MetricError(f"NIQE needs images of at least {patch_size}x{patch_size}, got {gray.shape}")
    full = _on_patches(mscn(gray), patch_size)
    half = _on_patches(mscn(_half_size(gray)), patch_size // 2)
    return np.hstack((full, half))


@dataclass(frozen=True)
class NiqeModel:
    mu: np.ndarray
    cov: np.ndarray
    version: int = NIQE_MODEL_VERSION


def _pristine_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """A 1/f-spectrum texture on 0..255, statistically close to natural scenes."""
    spectrum = np.fft.fft2(rng.standard_normal((size, size)))
    fy = np.fft.fftfreq(size).reshape(-1, 1)
    fx = np.fft.fftfreq(size).reshape(1, -1)
    radius = np.sqrt(fx ** 2 + fy ** 2)
    radius[0, 0] = 1.0
    field_ = np.real(np.fft.ifft2(spectrum / radius))
    field_ = (field_ - field_.min()) / (field_.max() - field_.min() + 1e-12)
    return field_ * PIXEL_MAX


def fit_niqe_model(images: Optional[Sequence[np.ndarray]] = None, seed: int = 0) -> NiqeModel:
    """Fit mean and covariance of patch features over 0..255 grayscale pristine images."""
    if images is None:
        rng = np.random.default_rng(seed)
        images = [_pristine_image(rng, NIQE_PRISTINE_SIZE) for _ in range(NIQE_PRISTINE_IMAGES)]
    features = np.vstack([niqe_features(image) for image in images])
    return NiqeModel(mu=features.mean(axis=0), cov=np.cov(features.T))


def save_niqe_model(model: NiqeModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, mu=model.mu, cov=model.cov, version=np.array(model.version))
    return path


def load_niqe_model(path: Path) -> NiqeModel:
    """Load the pristine model; fit and cache it when the file is missing or from another version."""
    path = Path(path)
    if path.exists():
        with np.load(path) as data:
            version = int(data["version"])
            if version == NIQE_MODEL_VERSION:
                return NiqeModel(mu=data["mu"], cov=data["cov"], version=version)
        logger.warning(f"NIQE model {path} has version {version}, expected {NIQE_MODEL_VERSION}. Refitting.")
    else:
        logger.info(f"No NIQE pristine model at {path}. Fitting one from the procedural pristine set.")
    model = fit_niqe_model()
    save_niqe_model(model, path)
    return model


def niqe(image: torch.Tensor, model: NiqeModel) -> float:
    """Mahalanobis-like distance between the image's feature distribution and the pristine model."""
    features = niqe_features(_gray255(image))
    sample_mu = features.mean(axis=0)
    sample_cov = np.cov(features.T) if features.shape[0] > 1 else np.zeros_like(model.cov)
    diff = sample_mu - model.mu
    pinv = scipy.linalg.pinv((model.cov + sample_cov) / 2.0)
    return float(np.sqrt(diff @ pinv @ diff))


@lru_cache(maxsize=1)
def _piqe_metric():
    import pyiqa

    return pyiqa.create_metric("piqe", device=torch.device("cpu"), as_loss=False)


def piqe(image: torch.Tensor) -> float:
    """
    Block-based distortion score in [0, 100]; lower is better.

    Scored by pyiqa on the luminance of a single (3, H, W) image.
    """
    if image.dim() != 3 or image.shape[0] != 3:
        raise MetricError(f"PIQE expects a (3, H, W) image, got shape {tuple(image.shape)}")
    height, width = int(image.shape[-2]), int(image.shape[-1])
    size = PIQE_BLOCK_SIZE
    if min(height, width) < size:
        raise MetricError(f"PIQE needs images of at least {size}x{size}, got {height}x{width}")
    batch = image.detach().cpu().float().clamp(0.0, 1.0).unsqueeze(0)
    with torch.no_grad():
        score = _piqe_metric()(batch)
    return float(score.flatten()[0])


@dataclass
class MetricReport:
    """Per-image scores and their means. Missing metrics are stored as None."""
    rows: List[Dict[str, object]] = field(default_factory=list)
    params: Optional[int] = None
    gflops: Optional[float] = None
    runtime_ms: Optional[float] = None

    METRICS = ("psnr", "ssim", "niqe", "piqe")

    def add(self, name: str, **scores: Optional[float]) -> None:
        row: Dict[str, object] = {"image": name}
        row.update({metric: scores.get(metric) for metric in self.METRICS})
        self.rows.append(row)

    def aggregate(self) -> Dict[str, Optional[float]]:
        result: Dict[str, Optional[float]] = {}
        for metric in self.METRICS:
            values = [row[metric] for row in self.rows if row[metric] is not None]
            result[metric] = float(np.mean(values)) if values else None
        return result

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=["image", *self.METRICS])
            writer.writeheader()
            writer.writerows(self.rows)
            writer.writerow({"image": "mean", **self.aggregate()})
        return path

    def summary(self) -> List[str]:
        lines = [f"Images: {len(self.rows)}"]
        for metric, value in self.aggregate().items():
            lines.append(f"{metric.upper():<6}: {'n/a' if value is None else f'{value:.4f}'}")
        if self.params is not None:
            lines.append(f"Params: {self.params / 1e6:.4f} M")
        if self.gflops is not None:
            lines.append(f"FLOPs : {self.gflops:.4f} G")
        if self.runtime_ms is not None:
            lines.append(f"Time  : {self.runtime_ms:.2f} ms/image")
        return lines


def _images(directory: Path) -> Dict[str, Path]:
    return {p.name: p for p in sorted(Path(directory).iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def evaluate_directory(output_dir: Path, reference_dir: Optional[Path] = None,
                       niqe_model: Optional[NiqeModel] = None) -> MetricReport:
    """Score every image in output_dir; full-reference metrics use equally named files in reference_dir."""
    outputs = _images(output_dir)
    if not outputs:
        raise MetricError(f"No images found in {output_dir}")
    references = _images(reference_dir) if reference_dir is not None else {}
    report = MetricReport()
    for name, path in outputs.items():
        image = load_image(path, dtype=torch.float64)
        scores: Dict[str, Optional[float]] = {"piqe": piqe(image)}
        if niqe_model is not None:
            scores["niqe"] = niqe(image, niqe_model)
        if name in references:
            reference = load_image(references[name], dtype=torch.float64)
            scores["psnr"] = psnr(image, reference)
            scores["ssim"] = ssim(image, reference)
        elif reference_dir is not None:
            logger.warning(f"No reference for {name} in {reference_dir}")
        report.add(name, **scores)
    return report
