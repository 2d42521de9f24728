# -*- coding: utf-8 -*-
"""
Degradation representation analysis: 2-D PCA projections, cluster separation and level ordering.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.stats import spearmanr
from sklearn.decomposition import PCA
from sklearn.metrics import silhouette_score

from modules.config import RunConfig
from modules.degradations import sample_parameters, synthesize
from modules.imaging import crop
from modules.networks.dam import DegradationEncoder
from modules.utils import derive_seed

logger = logging.getLogger(__name__)

Label = Tuple[str, str]


@dataclass
class ProjectionResult:
    """coords is (N, 2); components is (2, D) with orthonormal rows; labels are (kind, level) pairs."""
    coords: np.ndarray
    explained_variance_ratio: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    labels: List[Label]


def pca_project(vectors: np.ndarray, labels: Sequence[Label]) -> ProjectionResult:
    """
    Mean-centre and project onto the top two principal directions.

    Each component is flipped so that its largest-magnitude loading is positive. Zero-variance
    input projects every vector to the origin.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 3:
        raise ValueError(f"PCA needs at least 3 vectors, got shape {vectors.shape}")
    if len(labels) != vectors.shape[0]:
        raise ValueError(f"{len(labels)} labels for {vectors.shape[0]} vectors")
    mean = vectors.mean(axis=0)
    centred = vectors - mean
    dim = vectors.shape[1]
    if not np.any(centred):
        return ProjectionResult(coords=np.zeros((vectors.shape[0], 2)), explained_variance_ratio=np.zeros(2),
                                components=np.eye(2, dim), mean=mean, labels=list(labels))

    n_components = min(2, dim, vectors.shape[0])
    pca = PCA(n_components=n_components, svd_solver="full").fit(vectors)
    components = pca.components_.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    coords = centred @ components.T
    ratio = pca.explained_variance_ratio_
    if n_components < 2:
        coords = np.hstack([coords, np.zeros((coords.shape[0], 2 - n_components))])
        ratio = np.concatenate([ratio, np.zeros(2 - n_components)])
        components = np.vstack([components, np.zeros((2 - n_components, dim))])
    return ProjectionResult(coords=coords, explained_variance_ratio=ratio, components=components, mean=mean,
                            labels=list(labels))


def silhouette(coords: np.ndarray, labels: Sequence[str]) -> float:
    if len(set(labels)) < 2:
        raise ValueError("Silhouette needs at least two distinct labels")
    return float(silhouette_score(np.asarray(coords), list(labels)))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return float(spearmanr(x, y).statistic)


def level_monotonicity(result: ProjectionResult, kind: str, levels: Sequence[str]) -> float:
    """
    Spearman correlation between level index and the projection of each level's centroid on the
    first principal direction of that kind's centroids.
    """
    centroids = []
    for level in levels:
        rows = [i for i, label in enumerate(result.labels) if label == (kind, level)]
        if not rows:
            raise ValueError(f"No representations labelled ({kind}, {level})")
        centroids.append(result.coords[rows].mean(axis=0))
    centroids = np.stack(centroids)
    centred = centroids - centroids.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    direction = vt[0]
    projection = centred @ direction
    if projection[-1] < projection[0]:
        projection = -projection
    return spearman(list(range(len(levels))), projection)


@torch.no_grad()
def collect_representations(images: Sequence[torch.Tensor], encoder: DegradationEncoder, kinds: Sequence[str],
                            levels: Sequence[str], samples_per_class: int, crop_size: int, scale: int,
                            seed: int) -> Tuple[np.ndarray, List[Label]]:
    """Encode samples_per_class degraded crops per (kind, level) and return their d_vec rows."""
    device = next(encoder.parameters()).device
    encoder.eval()
    vectors, labels = [], []
    for k, kind in enumerate(kinds):
        for l_index, level in enumerate(levels):
            for sample in range(samples_per_class):
                rng = np.random.default_rng(derive_seed(seed, k, l_index, sample))
                image = images[int(rng.integers(len(images)))]
                height, width = image.shape[-2:]
                top = int(rng.integers(0, height - crop_size + 1))
                left = int(rng.integers(0, width - crop_size + 1))
                params = sample_parameters(kind, level, int(rng.integers(2 ** 31)), size=(crop_size, crop_size),
                                           scale=scale)
                x_l = synthesize(crop(image, top, left, crop_size), params, int(rng.integers(2 ** 31)))
                vectors.append(encoder(x_l.unsqueeze(0).to(device)).d_vec.squeeze(0).cpu().numpy())
                labels.append((kind, level))
    return np.stack(vectors), labels


def analyse_representations(images: Sequence[torch.Tensor], encoder: DegradationEncoder,
                            config: RunConfig) -> Tuple[ProjectionResult, Dict[str, float]]:
    """Project representations of the configured kinds and levels and compute separation statistics."""
    a = config.analysis
    vectors, labels = collect_representations(images, encoder, a.kinds, a.levels, a.samples_per_class,
                                              config.dam.crop_size, config.data.scale, config.system.seed)
    result = pca_project(vectors, labels)
    stats: Dict[str, float] = {}
    if len(a.kinds) > 1:
        stats["silhouette_kind"] = silhouette(result.coords, [kind for kind, _ in labels])
    if len(a.levels) > 1:
        for kind in a.kinds:
            stats[f"level_rho_{kind}"] = level_monotonicity(result, kind, a.levels)
    logger.info(f"Explained variance: {result.explained_variance_ratio[0]:.3f}, {result.explained_variance_ratio[1]:.3f}")
    for name, value in stats.items():
        logger.info(f"{name}: {value:.4f}")
    return result, stats


def write_projection_csv(result: ProjectionResult, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "level", "pc1", "pc2"])
        for (kind, level), (x, y) in zip(result.labels, result.coords):
            writer.writerow([kind, level, f"{x:.8f}", f"{y:.8f}"])
    return path


def render_scatter(result: ProjectionResult, path: Path, title: Optional[str] = None) -> Path:
    """Scatter of the projection coloured by kind, marker size growing with level."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kinds = sorted({kind for kind, _ in result.labels})
    levels = sorted({level for _, level in result.labels})
    fig, ax = plt.subplots(figsize=(6, 6))
    for kind in kinds:
        rows = [i for i, (k, _) in enumerate(result.labels) if k == kind]
        sizes = [12 + 10 * levels.index(result.labels[i][1]) for i in rows]
        ax.scatter(result.coords[rows, 0], result.coords[rows, 1], s=sizes, label=kind, alpha=0.7)
    ratio = result.explained_variance_ratio
    ax.set_xlabel(f"PC1 ({ratio[0]:.1%})")
    ax.set_ylabel(f"PC2 ({ratio[1]:.1%})")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
