import csv

import numpy as np
import pytest

from modules.analysis import (
    ProjectionResult,
    analyse_representations,
    level_monotonicity,
    pca_project,
    render_scatter,
    silhouette,
    spearman,
    write_projection_csv,
)
from modules.networks import build_dam


def _labels(count: int):
    return [("noise", "L1")] * count


def test_projection_needs_three_vectors() -> None:
    with pytest.raises(ValueError):
        pca_project(np.zeros((2, 4)), _labels(2))


def test_projection_rejects_label_mismatch() -> None:
    with pytest.raises(ValueError):
        pca_project(np.zeros((4, 4)), _labels(3))


def test_identical_vectors_project_to_origin() -> None:
    result = pca_project(np.ones((5, 6)), _labels(5))
    assert np.array_equal(result.coords, np.zeros((5, 2)))
    assert np.array_equal(result.explained_variance_ratio, np.zeros(2))


def test_planar_vectors_are_fully_explained() -> None:
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.standard_normal((10, 2)))[0].T
    vectors = rng.standard_normal((40, 2)) @ basis + rng.standard_normal(10)
    result = pca_project(vectors, _labels(40))
    assert result.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(result.components @ result.components.T, np.eye(2), atol=1e-9)
    reconstructed = result.coords @ result.components + result.mean
    assert np.allclose(reconstructed, vectors, atol=1e-9)


def test_component_signs_are_fixed() -> None:
    rng = np.random.default_rng(1)
    vectors = rng.standard_normal((20, 5))
    components = pca_project(vectors, _labels(20)).components
    for row in components:
        assert row[np.argmax(np.abs(row))] > 0
    assert np.allclose(pca_project(-vectors, _labels(20)).components, components, atol=1e-9)


def test_silhouette_of_separated_clusters_is_high() -> None:
    coords = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]])
    assert silhouette(coords, ["a"] * 3 + ["b"] * 3) > 0.9
    with pytest.raises(ValueError):
        silhouette(coords, ["a"] * 6)


def test_spearman_of_monotone_sequences() -> None:
    assert spearman([0, 1, 2, 3], [0.1, 0.5, 2.0, 9.0]) == pytest.approx(1.0)
    assert spearman([0, 1, 2, 3], [4.0, 3.0, 2.0, 1.0]) == pytest.approx(-1.0)


def test_level_monotonicity_of_ordered_centroids() -> None:
    levels = ["L1", "L2", "L3", "L4"]
    coords, labels = [], []
    for index, level in enumerate(levels):
        for offset in (-0.1, 0.1):
            coords.append([index + offset, 0.5 * index])
            labels.append(("smoke", level))
    result = ProjectionResult(coords=np.array(coords), explained_variance_ratio=np.zeros(2),
                              components=np.eye(2), mean=np.zeros(2), labels=labels)
    assert level_monotonicity(result, "smoke", levels) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        level_monotonicity(result, "noise", levels)


def test_projection_csv_lists_every_vector(tmp_path) -> None:
    rng = np.random.default_rng(2)
    labels = [("noise", "L1"), ("smoke", "L4"), ("noise", "L4"), ("smoke", "L1")]
    result = pca_project(rng.standard_normal((4, 3)), labels)
    path = write_projection_csv(result, tmp_path / "projection.csv")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [(row["kind"], row["level"]) for row in rows] == labels
    assert float(rows[0]["pc1"]) == pytest.approx(result.coords[0, 0], abs=1e-7)
    assert render_scatter(result, tmp_path / "projection.png").stat().st_size > 0


def test_analyse_representations_on_a_tiny_encoder(tiny_config, make_image) -> None:
    images = [make_image(64, seed=s) for s in range(3)]
    encoder = build_dam(tiny_config).encoder
    result, stats = analyse_representations(images, encoder, tiny_config)
    assert result.coords.shape == (12, 2)
    assert set(stats) == {"silhouette_kind", "level_rho_noise", "level_rho_smoke"}
    assert -1.0 <= stats["silhouette_kind"] <= 1.0
    assert stats["level_rho_noise"] == pytest.approx(1.0)
    assert stats["level_rho_smoke"] == pytest.approx(1.0)
