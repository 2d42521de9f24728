import csv
import math

import numpy as np
import pyiqa
import pytest
import skimage.data
import torch
from skimage.metrics import structural_similarity

from modules.imaging import load_image, save_image, to_grayscale
from modules.metrics import (
    MetricError,
    MetricReport,
    aggd_features,
    evaluate_directory,
    fit_niqe_model,
    load_niqe_model,
    mscn,
    niqe,
    piqe,
    psnr,
    save_niqe_model,
    ssim,
)


def test_psnr_closed_forms() -> None:
    zeros = torch.zeros(3, 8, 8, dtype=torch.float64)
    assert psnr(zeros, zeros) == math.inf
    assert psnr(zeros, torch.full_like(zeros, 0.1)) == pytest.approx(20.0, abs=1e-9)
    assert psnr(zeros, torch.full_like(zeros, 0.5)) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_rejects_mismatched_shapes() -> None:
    with pytest.raises(MetricError):
        psnr(torch.zeros(3, 8, 8), torch.zeros(3, 8, 9))


def test_ssim_of_identical_images_is_one(make_image) -> None:
    image = make_image(32, seed=1)
    assert ssim(image, image) == pytest.approx(1.0, abs=1e-9)


def test_ssim_of_constant_images_has_closed_form() -> None:
    a, b = 0.3, 0.6
    x = torch.full((3, 16, 16), a, dtype=torch.float64)
    y = torch.full((3, 16, 16), b, dtype=torch.float64)
    c1 = 0.01 ** 2
    assert ssim(x, y) == pytest.approx((2 * a * b + c1) / (a * a + b * b + c1), abs=1e-9)


def test_ssim_matches_scikit_image(make_image) -> None:
    x = make_image(48, seed=2).double()
    y = 1.0 - x
    gx = to_grayscale(x).squeeze(0).numpy()
    gy = to_grayscale(y).squeeze(0).numpy()
    expected = structural_similarity(gx, gy, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                     use_sample_covariance=False)
    assert ssim(x, y) == pytest.approx(expected, abs=1e-4)


def test_ssim_rejects_images_below_window() -> None:
    with pytest.raises(MetricError):
        ssim(torch.zeros(3, 8, 8), torch.zeros(3, 8, 8))


def test_mscn_of_constant_image_is_zero() -> None:
    assert np.allclose(mscn(np.full((20, 20), 90.0)), 0.0)


def test_aggd_recovers_gaussian_shape() -> None:
    values = np.random.default_rng(0).standard_normal(100000)
    alpha, mean, bl, br = aggd_features(values)
    assert alpha == pytest.approx(2.0, abs=0.1)
    assert bl == pytest.approx(br, rel=0.05)
    assert abs(mean) < 0.05


def _natural_crop(size: int = 128) -> torch.Tensor:
    array = skimage.data.astronaut()[64:64 + size, 160:160 + size]
    return torch.from_numpy(array.astype(np.float64) / 255.0).permute(2, 0, 1).contiguous()


def test_piqe_agrees_with_pyiqa_on_the_same_batch(make_image, tmp_path) -> None:
    save_image(make_image(64, seed=5), tmp_path / "quantized.png")
    reference = pyiqa.create_metric("piqe", device=torch.device("cpu"))
    for image in (_natural_crop(), load_image(tmp_path / "quantized.png")):
        with torch.no_grad():
            expected = float(reference(image.float().unsqueeze(0)).flatten()[0])
        assert piqe(image) == pytest.approx(expected, abs=1e-3)


def test_pure_noise_scores_worse_than_a_natural_image() -> None:
    clean_score = piqe(_natural_crop())
    assert 0.0 <= clean_score <= 100.0
    for seed in range(20):
        noise = torch.rand((3, 128, 128), generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
        assert piqe(noise) > clean_score


def test_piqe_is_deterministic(make_image) -> None:
    image = make_image(64, seed=3)
    assert piqe(image) == piqe(image.clone())


def test_piqe_rejects_tiny_images() -> None:
    with pytest.raises(MetricError):
        piqe(torch.rand(3, 12, 12))


@pytest.fixture
def niqe_model(make_image):
    images = [to_grayscale(make_image(192, seed=s).double()).squeeze(0).numpy() * 255.0 for s in range(3)]
    return fit_niqe_model(images)


def test_niqe_is_deterministic_and_finite(niqe_model, make_image) -> None:
    image = make_image(192, seed=9)
    score = niqe(image, niqe_model)
    assert math.isfinite(score) and score >= 0.0
    assert niqe(image, niqe_model) == score


def test_niqe_rejects_images_below_patch_size(niqe_model) -> None:
    with pytest.raises(MetricError):
        niqe(torch.rand(3, 64, 64), niqe_model)


def test_niqe_model_file_round_trips(niqe_model, tmp_path) -> None:
    path = save_niqe_model(niqe_model, tmp_path / "niqe.npz")
    loaded = load_niqe_model(path)
    assert np.array_equal(loaded.mu, niqe_model.mu)
    assert np.array_equal(loaded.cov, niqe_model.cov)


def test_report_aggregates_available_scores(tmp_path) -> None:
    report = MetricReport()
    report.add("a.png", psnr=30.0, piqe=10.0)
    report.add("b.png", psnr=20.0, ssim=0.5, piqe=20.0)
    assert report.aggregate() == {"psnr": 25.0, "ssim": 0.5, "niqe": None, "piqe": 15.0}
    path = report.to_csv(tmp_path / "metrics.csv")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [row["image"] for row in rows] == ["a.png", "b.png", "mean"]
    assert rows[0]["ssim"] == ""
    assert any(line.startswith("NIQE") and "n/a" in line for line in report.summary())


def test_evaluate_directory_scores_against_references(tmp_path, make_image, caplog) -> None:
    outputs, references = tmp_path / "out", tmp_path / "ref"
    for index in range(2):
        image = make_image(32, seed=index)
        save_image(image, outputs / f"{index}.png")
        save_image(image, references / f"{index}.png")
    save_image(make_image(32, seed=5), outputs / "extra.png")
    report = evaluate_directory(outputs, references)
    scores = {row["image"]: row for row in report.rows}
    assert scores["0.png"]["psnr"] == math.inf
    assert scores["1.png"]["ssim"] == pytest.approx(1.0)
    assert scores["extra.png"]["psnr"] is None
    assert "No reference for extra.png" in caplog.text


def test_evaluate_empty_directory_is_rejected(tmp_path) -> None:
    with pytest.raises(MetricError):
        evaluate_directory(tmp_path)


def test_piqe_rejects_batches() -> None:
    with pytest.raises(MetricError):
        piqe(torch.rand(2, 3, 32, 32))
