import numpy as np
import pytest
import torch

from modules.constants import DEGRADATION_KINDS, LEVELS, NOISE_STD_RANGES
from modules.degradations import (
    DegradationParameterError,
    DegradationParameters,
    degrade_blur,
    degrade_lowlight,
    degrade_noise,
    degrade_ses,
    degrade_smoke,
    delta_kernel,
    get_degradation,
    identity_parameters,
    motion_kernel,
    sample_parameters,
    synthesize,
)


@pytest.fixture
def image(make_image) -> torch.Tensor:
    return make_image(32, seed=3)


@pytest.mark.parametrize("kind", DEGRADATION_KINDS)
def test_identity_parameters_return_input_bit_exactly(kind: str, image: torch.Tensor) -> None:
    assert torch.equal(synthesize(image, identity_parameters(kind), seed=1), image)


def test_single_kind_identities_return_input_bit_exactly(image: torch.Tensor) -> None:
    ones = torch.ones(32, 32)
    assert torch.equal(degrade_noise(image, 0.0, seed=1), image)
    assert torch.equal(degrade_blur(image, delta_kernel(5)), image)
    assert torch.equal(degrade_lowlight(image, ones, 0.0, seed=1), image)
    assert torch.equal(degrade_smoke(image, ones, 0.7), image)


def test_noise_statistics_on_constant_image() -> None:
    out = degrade_noise(torch.full((3, 256, 256), 0.5), 0.1, seed=11)
    assert 0.49 <= out.mean().item() <= 0.51
    assert 0.095 <= out.std().item() <= 0.105


def test_noise_output_is_clamped() -> None:
    assert degrade_noise(torch.ones(3, 64, 64), 0.2, seed=2).max().item() <= 1.0


def test_noise_std_out_of_range_names_component() -> None:
    with pytest.raises(DegradationParameterError) as exc:
        degrade_noise(torch.rand(3, 16, 16), 0.7, seed=0)
    assert exc.value.component == "noise"


def test_blur_keeps_constant_images_constant() -> None:
    image = torch.full((3, 32, 32), 0.42, dtype=torch.float64)
    out = degrade_blur(image, motion_kernel(7, 0.4))
    assert torch.allclose(out, image, atol=1e-12)


def test_box_blur_matches_direct_convolution() -> None:
    ramp = torch.arange(25, dtype=torch.float64).view(5, 5) / 30.0
    image = ramp.expand(3, 5, 5).clone()
    kernel = torch.full((3, 3), 1.0 / 9.0, dtype=torch.float64)
    padded = np.pad(ramp.numpy(), 1, mode="reflect")
    expected = np.zeros((5, 5))
    for y in range(5):
        for x in range(5):
            expected[y, x] = sum(padded[y + 1 - dy, x + 1 - dx] / 9.0 for dy in (-1, 0, 1) for dx in (-1, 0, 1))
    out = degrade_blur(image, kernel)
    assert np.allclose(out[0].numpy(), expected, atol=1e-6)


def test_blur_rejects_unnormalised_kernel() -> None:
    with pytest.raises(DegradationParameterError) as exc:
        degrade_blur(torch.rand(3, 16, 16), torch.full((3, 3), 0.2))
    assert exc.value.component == "blur_kernel"


def test_lowlight_is_pointwise_product() -> None:
    out = degrade_lowlight(torch.full((3, 16, 16), 0.8), torch.full((16, 16), 0.5), 0.0, seed=0)
    assert torch.allclose(out, torch.full_like(out, 0.4))


def test_lowlight_follows_a_radial_field() -> None:
    yy, xx = torch.meshgrid(torch.linspace(-1, 1, 33), torch.linspace(-1, 1, 33), indexing="ij")
    field = (1.0 - 0.7 * (yy ** 2 + xx ** 2).sqrt() / 2 ** 0.5).double()
    out = degrade_lowlight(torch.full((3, 33, 33), 0.6, dtype=torch.float64), field, 0.0, seed=0)
    assert torch.allclose(out[1], field * 0.6, atol=1e-6)


@pytest.mark.parametrize("value", [0.0, 1.2])
def test_lowlight_rejects_out_of_range_illumination(value: float) -> None:
    with pytest.raises(DegradationParameterError):
        degrade_lowlight(torch.rand(3, 8, 8), torch.full((8, 8), value), 0.0, seed=0)


def test_smoke_blends_towards_airlight() -> None:
    out = degrade_smoke(torch.full((3, 16, 16), 0.2), torch.full((16, 16), 0.5), 1.0)
    assert torch.allclose(out, torch.full_like(out, 0.6))


def test_smoke_rejects_airlight_above_one() -> None:
    with pytest.raises(DegradationParameterError) as exc:
        degrade_smoke(torch.rand(3, 8, 8), torch.full((8, 8), 0.5), 1.5)
    assert exc.value.component == "airlight"


def test_ses_gamma_squares_the_input() -> None:
    params = identity_parameters("ses_composite")
    params.gamma = 2.0
    out = degrade_ses(torch.full((3, 16, 16), 0.5), params, seed=0)
    assert torch.allclose(out, torch.full_like(out, 0.25))


def test_ses_downscales_by_scale(make_image) -> None:
    params = sample_parameters("ses_composite", "L2", seed=4, size=(64, 64))
    assert params.scale == 2
    assert degrade_ses(make_image(64, seed=1), params, seed=0).shape == (3, 32, 32)


def test_ses_error_names_offending_component() -> None:
    params = identity_parameters("ses_composite")
    params.alpha = -1.0
    with pytest.raises(DegradationParameterError) as exc:
        degrade_ses(torch.rand(3, 16, 16), params, seed=0)
    assert exc.value.component == "alpha"


def test_sampling_is_deterministic() -> None:
    a = sample_parameters("noise", "L1", seed=7)
    b = sample_parameters("noise", "L1", seed=7)
    assert a.noise_std == b.noise_std


def test_level_four_noise_exceeds_every_level_one_draw() -> None:
    upper_l1 = NOISE_STD_RANGES["L1"][1]
    for seed in range(50):
        assert sample_parameters("noise", "L4", seed).noise_std > upper_l1


def test_sampled_blur_kernels_are_normalised() -> None:
    for seed in range(1000):
        kernel = sample_parameters("motion_blur", "L2", seed).blur_kernel
        assert abs(kernel.sum().item() - 1.0) <= 1e-6


@pytest.mark.parametrize("kind", DEGRADATION_KINDS)
@pytest.mark.parametrize("level", LEVELS)
def test_sampled_parameters_validate(kind: str, level: str) -> None:
    params = sample_parameters(kind, level, seed=5, size=(32, 32))
    get_degradation(kind).validate(params)
    assert params.to_record()["kind"] == kind


def test_unknown_kind_and_level_are_rejected() -> None:
    with pytest.raises(DegradationParameterError):
        get_degradation("rain")
    with pytest.raises(DegradationParameterError):
        sample_parameters("noise", "L9", seed=0)


def test_kind_mismatch_is_rejected(image: torch.Tensor) -> None:
    with pytest.raises(DegradationParameterError):
        get_degradation("noise").synthesize(image, DegradationParameters(kind="smoke"), seed=0)


def test_synthesize_is_deterministic_for_a_seed(image: torch.Tensor) -> None:
    params = sample_parameters("low_light", "L3", seed=9, size=(32, 32), scale=2)
    assert torch.equal(synthesize(image, params, 3), synthesize(image, params, 3))
    assert synthesize(image, params, 3).shape == (3, 16, 16)
