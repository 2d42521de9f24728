import math

import pytest
import torch
import torch.nn as nn

from modules.constants import DEGRADATION_KINDS
from modules.cycle import (
    CycleResult,
    DiscriminatorOutputError,
    LossWeights,
    adv_loss_GH,
    adv_loss_GL,
    adv_loss_hf,
    adversarial_value,
    cycle_loss,
    degrade_back,
    discriminator_objective,
    generator_objective,
    guard,
)
from modules.degradations import DegradationParameterError, identity_parameters
from modules.networks import DiscriminatorSet, PatchDiscriminator, RegressionHeads, build_models


class ConstantCritic(nn.Module):
    def __init__(self, value: float):
        super().__init__()
        self.value = value

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.full((x.shape[0], 1, 2, 2), self.value, dtype=x.dtype)


class IdentityEncoder(nn.Module):
    """Stands in for the DAM: d_map is the image itself, d_vec its channel means."""

    def forward(self, x: torch.Tensor):
        from modules.networks import DegradationRepresentation

        return DegradationRepresentation(d_map=x, d_vec=x.mean(dim=(2, 3)))


class IdentityGenerator(nn.Module):
    def compress(self, d_map: torch.Tensor) -> torch.Tensor:
        return torch.zeros(d_map.shape[0], 4)

    def forward(self, x_l: torch.Tensor, d_c=None):
        return x_l, torch.zeros(x_l.shape[0], 4) if d_c is None else d_c


class IdentityHeads(nn.Module):
    def forward(self, d_c: torch.Tensor, kind=None):
        return identity_parameters("ses_composite")


def test_adversarial_value_at_half_is_two_log_half() -> None:
    half = torch.full((2, 1, 4, 4), 0.5, dtype=torch.float64)
    assert adv_loss_GH(half, half).item() == pytest.approx(-1.3863, abs=1e-4)
    assert adversarial_value(half, half).item() == pytest.approx(2 * math.log(0.5), abs=1e-6)


def test_low_domain_value_rewards_a_separating_discriminator() -> None:
    real = torch.full((2, 1, 4, 4), 0.9, dtype=torch.float64)
    fake = torch.full((2, 1, 4, 4), 0.1, dtype=torch.float64)
    assert adv_loss_GL(real, fake).item() == pytest.approx(2 * math.log(0.9), abs=1e-6)
    assert adv_loss_GL(real, fake) > adv_loss_GL(fake, real)


def test_near_optimal_discriminator_value_is_close_to_zero() -> None:
    eps = 1e-3
    real = torch.full((1, 1, 3, 3), 1 - eps, dtype=torch.float64)
    fake = torch.full((1, 1, 3, 3), eps, dtype=torch.float64)
    assert adversarial_value(real, fake).item() == pytest.approx(-2 * eps, rel=1e-2)


def test_saturated_outputs_are_clamped_to_finite_losses() -> None:
    value = adversarial_value(torch.zeros(1, 1, 2, 2), torch.ones(1, 1, 2, 2))
    assert math.isfinite(value.item())


@pytest.mark.parametrize("bad", [1.5, -0.1, float("nan")])
def test_guard_rejects_outputs_outside_unit_interval(bad: float) -> None:
    with pytest.raises(DiscriminatorOutputError):
        guard(torch.full((1, 1, 2, 2), bad))


def test_high_frequency_term_with_half_critic() -> None:
    images = torch.rand(2, 3, 16, 16)
    assert adv_loss_hf(images, images, ConstantCritic(0.5)).item() == pytest.approx(-1.3863, abs=1e-4)


def test_high_frequency_term_on_constant_images_sees_zero_residuals() -> None:
    critic = PatchDiscriminator(3, 4, 2)
    real, fake = torch.full((1, 3, 16, 16), 0.2), torch.full((1, 3, 16, 16), 0.8)
    zero_output = critic(torch.zeros(1, 3, 16, 16))
    expected = torch.log(guard(zero_output)).mean() + torch.log(1 - guard(zero_output)).mean()
    assert torch.allclose(adv_loss_hf(real, fake, critic, 1.0), expected, atol=1e-6)


def test_loss_weights_reject_negative_values() -> None:
    with pytest.raises(ValueError):
        LossWeights(cyc=-1.0)


def test_perfect_inverse_fixture_has_zero_cycle_loss() -> None:
    x_l = torch.rand(2, 3, 16, 16)
    result = cycle_loss(x_l, x_l.clone(), IdentityGenerator(), IdentityHeads(), IdentityEncoder(), LossWeights())
    assert result.l_cl.item() == 0.0
    assert result.l_ch.item() == 0.0
    assert result.l_cd.item() == 0.0
    assert result.total.item() == 0.0


def test_cycle_term_is_mean_absolute_difference() -> None:
    x_l = torch.full((1, 3, 16, 16), 0.3, dtype=torch.float64)
    x_h = torch.full((1, 3, 16, 16), 0.4, dtype=torch.float64)
    result = cycle_loss(x_l, x_h, IdentityGenerator(), IdentityHeads(), IdentityEncoder(), LossWeights(cd=0.0))
    assert result.l_cl.item() == 0.0
    assert result.l_ch.item() == 0.0
    assert result.l_cd.item() == pytest.approx(0.1, abs=1e-12)


def test_cycle_rejects_mismatched_batches() -> None:
    from modules.imaging import ShapeError

    with pytest.raises(ShapeError):
        cycle_loss(torch.rand(2, 3, 16, 16), torch.rand(1, 3, 16, 16), IdentityGenerator(), IdentityHeads(),
                   IdentityEncoder(), LossWeights())


@pytest.mark.parametrize("kind", DEGRADATION_KINDS)
def test_regressed_parameters_satisfy_their_invariants(kind: str) -> None:
    torch.manual_seed(0)
    heads = RegressionHeads(DEGRADATION_KINDS, embed_dim=8, hidden=8, grid=4, kernel_size=5, scale=2)
    x_enh = torch.rand(2, 3, 32, 32)
    out, params = degrade_back(x_enh, torch.randn(2, 8) * 3, heads, seed=0, kind=kind)
    assert out.shape == (2, 3, 16, 16)
    assert params.kind == kind
    assert out.min() >= 0 and out.max() <= 1


def test_unknown_head_kind_is_rejected() -> None:
    with pytest.raises(DegradationParameterError):
        RegressionHeads("rain")
    heads = RegressionHeads(["noise", "smoke"], embed_dim=8, hidden=8, grid=4, kernel_size=5)
    with pytest.raises(DegradationParameterError):
        heads(torch.randn(1, 8), kind="low_light")
    with pytest.raises(DegradationParameterError):
        RegressionHeads(["noise"], embed_dim=8, default_kind="smoke")


def test_bundle_has_a_head_for_every_kind(tiny_config) -> None:
    tiny_config.cycle.pdm_kind = "smoke"
    bundle = build_models(tiny_config)
    assert bundle.heads.kinds == list(DEGRADATION_KINDS)
    assert bundle.heads.default_kind == "smoke"
    with torch.no_grad():
        assert bundle.heads(torch.randn(2, 8)).kind == "smoke"
        assert bundle.heads(torch.randn(2, 8), kind="noise").kind == "noise"


def test_objectives_cover_every_discriminator(tiny_bundle) -> None:
    x_l, x_h = torch.rand(2, 3, 16, 16), torch.rand(2, 3, 32, 32)
    result = cycle_loss(x_l, x_h, tiny_bundle.generator, tiny_bundle.heads, tiny_bundle.dam.encoder, LossWeights())
    assert isinstance(result, CycleResult)
    g = generator_objective(result, tiny_bundle.discriminators, LossWeights())
    d = discriminator_objective(x_l, x_h, result, tiny_bundle.discriminators)
    assert set(g) == {"g_adv_h", "g_adv_l", "g_adv_hf", "g_total"}
    assert set(d) == {"d_adv_h", "d_adv_l", "d_adv_hf", "d_total"}
    assert all(torch.isfinite(v) for v in (*g.values(), *d.values()))
    d["d_total"].backward()
    assert all(p.grad is not None for p in tiny_bundle.discriminators.parameters())
    assert all(p.grad is None for p in tiny_bundle.dgem.parameters())


def test_discriminators_emit_probabilities() -> None:
    discriminators = DiscriminatorSet(ndf=4, n_layers=2)
    for critic in (discriminators.low, discriminators.high, discriminators.highfreq):
        out = critic(torch.rand(1, 3, 16, 16))
        assert out.min() >= 0 and out.max() <= 1


def _gradient_check(loss_fn, params, count: int = 20, step: float = 1e-6) -> None:
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    flat = [(p, g) for p, g in zip(params, grads)]
    generator = torch.Generator().manual_seed(0)
    for _ in range(count):
        which = int(torch.randint(len(flat), (1,), generator=generator))
        param, grad = flat[which]
        index = int(torch.randint(param.numel(), (1,), generator=generator))
        with torch.no_grad():
            original = param.view(-1)[index].item()
            param.view(-1)[index] = original + step
            up = loss_fn().item()
            param.view(-1)[index] = original - step
            down = loss_fn().item()
            param.view(-1)[index] = original
        numeric = (up - down) / (2 * step)
        analytic = grad.reshape(-1)[index].item()
        assert abs(numeric - analytic) <= 1e-3 * max(abs(numeric), abs(analytic), 1e-4)


def test_adversarial_gradients_match_finite_differences() -> None:
    torch.manual_seed(0)
    critic = PatchDiscriminator(3, 4, 2).double()
    real, fake = torch.rand(1, 3, 32, 32, dtype=torch.float64), torch.rand(1, 3, 32, 32, dtype=torch.float64)
    params = [p for p in critic.parameters()]
    _gradient_check(lambda: adversarial_value(critic(real), critic(fake)), params)


def test_cycle_gradients_match_finite_differences(tiny_bundle) -> None:
    bundle = tiny_bundle
    for module in bundle.components().values():
        module.double()
    torch.manual_seed(1)
    x_l = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    x_h = torch.rand(1, 3, 32, 32, dtype=torch.float64)
    params = list(bundle.dgem.reconstruction.parameters()) + list(bundle.heads.head().parameters())

    def loss():
        return cycle_loss(x_l, x_h, bundle.generator, bundle.heads, bundle.dam.encoder, LossWeights(), seed=3).total

    _gradient_check(loss, params)


def test_contrastive_gradients_match_finite_differences() -> None:
    from modules.contrastive import info_nce_loss
    from modules.networks import DegradationEncoder

    torch.manual_seed(0)
    encoder = DegradationEncoder(base_channels=4, res_blocks=3, proj_dim=8).double()
    a, b = torch.rand(2, 3, 32, 32, dtype=torch.float64), torch.rand(2, 3, 32, 32, dtype=torch.float64)
    negatives = nn.functional.normalize(torch.randn(5, 8, dtype=torch.float64), dim=1)
    _gradient_check(lambda: info_nce_loss(encoder(a).d_vec, encoder(b).d_vec, negatives, 0.07),
                    list(encoder.parameters()))
