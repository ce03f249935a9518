import math

import numpy as np
import pytest
import torch

from triportrait.discriminator import (DualDiscriminator, DualInput, MinibatchStd,
                                       dual_input_from_fake, dual_input_from_real)
from triportrait.errors import ConfigurationError
from triportrait.losses import (FeatureEmbedder, frechet_distance, gan_losses,
                                perceptual_distance, split_r1, toy_fid)

from conftest import tiny_model_cfg


RES = 16


def _disc(seed=0):
    torch.manual_seed(seed)
    return DualDiscriminator(tiny_model_cfg(), RES, base_channels=16, feature_dim=32)


def _dual(seed=0, batch=4):
    g = torch.Generator().manual_seed(seed)
    mk = lambda c: torch.randn(batch, c, RES, RES, generator=g)
    return DualInput(torch.tanh(mk(3)), torch.tanh(mk(3)),
                     torch.softmax(mk(19), dim=1), torch.softmax(mk(19), dim=1),
                     pose=torch.randn(batch, 25, generator=g))


def test_branch_input_arities():
    dual = _dual()
    assert dual.rgb_stack().shape[1] == 6       # 3 + 3
    assert dual.semantic_stack().shape[1] == 38  # 19 + 19


def test_mismatched_sizes_rejected():
    g = torch.Generator().manual_seed(0)
    with pytest.raises(ConfigurationError):
        DualInput(torch.randn(1, 3, 16, 16, generator=g),
                  torch.randn(1, 3, 8, 8, generator=g),
                  torch.randn(1, 19, 16, 16, generator=g),
                  torch.randn(1, 19, 16, 16, generator=g),
                  pose=torch.randn(1, 25, generator=g))


def test_zeroed_semantic_projection_kills_semantic_sensitivity():
    disc = _disc()
    with torch.no_grad():
        disc.semantic_branch.project.weight.zero_()
        disc.semantic_branch.project.bias.zero_()
    dual = _dual()
    base = disc(dual)
    changed = DualInput(dual.image_hr, dual.image_lr_resized,
                        torch.softmax(torch.randn_like(dual.semantic_hr), dim=1),
                        torch.softmax(torch.randn_like(dual.semantic_lr_resized), dim=1),
                        pose=dual.pose)
    torch.testing.assert_close(disc(changed), base, rtol=0, atol=0)


def test_minibatch_std_zero_for_identical_batch():
    layer = MinibatchStd()
    x = torch.randn(1, 8, 4, 4).repeat(6, 1, 1, 1)
    out = layer(x)
    assert out.shape == (6, 9, 4, 4)
    assert out[:, -1].abs().max().item() == 0.0


def test_logits_permutation_equivariant():
    disc = _disc()
    dual = _dual(batch=6)
    logits = disc(dual)
    perm = torch.randperm(6, generator=torch.Generator().manual_seed(1))
    permuted = DualInput(dual.image_hr[perm], dual.image_lr_resized[perm],
                         dual.semantic_hr[perm], dual.semantic_lr_resized[perm],
                         pose=dual.pose[perm])
    torch.testing.assert_close(disc(permuted), logits[perm], rtol=0, atol=1e-5)


def test_gan_loss_closed_form_at_zero_logit():
    disc = _disc()
    with torch.no_grad():  # zero head -> logits exactly 0
        disc.head.weight.zero_()
        disc.head.bias.zero_()
    terms = gan_losses(disc, _dual(1), _dual(2), with_r1=False)
    assert terms.loss_g.item() == pytest.approx(math.log(2.0), abs=1e-6)
    assert terms.loss_d.item() == pytest.approx(2 * math.log(2.0), abs=1e-6)


def test_r1_zero_for_input_blind_discriminator():
    disc = _disc()
    with torch.no_grad():
        for p in disc.rgb_branch.parameters():
            p.zero_()
    r1_image, _ = split_r1(disc, _dual(), create_graph=False)
    assert r1_image.item() == 0.0


def test_split_r1_cross_gradients_are_exactly_zero():
    # autodiff probe: the image penalty's graph contains no semantic inputs
    disc = _disc()
    dual = _dual()
    inputs = [dual.image_hr.requires_grad_(True),
              dual.image_lr_resized.requires_grad_(True),
              dual.semantic_hr.requires_grad_(True),
              dual.semantic_lr_resized.requires_grad_(True)]
    logits = disc(DualInput(*inputs, pose=dual.pose))
    grads = torch.autograd.grad(logits.sum(), inputs, create_graph=True)
    r1_image = sum(g.square().sum() for g in grads[:2])
    r1_semantic = sum(g.square().sum() for g in grads[2:])
    cross_a = torch.autograd.grad(r1_image, inputs[2:], retain_graph=True,
                                  allow_unused=True)
    cross_b = torch.autograd.grad(r1_semantic, inputs[:2], allow_unused=True)
    for g in cross_a + cross_b:
        assert g is None or g.abs().max().item() == 0.0


def test_split_r1_is_positive_for_real_discriminator():
    disc = _disc()
    r1_image, r1_semantic = split_r1(disc, _dual(), create_graph=False)
    assert r1_image.item() > 0
    assert r1_semantic.item() > 0


def test_dual_input_builders(model_cfg):
    from triportrait.field import RenderBundle
    from triportrait.superres import Upsampler

    up = Upsampler(model_cfg, 8, RES)
    g = torch.Generator().manual_seed(0)
    color = torch.randn(2, 64, 32, generator=g)
    sem = torch.randn(2, 64, 19, generator=g)
    bundle = RenderBundle(color, sem, torch.rand(2, 64, generator=g),
                          torch.rand(2, 64, generator=g), resolution=8)
    from triportrait.backbone import StyleCodes

    out = up(bundle, StyleCodes(torch.randn(2, 18, 512, generator=g)))
    fake = dual_input_from_fake(out, torch.randn(2, 25, generator=g))
    assert fake.image_hr.shape[-1] == RES
    assert fake.semantic_hr.sum(dim=1).allclose(torch.ones(2, RES, RES), atol=1e-5)

    real = dual_input_from_real(torch.tanh(torch.randn(2, 3, RES, RES, generator=g)),
                                torch.softmax(torch.randn(2, 19, RES, RES, generator=g), 1),
                                torch.randn(2, 25, generator=g), lr_size=8)
    assert real.image_lr_resized.shape[-1] == RES


def test_embedder_deterministic_across_instances():
    a = FeatureEmbedder()
    b = FeatureEmbedder()
    x = torch.randn(3, 3, 32, 32, generator=torch.Generator().manual_seed(0))
    torch.testing.assert_close(a(x), b(x), rtol=0, atol=0)


def test_frechet_distance_matches_gaussian_oracle():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, (20000, 4))
    shift = np.array([1.0, -2.0, 0.5, 0.0])
    b = rng.normal(0.0, 1.0, (20000, 4)) + shift
    fd = frechet_distance(a, b)
    # analytic: equal covariances -> FD == |mu_a - mu_b|^2
    assert fd == pytest.approx(float((shift ** 2).sum()), rel=0.05)
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-6)


def test_toy_fid_discriminates_distributions():
    emb = FeatureEmbedder()
    g = torch.Generator().manual_seed(0)
    base = torch.rand(32, 3, 16, 16, generator=g) * 2 - 1
    similar = base + 0.01 * torch.randn(32, 3, 16, 16, generator=g)
    different = torch.rand(32, 3, 16, 16, generator=g).sign().float()
    with torch.no_grad():
        near = toy_fid(emb, base, similar)
        far = toy_fid(emb, base, different)
    assert near < far


def test_perceptual_distance_zero_for_identical():
    emb = FeatureEmbedder()
    x = torch.randn(2, 3, 16, 16)
    assert perceptual_distance(emb, x, x).item() == 0.0
