import pytest
import torch

from triportrait.backbone import FeatureGenerator, MappingNetwork, StyleCodes
from triportrait.camera import pose_from_angles, poses_to_tensor
from triportrait.errors import ConfigurationError, RejectedInputError

from conftest import tiny_model_cfg


def _pose_vec(dtype=torch.float32):
    return poses_to_tensor([pose_from_angles(0.2, 0.1)], dtype=dtype)


def test_map_latent_arity(model_cfg):
    net = MappingNetwork(model_cfg)
    styles = net(torch.randn(2, 512), _pose_vec().repeat(2, 1))
    assert styles.layers.shape == (2, 18, 512)
    assert styles.shape_styles.shape == (2, 8, 512)
    assert styles.texture_styles.shape == (2, 10, 512)


def test_truncation_zero_returns_mean(model_cfg):
    net = MappingNetwork(model_cfg)
    with torch.no_grad():
        net.w_mean.copy_(torch.randn(512))
    styles = net(torch.randn(3, 512), _pose_vec().repeat(3, 1), truncation=0.0)
    expected = net.w_mean.reshape(1, 1, -1).expand(3, 18, -1)
    torch.testing.assert_close(styles.layers, expected, rtol=0, atol=0)


def test_truncation_half_matches_interpolation_oracle(model_cfg):
    net = MappingNetwork(model_cfg)
    with torch.no_grad():
        net.w_mean.copy_(torch.randn(512))
    z = torch.randn(1, 512)
    pose = _pose_vec()
    full = net(z, pose, truncation=1.0).layers
    half = net(z, pose, truncation=0.5).layers
    oracle = 0.5 * net.w_mean.reshape(1, 1, -1) + 0.5 * full
    torch.testing.assert_close(half, oracle, rtol=0, atol=1e-6)


def test_non_finite_latent_rejected(model_cfg):
    net = MappingNetwork(model_cfg)
    z = torch.randn(1, 512)
    z[0, 5] = float("nan")
    with pytest.raises(RejectedInputError):
        net(z, _pose_vec())


def test_ema_updates_only_when_asked(model_cfg):
    net = MappingNetwork(model_cfg)
    before = net.w_mean.clone()
    net(torch.randn(2, 512), _pose_vec().repeat(2, 1))
    torch.testing.assert_close(net.w_mean, before, rtol=0, atol=0)
    net(torch.randn(2, 512), _pose_vec().repeat(2, 1), update_ema=True)
    assert not torch.equal(net.w_mean, before)


def test_texture_planes_default_channels():
    cfg = tiny_model_cfg()
    gen = FeatureGenerator(cfg)
    styles = StyleCodes(torch.randn(1, 18, 512))
    sem, tex = gen(styles)
    assert tex.planes.shape == (1, 3, 32, 32, 32)
    assert sem.planes.shape == (1, 3, 32, 16, 16)


def test_mismatched_style_count_rejected(model_cfg):
    gen = FeatureGenerator(model_cfg)
    with pytest.raises(ConfigurationError):
        gen(StyleCodes(torch.randn(1, 12, 512)))


def test_semantic_planes_ignore_texture_styles(model_cfg):
    gen = FeatureGenerator(model_cfg)
    layers = torch.randn(1, 18, 512)
    sem_a, _ = gen(StyleCodes(layers))
    perturbed = layers.clone()
    perturbed[:, 8:] += torch.randn(1, 10, 512)
    sem_b, _ = gen(StyleCodes(perturbed))
    assert torch.equal(sem_a.planes, sem_b.planes)


def test_shape_styles_change_semantic_planes(model_cfg):
    gen = FeatureGenerator(model_cfg)
    layers = torch.randn(1, 18, 512)
    sem_a, _ = gen(StyleCodes(layers))
    perturbed = layers.clone()
    perturbed[:, 0] += 1.0
    sem_b, _ = gen(StyleCodes(perturbed))
    assert not torch.equal(sem_a.planes, sem_b.planes)


@pytest.mark.parametrize("branch", [0, 1, 2])
def test_branch_style_isolation(model_cfg, branch):
    # perturbing branch k's private styles must change plane k and only plane k
    gen = FeatureGenerator(model_cfg)
    styles = StyleCodes(torch.randn(1, 18, 512))
    base_blocks = [styles.texture_styles.clone() for _ in range(3)]
    _, tex_a = gen(styles, branch_styles=base_blocks)
    perturbed = [b.clone() for b in base_blocks]
    perturbed[branch] = perturbed[branch] + torch.randn_like(perturbed[branch])
    _, tex_b = gen(styles, branch_styles=perturbed)
    for k in range(3):
        same = torch.equal(tex_a.planes[:, k], tex_b.planes[:, k])
        assert same == (k != branch)


def test_generator_forward_deterministic(model_cfg):
    gen = FeatureGenerator(model_cfg)
    styles = StyleCodes(torch.randn(2, 18, 512))
    sem_a, tex_a = gen(styles)
    sem_b, tex_b = gen(styles)
    assert torch.equal(sem_a.planes, sem_b.planes)
    assert torch.equal(tex_a.planes, tex_b.planes)


def test_gradient_matches_finite_differences(model_cfg):
    gen = FeatureGenerator(model_cfg).double()
    layers = torch.randn(1, 18, 512, dtype=torch.float64)

    def scalar(ls):
        sem, tex = gen(StyleCodes(ls))
        return sem.planes.square().mean() + tex.planes.sin().mean()

    layers.requires_grad_(True)
    value = scalar(layers)
    (grad,) = torch.autograd.grad(value, layers)
    idx = (0, 3, 17)
    h = 1e-6
    up = layers.detach().clone()
    up[idx] += h
    down = layers.detach().clone()
    down[idx] -= h
    fd = (scalar(up) - scalar(down)) / (2 * h)
    rel = abs(grad[idx].item() - fd.item()) / max(abs(fd.item()), 1e-12)
    assert rel < 1e-3
