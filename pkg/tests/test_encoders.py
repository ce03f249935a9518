import math

import pytest
import torch

from triportrait.config import EncoderTrainConfig
from triportrait.encoders import PITCH_LIMIT, YAW_LIMIT, PortraitEncoder, train_encoders
from triportrait.errors import ConfigurationError, RejectedInputError
from triportrait.generator import Generator

from conftest import tiny_model_cfg, tiny_render_cfg


RES = 32


def _inputs(batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    image = torch.tanh(torch.randn(batch, 3, RES, RES, generator=g))
    mask = torch.randint(0, 19, (batch, RES, RES), generator=g)
    return image, mask


def test_encoded_state_arity():
    enc = PortraitEncoder(RES)
    image, mask = _inputs()
    state = enc(image, mask)
    assert state.shape_styles.shape == (2, 8, 512)
    assert state.texture_styles.shape == (2, 10, 512)
    assert state.yaw.shape == (2,)
    assert state.pitch.shape == (2,)
    assert state.styles().layers.shape == (2, 18, 512)


def test_encode_is_pure():
    enc = PortraitEncoder(RES)
    image, mask = _inputs()
    a = enc(image, mask)
    b = enc(image, mask)
    torch.testing.assert_close(a.shape_styles, b.shape_styles, rtol=0, atol=0)
    torch.testing.assert_close(a.texture_styles, b.texture_styles, rtol=0, atol=0)
    torch.testing.assert_close(a.yaw, b.yaw, rtol=0, atol=0)


def test_angles_are_clamped():
    enc = PortraitEncoder(RES)
    with torch.no_grad():  # drive the angle head to saturation
        enc.texture.extra.bias.fill_(100.0)
    image, mask = _inputs()
    state = enc(image, mask)
    assert state.yaw.abs().max() <= YAW_LIMIT + 1e-6
    assert state.pitch.abs().max() <= PITCH_LIMIT + 1e-6


def test_wrong_resolution_rejected():
    enc = PortraitEncoder(RES)
    with pytest.raises(RejectedInputError):
        enc(torch.zeros(1, 3, 16, 16), torch.zeros(1, 16, 16, dtype=torch.long))


def test_out_of_range_class_rejected():
    enc = PortraitEncoder(RES)
    mask = torch.zeros(1, RES, RES, dtype=torch.long)
    mask[0, 0, 0] = 19
    with pytest.raises(RejectedInputError):
        enc(torch.zeros(1, 3, RES, RES), mask)


def _tiny_generator(seed=0):
    torch.manual_seed(seed)
    return Generator(tiny_model_cfg(trunk_resolution=8, plane_resolution=16,
                                    trunk_channels=8, branch_channels=8,
                                    superres_channels=8),
                     tiny_render_cfg(lr_resolution=8, output_resolution=16,
                                     coarse_samples=6, fine_samples=6))


def test_train_encoders_smoke_and_history_keys():
    gen = _tiny_generator()
    result = train_encoders(gen, EncoderTrainConfig(steps=2, batch_size=1, k_aug_views=2))
    assert len(result.losses) == 2
    rec = result.losses[0]
    for key in ("angles", "latent_consistency", "image", "perceptual", "mask",
                "feature_consistency", "total"):
        assert key in rec and math.isfinite(rec[key])


def test_k_zero_drops_consistency_terms():
    gen = _tiny_generator()
    result = train_encoders(gen, EncoderTrainConfig(steps=1, batch_size=1, k_aug_views=0))
    assert "latent_consistency" not in result.losses[0]
    assert "feature_consistency" not in result.losses[0]


def test_canonical_variant_drops_angle_regression():
    gen = _tiny_generator()
    result = train_encoders(gen, EncoderTrainConfig(steps=1, batch_size=1,
                                                    canonical_only=True))
    assert "angles" not in result.losses[0]
    assert "latent_consistency" not in result.losses[0]


def test_view_blind_encoder_has_zero_latent_consistency():
    gen = _tiny_generator()
    enc = PortraitEncoder(16, base_channels=8)
    with torch.no_grad():  # constant outputs regardless of the view
        for p in enc.parameters():
            p.zero_()
    result = train_encoders(gen, EncoderTrainConfig(steps=1, batch_size=1, k_aug_views=2),
                            encoder=enc)
    assert result.losses[0]["latent_consistency"] == 0.0


def test_negative_k_rejected():
    gen = _tiny_generator()
    with pytest.raises(ConfigurationError):
        train_encoders(gen, EncoderTrainConfig(steps=1, k_aug_views=-1))
