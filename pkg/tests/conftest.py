import pytest
import torch

from triportrait.config import ModelConfig, RenderConfig


def tiny_model_cfg(**overrides) -> ModelConfig:
    base = dict(trunk_resolution=16, plane_resolution=32, trunk_channels=16,
                branch_channels=16, superres_channels=16)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_render_cfg(**overrides) -> RenderConfig:
    base = dict(lr_resolution=16, output_resolution=32, coarse_samples=12, fine_samples=12)
    base.update(overrides)
    return RenderConfig(**base)


@pytest.fixture
def model_cfg():
    return tiny_model_cfg()


@pytest.fixture
def render_cfg():
    return tiny_render_cfg()


@pytest.fixture(autouse=True)
def _fixed_seed():
    torch.manual_seed(1234)
