"""Residual upsampler lifting LR render outputs to the final image and mask."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import StyleCodes, SynthesisBlock
from .config import ModelConfig, RenderConfig
from .errors import ConfigurationError
from .field import RenderBundle


@dataclass
class PortraitOutput:
    """Final render: HR image/semantics plus the LR maps they were lifted from."""

    image: torch.Tensor         # (B, 3, H, W) in [-1, 1]
    semantic: torch.Tensor      # (B, 19, H, W) logits
    rgb_lr: torch.Tensor        # (B, 3, h, w)
    semantic_lr: torch.Tensor   # (B, 19, h, w)

    @property
    def resolution(self) -> int:
        return self.image.shape[-1]

    def semantic_mask(self) -> torch.Tensor:
        """HR index mask via argmax (ties -> lowest class)."""
        return self.semantic.argmax(dim=1)


def _up(x: torch.Tensor, size: int) -> torch.Tensor:
    if x.shape[-1] == size:
        return x
    return F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)


class Upsampler(nn.Module):
    """Two-path residual synthesis: shared modulated trunk, separate heads.

    Modulation style is the last texture layer. Residual output convolutions
    are zero-initialized so an untrained module is exactly bilinear upsampling.
    """

    def __init__(self, model_cfg: ModelConfig, in_resolution: int, out_resolution: int):
        super().__init__()
        if out_resolution < in_resolution:
            raise ConfigurationError("upsampler output must be >= input resolution")
        ratio = out_resolution // in_resolution
        if ratio * in_resolution != out_resolution or ratio & (ratio - 1):
            raise ConfigurationError("upsampler ratio must be a power of two")
        self.in_resolution = in_resolution
        self.out_resolution = out_resolution
        self.cfg = model_cfg
        ch = model_cfg.superres_channels
        in_ch = model_cfg.color_feature_dim + model_cfg.semantic_classes
        n_blocks = int(math.log2(ratio))
        self.blocks = nn.ModuleList()
        for i in range(n_blocks):
            self.blocks.append(SynthesisBlock(in_ch if i == 0 else ch, ch,
                                              model_cfg.style_dim, upsample=True))
        head_in = ch if self.blocks else in_ch
        self.rgb_head = nn.Conv2d(head_in, 3, 1)
        self.semantic_head = nn.Conv2d(head_in, model_cfg.semantic_classes, 1)
        nn.init.zeros_(self.rgb_head.weight)
        nn.init.zeros_(self.rgb_head.bias)
        nn.init.zeros_(self.semantic_head.weight)
        nn.init.zeros_(self.semantic_head.bias)

    def forward(self, bundle: RenderBundle, styles: StyleCodes) -> PortraitOutput:
        if bundle.resolution is None:
            raise ConfigurationError("bundle lacks an image resolution")
        if bundle.resolution > self.in_resolution:
            raise ConfigurationError(
                f"rendered at {bundle.resolution}, above the upsampler input "
                f"resolution {self.in_resolution}")
        style = styles.texture_styles[:, -1]

        rgb_lr = bundle.rgb_map()
        sem_lr = bundle.semantic_map()
        feat = torch.cat([bundle.color_feature_map(), sem_lr], dim=1)
        feat = _up(feat, self.in_resolution)

        x = feat
        for block in self.blocks:
            x = block(x, style)
        rgb_res = self.rgb_head(x)
        sem_res = self.semantic_head(x)

        image = (_up(rgb_lr, self.out_resolution) + rgb_res).clamp(-1.0, 1.0)
        semantic = _up(sem_lr, self.out_resolution) + sem_res
        return PortraitOutput(image=image, semantic=semantic,
                              rgb_lr=rgb_lr, semantic_lr=sem_lr)


def build_upsampler(model_cfg: ModelConfig, render_cfg: RenderConfig) -> Upsampler:
    return Upsampler(model_cfg, render_cfg.lr_resolution, render_cfg.output_resolution)
