"""Dual-branch discriminator over paired HR/LR images and semantic maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import lrelu
from .config import ModelConfig
from .errors import ConfigurationError


@dataclass
class DualInput:
    """(I_h, resized I_l', S_h, resized S_l') plus the conditioning pose.

    Semantic maps are simplex-valued: one-hot for real data, softmax for
    generated logits, so both sides share a format.
    """

    image_hr: torch.Tensor           # (B, 3, H, H)
    image_lr_resized: torch.Tensor   # (B, 3, H, H)
    semantic_hr: torch.Tensor        # (B, 19, H, H)
    semantic_lr_resized: torch.Tensor
    pose: torch.Tensor               # (B, 25)

    def __post_init__(self):
        h = self.image_hr.shape[-1]
        for t in (self.image_lr_resized, self.semantic_hr, self.semantic_lr_resized):
            if t.shape[-1] != h or t.shape[-2] != h:
                raise ConfigurationError("all dual-input maps must share the HR size")
        if self.image_hr.shape[1] != 3 or self.semantic_hr.shape[1] != 19:
            raise ConfigurationError("dual input expects 3 RGB and 19 semantic channels")

    def rgb_stack(self) -> torch.Tensor:
        return torch.cat([self.image_hr, self.image_lr_resized], dim=1)

    def semantic_stack(self) -> torch.Tensor:
        return torch.cat([self.semantic_hr, self.semantic_lr_resized], dim=1)

    def requires_grad_(self) -> "DualInput":
        for t in (self.image_hr, self.image_lr_resized,
                  self.semantic_hr, self.semantic_lr_resized):
            t.requires_grad_(True)
        return self


def _resize(x: torch.Tensor, size: int) -> torch.Tensor:
    if x.shape[-1] == size:
        return x
    return F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)


def dual_input_from_fake(output, pose: torch.Tensor) -> DualInput:
    """Wrap a PortraitOutput: LR maps resized to HR, logits softmaxed."""
    size = output.image.shape[-1]
    return DualInput(
        image_hr=output.image,
        image_lr_resized=_resize(output.rgb_lr, size),
        semantic_hr=F.softmax(output.semantic, dim=1),
        semantic_lr_resized=_resize(F.softmax(output.semantic_lr, dim=1), size),
        pose=pose,
    )


def dual_input_from_real(image: torch.Tensor, one_hot: torch.Tensor,
                         pose: torch.Tensor, lr_size: int,
                         label_smoothing: float = 0.0) -> DualInput:
    """Real pair: the LR channels are a downsample/upsample round trip.

    label_smoothing > 0 mixes the one-hot maps toward uniform on the real side
    only, which keeps the sharpness of real and generated semantic maps in the
    same reachable range (one-hot maps are otherwise trivially separable from
    softmaxed logits).
    """
    size = image.shape[-1]
    k = one_hot.shape[1]
    sem = one_hot if label_smoothing <= 0 else \
        (1.0 - label_smoothing) * one_hot + label_smoothing / k
    return DualInput(
        image_hr=image,
        image_lr_resized=_resize(_resize(image, lr_size), size),
        semantic_hr=sem,
        semantic_lr_resized=_resize(_resize(sem, lr_size), size),
        pose=pose,
    )


class EqualConv2d(nn.Module):
    """Conv with unit-variance weights scaled at runtime (equalized LR).

    Keeps effective per-layer step sizes uniform under Adam; without it the
    discriminator's activations and R1 gradients blow up at desk scale.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int = 0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.stride = stride
        self.padding = padding

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(x, self.weight * self.scale, self.bias,
                        stride=self.stride, padding=self.padding)


class EqualLinear(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.scale = 1.0 / math.sqrt(in_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.weight * self.scale, self.bias)


class MinibatchStd(nn.Module):
    """Appends the batch-wide feature standard deviation as one channel.

    The statistic pools the whole batch (no sub-grouping) so per-sample
    outputs are equivariant under batch permutation.
    """

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[0] == 1:
            std = x.new_zeros(1)
        else:
            std = x.std(dim=0, unbiased=False).mean().reshape(1)
        feat = std.reshape(1, 1, 1, 1).expand(x.shape[0], 1, *x.shape[2:])
        return torch.cat([x, feat], dim=1)


class DiscriminatorBranch(nn.Module):
    """Conv pyramid to 4x4 with a minibatch-std layer, ending in one linear
    feature projection (the branch's "final projection")."""

    def __init__(self, in_channels: int, resolution: int, base_channels: int,
                 feature_dim: int, max_channels: int = 256):
        super().__init__()
        if resolution < 8 or resolution & (resolution - 1):
            raise ConfigurationError("branch resolution must be a power of two >= 8")
        self.from_input = EqualConv2d(in_channels, base_channels, 1)
        convs = []
        ch = base_channels
        res = resolution
        while res > 4:
            nxt = min(ch * 2, max_channels)
            convs.append(EqualConv2d(ch, nxt, 3, stride=2, padding=1))
            ch = nxt
            res //= 2
        self.convs = nn.ModuleList(convs)
        self.mbstd = MinibatchStd()
        self.post = EqualConv2d(ch + 1, ch, 3, padding=1)
        self.project = EqualLinear(ch * 16, feature_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = lrelu(self.from_input(x))
        for conv in self.convs:
            x = lrelu(conv(x))
        x = lrelu(self.post(self.mbstd(x)))
        return self.project(x.flatten(1))


class DualDiscriminator(nn.Module):
    """Independent RGB and semantic branches, pose-conditioned linear head.

    The head is strictly linear over the concatenated branch/pose features:
    the image-gradient penalty is then exactly independent of the semantic
    inputs (and vice versa), which is what lets the R1 terms split cleanly.
    """

    def __init__(self, cfg: ModelConfig, resolution: int,
                 base_channels: int = 64, feature_dim: int = 128):
        super().__init__()
        self.resolution = resolution
        self.rgb_branch = DiscriminatorBranch(6, resolution, base_channels, feature_dim)
        self.semantic_branch = DiscriminatorBranch(2 * cfg.semantic_classes, resolution,
                                                   base_channels, feature_dim)
        self.pose_embed = EqualLinear(25, feature_dim)
        self.head = EqualLinear(3 * feature_dim, 1)

    def forward(self, dual: DualInput) -> torch.Tensor:
        if dual.image_hr.shape[-1] != self.resolution:
            raise ConfigurationError(
                f"discriminator built for {self.resolution}, got {dual.image_hr.shape[-1]}")
        f_rgb = self.rgb_branch(dual.rgb_stack())
        f_sem = self.semantic_branch(dual.semantic_stack())
        f_pose = lrelu(self.pose_embed(dual.pose.to(f_rgb.dtype)))
        return self.head(torch.cat([f_rgb, f_sem, f_pose], dim=1)).squeeze(1)
