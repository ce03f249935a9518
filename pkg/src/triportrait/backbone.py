"""Style-modulated feature generator producing semantic and texture tri-planes.

The synthesis stack has 18 style slots: the first 8 modulate a shallow trunk
whose final feature map is reshaped into the semantic tri-plane, the last 10
modulate three parallel branches that each emit one texture plane. Texture
branches receive the same deep styles, so the trunk (and hence the semantic
planes) depends only on the shallow block.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .errors import ConfigurationError, RejectedInputError
from .field import TriPlane


class StyleCodes:
    """Per-layer style vectors; shape block = layers[:8], texture block = layers[8:]."""

    def __init__(self, layers: torch.Tensor, shallow_layers: int = 8):
        if layers.ndim == 2:
            layers = layers.unsqueeze(0)
        if layers.ndim != 3:
            raise RejectedInputError("style layers must be (B, L, D)")
        self.layers = layers
        self.shallow_layers = shallow_layers

    @property
    def shape_styles(self) -> torch.Tensor:
        return self.layers[:, : self.shallow_layers]

    @property
    def texture_styles(self) -> torch.Tensor:
        return self.layers[:, self.shallow_layers:]

    @property
    def batch(self) -> int:
        return self.layers.shape[0]

    def replaced(self, indices, values: torch.Tensor) -> "StyleCodes":
        """Copy with the given absolute layer indices overwritten."""
        layers = self.layers.clone()
        layers[:, list(indices)] = values
        return StyleCodes(layers, self.shallow_layers)

    def clone(self) -> "StyleCodes":
        return StyleCodes(self.layers.clone(), self.shallow_layers)


def lrelu(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, 0.2) * math.sqrt(2.0)


class MappingNetwork(nn.Module):
    """z + flattened camera conditioning -> broadcast W+ styles, with a
    truncation mean tracked as an EMA over mapped styles."""

    def __init__(self, cfg: ModelConfig, pose_dim: int = 25):
        super().__init__()
        self.cfg = cfg
        self.pose_embed = nn.Linear(pose_dim, cfg.style_dim)
        layers = []
        dim = 2 * cfg.style_dim
        for _ in range(cfg.mapping_layers):
            layers.append(nn.Linear(dim, cfg.mapping_hidden))
            dim = cfg.mapping_hidden
        self.layers = nn.ModuleList(layers)
        self.out = nn.Linear(dim, cfg.style_dim)
        self.register_buffer("w_mean", torch.zeros(cfg.style_dim))

    def forward(self, z: torch.Tensor, pose: torch.Tensor, truncation: float = 1.0,
                update_ema: bool = False) -> StyleCodes:
        if z.ndim == 1:
            z = z.unsqueeze(0)
        if pose.ndim == 1:
            pose = pose.unsqueeze(0)
        if z.shape[-1] != self.cfg.style_dim:
            raise RejectedInputError(f"latent must have {self.cfg.style_dim} entries")
        if not torch.isfinite(z).all():
            raise RejectedInputError("latent contains non-finite values")
        if not torch.isfinite(pose).all():
            raise RejectedInputError("camera conditioning contains non-finite values")

        z = z * (z.square().mean(dim=-1, keepdim=True) + 1e-8).rsqrt()
        c = self.pose_embed(pose.to(z.dtype))
        c = c * (c.square().mean(dim=-1, keepdim=True) + 1e-8).rsqrt()
        x = torch.cat([z, c], dim=-1)
        for layer in self.layers:
            x = lrelu(layer(x))
        w = self.out(x)

        if update_ema:
            with torch.no_grad():
                self.w_mean.lerp_(w.detach().mean(dim=0), 1.0 - self.cfg.w_ema_decay)

        if truncation != 1.0:
            w = self.w_mean.to(w.dtype) + truncation * (w - self.w_mean.to(w.dtype))
        styles = w.unsqueeze(1).repeat(1, self.cfg.num_style_layers, 1)
        return StyleCodes(styles, self.cfg.shallow_layers)


class ModulatedConv2d(nn.Module):
    """StyleGAN2-style weight modulation/demodulation, no per-pixel noise."""

    def __init__(self, in_ch: int, out_ch: int, style_dim: int, kernel: int = 3,
                 demodulate: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel)
                                   / math.sqrt(in_ch * kernel * kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.affine = nn.Linear(style_dim, in_ch)
        with torch.no_grad():
            self.affine.weight.mul_(1.0 / math.sqrt(style_dim))
            self.affine.bias.fill_(1.0)
        self.demodulate = demodulate
        self.padding = kernel // 2

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        b, in_ch, h, w_sz = x.shape
        s = self.affine(style)  # (B, in)
        w = self.weight.unsqueeze(0) * s.reshape(b, 1, in_ch, 1, 1)
        if self.demodulate:
            d = (w.square().sum(dim=[2, 3, 4]) + 1e-8).rsqrt()
            w = w * d.reshape(b, -1, 1, 1, 1)
        x = x.reshape(1, b * in_ch, h, w_sz)
        w = w.reshape(-1, in_ch, *self.weight.shape[2:])
        x = F.conv2d(x, w, padding=self.padding, groups=b)
        x = x.reshape(b, -1, h, w_sz)
        return x + self.bias.reshape(1, -1, 1, 1)


class SynthesisBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, style_dim: int, upsample: bool = False):
        super().__init__()
        self.upsample = upsample
        self.conv = ModulatedConv2d(in_ch, out_ch, style_dim)

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return lrelu(self.conv(x, style))


class FeatureGenerator(nn.Module):
    """Trunk (shallow styles) + three texture branches (deep styles)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.const = nn.Parameter(torch.randn(cfg.trunk_channels, 4, 4))

        trunk_up = int(math.log2(cfg.trunk_resolution // 4))
        if trunk_up > cfg.shallow_layers:
            raise ConfigurationError("trunk resolution too large for the shallow block")
        self.trunk = nn.ModuleList()
        in_ch = cfg.trunk_channels
        for i in range(cfg.shallow_layers):
            out_ch = 3 * cfg.semantic_channels if i == cfg.shallow_layers - 1 else cfg.trunk_channels
            self.trunk.append(SynthesisBlock(in_ch, out_ch, cfg.style_dim, upsample=i < trunk_up))
            in_ch = out_ch

        branch_up = int(math.log2(cfg.plane_resolution // cfg.trunk_resolution))
        deep = cfg.deep_layers
        if branch_up > deep:
            raise ConfigurationError("plane resolution too large for the deep block")
        self.branches = nn.ModuleList()
        for _ in range(3):
            blocks = nn.ModuleList()
            in_ch = 3 * cfg.semantic_channels
            for j in range(deep):
                out_ch = cfg.texture_channels if j == deep - 1 else cfg.branch_channels
                blocks.append(SynthesisBlock(in_ch, out_ch, cfg.style_dim, upsample=j < branch_up))
                in_ch = out_ch
            self.branches.append(blocks)

    def forward(self, styles: StyleCodes,
                branch_styles: list[torch.Tensor] | None = None) -> tuple[TriPlane, TriPlane]:
        """Returns (semantic planes, texture planes).

        branch_styles is a test hook giving each texture branch its own
        (B, deep, style_dim) block; production passes None and all branches
        share the texture block.
        """
        cfg = self.cfg
        if styles.layers.shape[1] != cfg.num_style_layers:
            raise ConfigurationError(
                f"expected {cfg.num_style_layers} style layers, got {styles.layers.shape[1]}")
        b = styles.batch
        x = self.const.unsqueeze(0).expand(b, -1, -1, -1).to(styles.layers.dtype)
        shallow = styles.shape_styles
        for i, block in enumerate(self.trunk):
            x = block(x, shallow[:, i])
        shared = x  # (B, 3*Cs, R, R)
        semantic = shared.reshape(b, 3, cfg.semantic_channels,
                                  cfg.trunk_resolution, cfg.trunk_resolution)

        if branch_styles is None:
            branch_styles = [styles.texture_styles] * 3
        if len(branch_styles) != 3:
            raise ConfigurationError("branch_styles must supply one block per branch")
        planes = []
        for blocks, deep_styles in zip(self.branches, branch_styles):
            if deep_styles.shape[1] != cfg.deep_layers:
                raise ConfigurationError(
                    f"branch styles must have {cfg.deep_layers} layers")
            y = shared
            for j, block in enumerate(blocks):
                y = block(y, deep_styles[:, j])
            planes.append(y)
        texture = torch.stack(planes, dim=1)  # (B, 3, Ct, Rp, Rp)
        return (TriPlane(semantic, kind="semantic"), TriPlane(texture, kind="texture"))
