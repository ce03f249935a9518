"""Image/mask encoders into the style space, plus multi-view-augmented training.

The semantic encoder maps a one-hot mask to the shape block (8 layers); the
texture encoder maps the RGB image to the texture block (10 layers) and two
extra outputs for yaw/pitch. A canonical-editor variant is the same network
trained only on renders from the fixed frontal camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import StyleCodes, lrelu
from .camera import CameraPose, pose_from_angles, poses_to_tensor
from .config import EncoderTrainConfig
from .data import one_hot_mask
from .errors import ConfigurationError, RejectedInputError
from .generator import Generator
from .losses import FeatureEmbedder
from .palette import NUM_CLASSES

YAW_LIMIT = math.pi / 2
PITCH_LIMIT = math.pi / 4


@dataclass
class EncodedState:
    shape_styles: torch.Tensor    # (B, 8, 512)
    texture_styles: torch.Tensor  # (B, 10, 512)
    yaw: torch.Tensor             # (B,)
    pitch: torch.Tensor           # (B,)

    def styles(self, shallow_layers: int = 8) -> StyleCodes:
        return StyleCodes(torch.cat([self.shape_styles, self.texture_styles], dim=1),
                          shallow_layers)


class _Pyramid(nn.Module):
    """Shared strided-conv pyramid with one style-query head per W+ layer."""

    def __init__(self, in_channels: int, num_layers: int, resolution: int,
                 style_dim: int = 512, base_channels: int = 32,
                 extra_outputs: int = 0, max_channels: int = 256):
        super().__init__()
        if resolution < 8 or resolution & (resolution - 1):
            raise ConfigurationError("encoder resolution must be a power of two >= 8")
        self.resolution = resolution
        self.from_input = nn.Conv2d(in_channels, base_channels, 1)
        convs = []
        ch = base_channels
        res = resolution
        while res > 4:
            nxt = min(ch * 2, max_channels)
            convs.append(nn.Conv2d(ch, nxt, 3, stride=2, padding=1))
            ch = nxt
            res //= 2
        self.convs = nn.ModuleList(convs)
        self.trunk = nn.Linear(ch * 16, 512)
        self.heads = nn.ModuleList([nn.Linear(512, style_dim) for _ in range(num_layers)])
        self.extra = nn.Linear(512, extra_outputs) if extra_outputs else None

    def forward(self, x: torch.Tensor):
        if x.shape[-1] != self.resolution:
            raise RejectedInputError(
                f"encoder expects {self.resolution}^2 input, got {x.shape[-1]}")
        x = lrelu(self.from_input(x))
        for conv in self.convs:
            x = lrelu(conv(x))
        feat = lrelu(self.trunk(x.flatten(1)))
        styles = torch.stack([head(feat) for head in self.heads], dim=1)
        if self.extra is None:
            return styles, None
        return styles, self.extra(feat)


class PortraitEncoder(nn.Module):
    """Dual encoder: one-hot mask -> shape styles, RGB -> texture styles + pose."""

    def __init__(self, resolution: int, shallow_layers: int = 8, deep_layers: int = 10,
                 base_channels: int = 32):
        super().__init__()
        self.resolution = resolution
        self.shallow_layers = shallow_layers
        self.deep_layers = deep_layers
        self.base_channels = base_channels
        self.semantic = _Pyramid(NUM_CLASSES, shallow_layers, resolution,
                                 base_channels=base_channels)
        self.texture = _Pyramid(3, deep_layers, resolution,
                                base_channels=base_channels, extra_outputs=2)

    def hparams(self) -> dict:
        return {"resolution": self.resolution, "shallow_layers": self.shallow_layers,
                "deep_layers": self.deep_layers, "base_channels": self.base_channels}

    def forward(self, image: torch.Tensor, mask: torch.Tensor) -> EncodedState:
        """image (B, 3, H, W) in [-1, 1]; mask is (B, H, W) indices or one-hot."""
        if image.ndim == 3:
            image = image.unsqueeze(0)
        if mask.ndim == 2:
            mask = mask.unsqueeze(0)
        if mask.dtype in (torch.int64, torch.int32, torch.uint8):
            if mask.max().item() >= NUM_CLASSES:
                raise RejectedInputError("mask contains class index >= 19")
            mask = one_hot_mask(mask.long())
        shape_styles, _ = self.semantic(mask.to(image.dtype))
        texture_styles, angles = self.texture(image)
        yaw = YAW_LIMIT * torch.tanh(angles[:, 0])
        pitch = PITCH_LIMIT * torch.tanh(angles[:, 1])
        return EncodedState(shape_styles, texture_styles, yaw, pitch)


# -- training -------------------------------------------------------------------


def _render_views(gen: Generator, styles: StyleCodes, cameras: list[CameraPose]):
    """Render one view per style row (no grad); returns HR image, LR maps."""
    with torch.no_grad():
        out, bundle = gen.render(styles, cameras)
    return out, bundle


@dataclass
class EncoderTrainResult:
    encoder: PortraitEncoder
    losses: list[dict]


def train_encoders(gen: Generator, cfg: EncoderTrainConfig,
                   pose_sampler=None, encoder: PortraitEncoder | None = None,
                   real_batches=None) -> EncoderTrainResult:
    """Fit encoders on generator samples with multi-view consistency.

    pose_sampler(rng) -> (yaw, pitch) draws training views; defaults to the
    generator's conditioning range. canonical_only trains the canonical-editor
    variant: every view is the fixed frontal camera and angle regression is
    dropped. k_aug_views = 0 reduces to single-view training (the consistency
    terms vanish).
    """
    if cfg.k_aug_views < 0:
        raise ConfigurationError("k_aug_views must be >= 0")
    gen.eval()
    gen.requires_grad_(False)
    rcfg = gen.render_cfg
    resolution = rcfg.output_resolution
    enc = encoder or PortraitEncoder(resolution, gen.model_cfg.shallow_layers,
                                     gen.model_cfg.deep_layers)
    opt = torch.optim.Adam(enc.parameters(), lr=cfg.lr)
    embedder = FeatureEmbedder()
    rng = np.random.default_rng(cfg.seed)
    torch_rng = torch.Generator().manual_seed(cfg.seed)

    def draw_pose():
        if cfg.canonical_only:
            return 0.0, 0.0
        if pose_sampler is not None:
            return pose_sampler(rng)
        return (rng.uniform(-0.6, 0.6), rng.uniform(-0.25, 0.25))

    k = 0 if cfg.canonical_only else cfg.k_aug_views
    views = k + 1
    history = []
    for step in range(cfg.steps):
        z = torch.randn(cfg.batch_size, gen.model_cfg.style_dim, generator=torch_rng)
        angle_pairs = [draw_pose() for _ in range(cfg.batch_size * views)]
        cameras = [pose_from_angles(y, p, radius=rcfg.camera_radius, focal=rcfg.focal)
                   for y, p in angle_pairs]
        cond = poses_to_tensor([cameras[i * views] for i in range(cfg.batch_size)])
        styles = gen.mapping(z, cond)
        rep = StyleCodes(styles.layers.repeat_interleave(views, dim=0))
        target_out, target_bundle = _render_views(gen, rep, cameras)
        target_mask_lr = target_bundle.semantic_map().argmax(dim=1)

        state = enc(target_out.image, target_out.semantic_mask())
        enc_styles = state.styles()

        loss = torch.zeros(())
        terms = {}
        # angle regression against the known render poses
        if not cfg.canonical_only:
            true = torch.tensor(angle_pairs, dtype=torch.float32)
            loss_ang = F.mse_loss(torch.stack([state.yaw, state.pitch], dim=1), true)
            loss = loss + cfg.w_angles * loss_ang
            terms["angles"] = float(loss_ang.detach())
        # latent consistency: the k+1 encodings of one identity agree
        if views > 1:
            grouped = enc_styles.layers.reshape(cfg.batch_size, views, 18, -1)
            mean = grouped.mean(dim=1, keepdim=True)
            loss_lat = (grouped - mean).square().mean()
            loss = loss + cfg.w_latent_consistency * loss_lat
            terms["latent_consistency"] = float(loss_lat.detach())

        # reconstructions from the encoded styles at the known views
        recon_bundle = gen.render_bundle(enc_styles, cameras)
        recon_rgb = recon_bundle.rgb_map()
        target_rgb = target_bundle.rgb_map()
        loss_img = F.mse_loss(recon_rgb, target_rgb)
        feats_recon = embedder(recon_rgb)
        loss_perc = (feats_recon - embedder(target_rgb)).square().mean()
        loss_mask = F.cross_entropy(recon_bundle.semantic_map(), target_mask_lr)
        loss = loss + cfg.w_image * loss_img + cfg.w_perceptual * loss_perc \
            + cfg.w_mask * loss_mask
        terms.update(image=float(loss_img.detach()), perceptual=float(loss_perc.detach()),
                     mask=float(loss_mask.detach()))

        # cross-view feature consistency on the reconstructions
        if views > 1:
            grouped_feats = feats_recon.reshape(cfg.batch_size, views, -1)
            loss_feat = (grouped_feats - grouped_feats.mean(dim=1, keepdim=True)).square().mean()
            loss = loss + cfg.w_feature_consistency * loss_feat
            terms["feature_consistency"] = float(loss_feat.detach())

        # optional real-data branch: reconstruction losses only
        if cfg.use_real_data and real_batches is not None:
            real_img, real_mask, _ = next(real_batches)
            real_state = enc(real_img, real_mask)
            real_bundle = gen.render_bundle(real_state.styles(), [
                pose_from_angles(float(y), float(p), radius=rcfg.camera_radius,
                                 focal=rcfg.focal)
                for y, p in zip(real_state.yaw.detach(), real_state.pitch.detach())])
            small = F.interpolate(real_img, size=real_bundle.rgb_map().shape[-2:],
                                  mode="bilinear", align_corners=False)
            loss_real = F.mse_loss(real_bundle.rgb_map(), small)
            loss = loss + cfg.w_image * loss_real
            terms["real_image"] = float(loss_real.detach())

        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        terms["total"] = float(loss.detach())
        terms["step"] = step
        history.append(terms)
    return EncoderTrainResult(enc, history)
