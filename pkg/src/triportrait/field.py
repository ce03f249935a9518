"""Tri-plane neural field: feature sampling, dual decoders and volume rendering.

Points live in the [-1, 1]^3 cube. A point's feature is the sum of bilinear
samples from the three axis-aligned planes (XY, XZ, YZ). One decoder maps
semantic features to volume density plus 19 semantic logits, the other maps
texture features to a 32-channel color feature whose first three channels are
the low-resolution RGB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig, RenderConfig
from .errors import ConfigurationError, RejectedInputError


@dataclass
class TriPlane:
    """Three axis-aligned feature grids, (B, 3, C, R, R)."""

    planes: torch.Tensor
    kind: str  # "semantic" | "texture"

    def __post_init__(self):
        if self.planes.ndim == 4:
            self.planes = self.planes.unsqueeze(0)
        if self.planes.ndim != 5 or self.planes.shape[1] != 3:
            raise ConfigurationError("tri-plane tensor must be (B, 3, C, R, R)")
        if self.planes.shape[-1] != self.planes.shape[-2]:
            raise ConfigurationError("tri-plane grids must be square")
        if self.kind not in ("semantic", "texture"):
            raise ConfigurationError(f"unknown tri-plane kind: {self.kind}")

    @property
    def channels(self) -> int:
        return self.planes.shape[2]

    @property
    def resolution(self) -> int:
        return self.planes.shape[-1]

    @property
    def batch(self) -> int:
        return self.planes.shape[0]


# Per-plane coordinate picks: XY reads (x, y), XZ reads (x, z), YZ reads (y, z).
_PLANE_AXES = ((0, 1), (0, 2), (1, 2))


def _bilinear_plane(plane: torch.Tensor, uv: torch.Tensor) -> torch.Tensor:
    """Bilinear sample one plane. plane (B, C, R, R), uv (B, M, 2) in [-1, 1].

    Grid nodes sit at coordinates linspace(-1, 1, R) along each axis
    (align-corners convention); uv is clamped to the grid.
    """
    b, c, r, _ = plane.shape
    g = (uv.clamp(-1.0, 1.0) + 1.0) * 0.5 * (r - 1)
    g0 = g.floor().clamp(max=r - 2)
    frac = g - g0
    g0 = g0.long()
    i0, j0 = g0[..., 0], g0[..., 1]
    fi, fj = frac[..., 0:1], frac[..., 1:2]

    flat = plane.reshape(b, c, r * r)

    def take(ii, jj):
        idx = (ii * r + jj).unsqueeze(1).expand(-1, c, -1)  # (B, C, M)
        return torch.gather(flat, 2, idx).permute(0, 2, 1)  # (B, M, C)

    v00 = take(i0, j0)
    v01 = take(i0, j0 + 1)
    v10 = take(i0 + 1, j0)
    v11 = take(i0 + 1, j0 + 1)
    top = v00 * (1 - fj) + v01 * fj
    bot = v10 * (1 - fj) + v11 * fj
    return top * (1 - fi) + bot * fi


def sample_triplane(plane_set: TriPlane, points: torch.Tensor) -> torch.Tensor:
    """Sample summed plane features at 3D points.

    points: (M, 3) or (B, M, 3); out-of-cube coordinates clamp to the cube
    surface. Returns (B, M, C) (or (M, C) for unbatched input).
    """
    squeeze = points.ndim == 2
    if squeeze:
        points = points.unsqueeze(0)
    if points.shape[0] != plane_set.batch:
        if plane_set.batch == 1:
            pass  # broadcast single plane set over point batches
        else:
            raise ConfigurationError("point batch does not match plane batch")
    planes = plane_set.planes
    if planes.shape[0] == 1 and points.shape[0] > 1:
        planes = planes.expand(points.shape[0], -1, -1, -1, -1)
    out = 0.0
    for k, (a0, a1) in enumerate(_PLANE_AXES):
        uv = torch.stack([points[..., a0], points[..., a1]], dim=-1)
        out = out + _bilinear_plane(planes[:, k], uv)
    return out.squeeze(0) if squeeze else out


class FieldSamples(NamedTuple):
    sigma: torch.Tensor            # (..., )
    semantic_logits: torch.Tensor  # (..., 19)
    color_feature: torch.Tensor    # (..., 32)


class SemanticFieldDecoder(nn.Module):
    """Semantic plane features -> (density, semantic logits)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.hidden = nn.Linear(cfg.semantic_channels, cfg.decoder_hidden)
        self.out = nn.Linear(cfg.decoder_hidden, 1 + cfg.semantic_classes)
        with torch.no_grad():
            self.out.bias[0] = cfg.density_bias_init  # start near-transparent

    def forward(self, feat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = F.softplus(self.hidden(feat))
        o = self.out(h)
        sigma = F.softplus(o[..., 0])
        return sigma, o[..., 1:]


class TextureFieldDecoder(nn.Module):
    """Texture plane features -> 32-channel color feature.

    The first three channels are squashed into [-1, 1] (the LR RGB); the
    remaining channels stay unbounded.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.hidden = nn.Linear(cfg.texture_channels, cfg.decoder_hidden)
        self.out = nn.Linear(cfg.decoder_hidden, cfg.color_feature_dim)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        h = F.softplus(self.hidden(feat))
        o = self.out(h)
        rgb = 2.0 * torch.sigmoid(o[..., :3]) - 1.0
        return torch.cat([rgb, o[..., 3:]], dim=-1)


@dataclass
class RayBatch:
    origins: torch.Tensor      # (N, 3) or (B, N, 3)
    directions: torch.Tensor   # unit vectors, same shape
    near: float
    far: float
    coarse_count: int
    fine_count: int = 0
    resolution: int | None = None  # set when rays form a square image

    def __post_init__(self):
        if self.origins.ndim == 2:
            self.origins = self.origins.unsqueeze(0)
            self.directions = self.directions.unsqueeze(0)
        if self.origins.shape != self.directions.shape or self.origins.shape[-1] != 3:
            raise RejectedInputError("ray origins/directions must be matching (B, N, 3)")
        if self.near >= self.far:
            raise RejectedInputError("degenerate ray batch: near must be < far")
        if self.coarse_count < 1 or self.fine_count < 0:
            raise RejectedInputError("sample counts must be >= 1 coarse, >= 0 fine")
        norms = self.directions.norm(dim=-1)
        if (norms - 1.0).abs().max() > 1e-5:
            raise RejectedInputError("ray directions must be unit vectors")

    @property
    def count(self) -> int:
        return self.origins.shape[1]


@dataclass
class RenderBundle:
    """Flat per-ray render outputs; `resolution` says how to grid them."""

    color_feature: torch.Tensor   # (B, N, 32)
    semantic: torch.Tensor        # (B, N, 19)
    depth: torch.Tensor           # (B, N)
    weight_sum: torch.Tensor      # (B, N)
    resolution: int | None = None
    fine_points: torch.Tensor | None = None  # (B, M, 3) importance-sampled points

    @property
    def rgb(self) -> torch.Tensor:
        """First three color-feature channels, by construction the LR RGB."""
        return self.color_feature[..., :3]

    def _grid(self, flat: torch.Tensor) -> torch.Tensor:
        if self.resolution is None:
            raise ConfigurationError("bundle has no image resolution")
        r = self.resolution
        b = flat.shape[0]
        if flat.ndim == 2:
            return flat.reshape(b, r, r)
        return flat.reshape(b, r, r, -1).permute(0, 3, 1, 2)

    def color_feature_map(self) -> torch.Tensor:
        return self._grid(self.color_feature)

    def semantic_map(self) -> torch.Tensor:
        return self._grid(self.semantic)

    def rgb_map(self) -> torch.Tensor:
        return self._grid(self.rgb)

    def depth_map(self) -> torch.Tensor:
        return self._grid(self.depth)


def _sample_pdf(edges: torch.Tensor, weights: torch.Tensor, count: int,
                stratified: bool, generator=None) -> torch.Tensor:
    """Inverse-CDF draw of `count` depths per ray from a bin histogram.

    edges (B, N, S+1), weights (B, N, S) -> (B, N, count).
    """
    w = weights.detach() + 1e-5
    pdf = w / w.sum(dim=-1, keepdim=True)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)  # (B, N, S+1)

    if stratified:
        u = torch.rand(*cdf.shape[:-1], count, dtype=cdf.dtype, generator=generator)
    else:
        u = (torch.arange(count, dtype=cdf.dtype) + 0.5) / count
        u = u.expand(*cdf.shape[:-1], count).contiguous()

    idx = torch.searchsorted(cdf, u, right=True).clamp(1, cdf.shape[-1] - 1)
    lo = torch.gather(cdf, -1, idx - 1)
    hi = torch.gather(cdf, -1, idx)
    denom = (hi - lo).clamp_min(1e-10)
    frac = (u - lo) / denom
    e_lo = torch.gather(edges, -1, idx - 1)
    e_hi = torch.gather(edges, -1, idx)
    return e_lo + frac * (e_hi - e_lo)


class NeuralField(nn.Module):
    """Decoders plus the learned background feature; renders ray batches."""

    def __init__(self, model_cfg: ModelConfig, render_cfg: RenderConfig):
        super().__init__()
        self.cfg = model_cfg
        self.render_cfg = render_cfg
        self.semantic_decoder = SemanticFieldDecoder(model_cfg)
        self.texture_decoder = TextureFieldDecoder(model_cfg)
        self.background = nn.Parameter(torch.zeros(model_cfg.color_feature_dim))

    def background_feature(self) -> torch.Tensor:
        """Background color feature with the RGB channels squashed to [-1, 1]."""
        rgb = 2.0 * torch.sigmoid(self.background[:3]) - 1.0
        return torch.cat([rgb, self.background[3:]])

    def density(self, planes_s: TriPlane, points: torch.Tensor) -> torch.Tensor:
        feat = sample_triplane(planes_s, points)
        sigma, _ = self.semantic_decoder(feat)
        return sigma

    def decode_points(self, planes_s: TriPlane, planes_t: TriPlane,
                      points: torch.Tensor,
                      texture_overrides: list[tuple[torch.Tensor, TriPlane]] | None = None,
                      blend_band: float = 0.0) -> FieldSamples:
        """Decode density/semantics/color at points.

        texture_overrides replaces the color of 3D points whose semantic
        argmax falls in an override's class set with a query into that
        override's texture planes. Density and semantics always come from the
        original planes. blend_band > 0 linearly blends near class boundaries
        (measured as the semantic logit margin); 0 keeps the hard argmax
        switch.
        """
        clamped = points.clamp(-1.0, 1.0)
        sigma, logits = self.semantic_decoder(sample_triplane(planes_s, clamped))
        color = self.texture_decoder(sample_triplane(planes_t, clamped))
        if texture_overrides:
            for class_vec, alt_planes in texture_overrides:
                alt_color = self.texture_decoder(sample_triplane(alt_planes, clamped))
                inside = class_vec.to(torch.bool)
                if inside.all():
                    color = alt_color
                    continue
                member = logits[..., inside].max(dim=-1).values
                other = logits[..., ~inside].max(dim=-1).values
                margin = member - other
                if blend_band > 0:
                    alpha = (margin / (2.0 * blend_band) + 0.5).clamp(0.0, 1.0)
                    color = color + alpha.unsqueeze(-1) * (alt_color - color)
                else:
                    # hard argmax switch, bitwise-exact outside the member set
                    color = torch.where((margin > 0).unsqueeze(-1), alt_color, color)
        return FieldSamples(sigma, logits, color)

    def _coarse_depths(self, rays: RayBatch, dtype, stratified, generator):
        b, n = rays.origins.shape[:2]
        s = rays.coarse_count
        edges = torch.linspace(rays.near, rays.far, s + 1, dtype=dtype)
        edges = edges.expand(b, n, s + 1)
        if stratified:
            u = torch.rand(b, n, s, dtype=dtype, generator=generator)
        else:
            u = torch.full((b, n, s), 0.5, dtype=dtype)
        return edges[..., :-1] + u * (edges[..., 1:] - edges[..., :-1]), edges

    @staticmethod
    def _composite(sigma: torch.Tensor, t: torch.Tensor, far: float):
        """Emission-absorption weights for samples at depths t (B, N, S)."""
        delta = torch.cat([t[..., 1:] - t[..., :-1], far - t[..., -1:]], dim=-1)
        tau = sigma * delta
        trans = torch.exp(-torch.cumsum(
            torch.cat([torch.zeros_like(tau[..., :1]), tau[..., :-1]], dim=-1), dim=-1))
        alpha = 1.0 - torch.exp(-tau)
        weights = trans * alpha
        return weights

    def render_rays(self, planes_s: TriPlane, planes_t: TriPlane, rays: RayBatch,
                    stratified: bool = False, generator=None,
                    texture_overrides: list[tuple[torch.Tensor, TriPlane]] | None = None,
                    blend_band: float = 0.0) -> RenderBundle:
        """Hierarchically sample and composite color features and semantics."""
        dtype = planes_s.planes.dtype
        o = rays.origins.to(dtype)
        d = rays.directions.to(dtype)

        t_coarse, edges = self._coarse_depths(rays, dtype, stratified, generator)
        fine_points = None
        if rays.fine_count > 0:
            pts = o.unsqueeze(2) + t_coarse.unsqueeze(-1) * d.unsqueeze(2)
            sigma_c = self.density(planes_s, pts.reshape(pts.shape[0], -1, 3))
            sigma_c = sigma_c.reshape(t_coarse.shape)
            w_c = self._composite(sigma_c, t_coarse, rays.far)
            t_fine = _sample_pdf(edges, w_c, rays.fine_count, stratified, generator)
            fine_points = o.unsqueeze(2) + t_fine.unsqueeze(-1) * d.unsqueeze(2)
            t_all, _ = torch.sort(torch.cat([t_coarse, t_fine], dim=-1), dim=-1)
        else:
            t_all = t_coarse

        pts = o.unsqueeze(2) + t_all.unsqueeze(-1) * d.unsqueeze(2)
        flat = pts.reshape(pts.shape[0], -1, 3)
        samples = self.decode_points(planes_s, planes_t, flat,
                                     texture_overrides=texture_overrides,
                                     blend_band=blend_band)
        b, n, s = t_all.shape
        sigma = samples.sigma.reshape(b, n, s)
        logits = samples.semantic_logits.reshape(b, n, s, -1)
        color = samples.color_feature.reshape(b, n, s, -1)

        weights = self._composite(sigma, t_all, rays.far)
        weight_sum = weights.sum(dim=-1)
        residual = (1.0 - weight_sum).unsqueeze(-1)

        bg = self.background_feature().to(dtype)
        color_out = (weights.unsqueeze(-1) * color).sum(dim=-2) + residual * bg
        # empty space decays to all-zero logits; argmax tie-break selects class 0
        sem_out = (weights.unsqueeze(-1) * logits).sum(dim=-2)
        depth = (weights * t_all).sum(dim=-1) + residual.squeeze(-1) * rays.far

        if fine_points is not None:
            fine_points = fine_points.reshape(b, -1, 3)
        return RenderBundle(color_out, sem_out, depth, weight_sum,
                            resolution=rays.resolution, fine_points=fine_points)

    def density_discontinuity(self, planes_s: TriPlane, fine_points: torch.Tensor,
                              epsilon_scale: float, generator=None) -> torch.Tensor:
        """Mean |density(x) - density(x + eps)| over perturbations in a ball.

        Differentiable w.r.t. the semantic planes; used both as the training
        regularizer and as the evaluation statistic.
        """
        if epsilon_scale <= 0:
            raise ConfigurationError("epsilon_scale must be positive")
        if fine_points.ndim == 2:
            fine_points = fine_points.unsqueeze(0)
        dtype = fine_points.dtype
        direction = torch.randn(fine_points.shape, dtype=dtype, generator=generator)
        direction = direction / direction.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        radius = torch.rand(fine_points.shape[:-1], dtype=dtype, generator=generator)
        eps = direction * (radius.pow(1.0 / 3.0) * epsilon_scale).unsqueeze(-1)
        d0 = self.density(planes_s, fine_points)
        d1 = self.density(planes_s, fine_points + eps)
        return (d0 - d1).abs().mean()

    def query_semantics(self, planes_s: TriPlane, points: torch.Tensor) -> torch.Tensor:
        """Per-point class labels; exact ties resolve to the lowest index."""
        feat = sample_triplane(planes_s, points.clamp(-1.0, 1.0))
        _, logits = self.semantic_decoder(feat)
        return logits.argmax(dim=-1)


def density_regularization(field: NeuralField, planes_s: TriPlane,
                           fine_points: torch.Tensor, epsilon_scale: float,
                           generator=None) -> torch.Tensor:
    return field.density_discontinuity(planes_s, fine_points, epsilon_scale, generator)


def mesh_iso_level(render_cfg: RenderConfig) -> float:
    """Density at which one mean-spacing ray step absorbs half the light."""
    spacing = (render_cfg.far - render_cfg.near) / max(
        1, render_cfg.coarse_samples + render_cfg.fine_samples)
    return math.log(2.0) / spacing
