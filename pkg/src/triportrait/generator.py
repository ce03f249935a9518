"""Full generator stack: mapping -> tri-planes -> volume render -> upsample."""

from __future__ import annotations

import torch
from torch import nn

from .backbone import FeatureGenerator, MappingNetwork, StyleCodes
from .camera import CameraPose, poses_to_tensor, rays_for_camera
from .config import ModelConfig, RenderConfig
from .field import NeuralField, RayBatch, RenderBundle, TriPlane
from .superres import PortraitOutput, build_upsampler


def ray_batch_for_cameras(cameras: CameraPose | list[CameraPose], render_cfg: RenderConfig,
                          resolution: int | None = None,
                          dtype: torch.dtype = torch.float32) -> RayBatch:
    if isinstance(cameras, CameraPose):
        cameras = [cameras]
    res = resolution or render_cfg.lr_resolution
    origins, dirs = [], []
    for cam in cameras:
        o, d = rays_for_camera(cam, res, dtype=dtype)
        origins.append(o)
        dirs.append(d)
    return RayBatch(torch.stack(origins), torch.stack(dirs),
                    near=render_cfg.near, far=render_cfg.far,
                    coarse_count=render_cfg.coarse_samples,
                    fine_count=render_cfg.fine_samples,
                    resolution=res)


class Generator(nn.Module):
    """Semantic-aware 3D portrait generator."""

    def __init__(self, model_cfg: ModelConfig, render_cfg: RenderConfig):
        super().__init__()
        model_cfg.validate()
        render_cfg.validate()
        self.model_cfg = model_cfg
        self.render_cfg = render_cfg
        self.mapping = MappingNetwork(model_cfg)
        self.backbone = FeatureGenerator(model_cfg)
        self.field = NeuralField(model_cfg, render_cfg)
        self.superres = build_upsampler(model_cfg, render_cfg)

    # -- latent plumbing -----------------------------------------------------

    def map_latent(self, z: torch.Tensor, conditioning: CameraPose | torch.Tensor,
                   truncation: float = 1.0, update_ema: bool = False) -> StyleCodes:
        if isinstance(conditioning, CameraPose):
            conditioning = poses_to_tensor([conditioning], dtype=z.dtype)
        return self.mapping(z, conditioning, truncation=truncation, update_ema=update_ema)

    def generate_planes(self, styles: StyleCodes,
                        branch_styles=None) -> tuple[TriPlane, TriPlane]:
        return self.backbone(styles, branch_styles=branch_styles)

    # -- rendering -----------------------------------------------------------

    def render_bundle(self, styles: StyleCodes, cameras, lr_resolution: int | None = None,
                      stratified: bool = False, generator=None,
                      planes: tuple[TriPlane, TriPlane] | None = None,
                      texture_overrides=None, blend_band: float = 0.0) -> RenderBundle:
        planes_s, planes_t = planes if planes is not None else self.generate_planes(styles)
        rays = ray_batch_for_cameras(cameras, self.render_cfg, resolution=lr_resolution,
                                     dtype=styles.layers.dtype)
        return self.field.render_rays(planes_s, planes_t, rays, stratified=stratified,
                                      generator=generator, texture_overrides=texture_overrides,
                                      blend_band=blend_band)

    def render(self, styles: StyleCodes, cameras, lr_resolution: int | None = None,
               stratified: bool = False, generator=None,
               texture_overrides=None, blend_band: float = 0.0
               ) -> tuple[PortraitOutput, RenderBundle]:
        bundle = self.render_bundle(styles, cameras, lr_resolution=lr_resolution,
                                    stratified=stratified, generator=generator,
                                    texture_overrides=texture_overrides,
                                    blend_band=blend_band)
        return self.superres(bundle, styles), bundle

    def synthesize(self, z: torch.Tensor, conditioning: CameraPose, camera: CameraPose,
                   truncation: float = 1.0, stratified: bool = False,
                   generator=None, update_ema: bool = False) -> PortraitOutput:
        styles = self.map_latent(z, conditioning, truncation=truncation, update_ema=update_ema)
        out, _ = self.render(styles, camera, stratified=stratified, generator=generator)
        return out
