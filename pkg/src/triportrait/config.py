"""Dataclass configs for the generator, renderer, training and inversion."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ModelConfig:
    """Shape of the generator stack (backbone, decoders, upsampler)."""

    style_dim: int = 512
    num_style_layers: int = 18      # 8 shallow (shape) + 10 deep (texture)
    shallow_layers: int = 8
    semantic_channels: int = 32     # per-plane channels of the semantic tri-plane
    texture_channels: int = 32      # per-plane channels of the texture tri-plane
    semantic_classes: int = 19
    color_feature_dim: int = 32
    trunk_resolution: int = 64      # spatial size of the shallow trunk output
    plane_resolution: int = 128     # spatial size of each texture plane (>= trunk)
    trunk_channels: int = 64
    branch_channels: int = 64
    mapping_layers: int = 2
    mapping_hidden: int = 512
    w_ema_decay: float = 0.995
    decoder_hidden: int = 64
    density_bias_init: float = -1.0
    superres_channels: int = 64

    @property
    def deep_layers(self) -> int:
        return self.num_style_layers - self.shallow_layers

    def validate(self) -> None:
        if self.num_style_layers != self.shallow_layers + self.deep_layers:
            raise ValueError("inconsistent layer split")
        if self.plane_resolution < self.trunk_resolution:
            raise ValueError("texture planes must be at least trunk resolution")
        ratio = self.plane_resolution // self.trunk_resolution
        if ratio * self.trunk_resolution != self.plane_resolution or ratio & (ratio - 1):
            raise ValueError("plane/trunk resolution ratio must be a power of two")


@dataclass
class RenderConfig:
    """Camera rig and volume rendering knobs."""

    lr_resolution: int = 32         # neural rendering resolution (H_l == W_l)
    output_resolution: int = 64     # final image resolution after upsampling
    coarse_samples: int = 48
    fine_samples: int = 48
    camera_radius: float = 2.7
    focal: float = 1.9              # normalized pinhole focal length
    near: float = 1.5
    far: float = 3.9
    epsilon_scale: float = 0.008    # 0.4% of the cube side (2.0)

    def validate(self) -> None:
        if self.near >= self.far:
            raise ValueError("near must be < far")
        if self.output_resolution < self.lr_resolution:
            raise ValueError("output resolution must be >= neural rendering resolution")
        ratio = self.output_resolution // self.lr_resolution
        if ratio * self.lr_resolution != self.output_resolution or ratio & (ratio - 1):
            raise ValueError("output/lr resolution ratio must be a power of two")


@dataclass
class TrainConfig:
    lr_generator: float = 0.0025
    lr_discriminator: float = 0.002
    batch_size: int = 8
    gamma_image: float = 2.0        # R1 weight on the RGB branch inputs
    gamma_semantic: float = 200.0   # R1 weight on the semantic branch inputs
    lambda_density: float = 0.25
    epsilon_scale: float = 0.008
    pose_swap_prob: float = 0.5
    r1_interval: int = 16
    # desk-scale stabilizers: annealed instance noise on the discriminator's
    # image inputs, one-sided label smoothing on the real semantic maps
    instance_noise: float = 0.1
    instance_noise_anneal_steps: int = 500
    semantic_label_smoothing: float = 0.25
    # list of (neural rendering resolution, images seen) stages
    stage_schedule: list[tuple[int, int]] = field(default_factory=lambda: [(32, 100_000)])
    k_aug_views: int = 2
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 2000
    adam_beta0: float = 0.0
    adam_beta1: float = 0.99

    def validate(self) -> None:
        if min(self.lr_generator, self.lr_discriminator) <= 0:
            raise ValueError("learning rates must be positive")
        if not self.stage_schedule:
            raise ValueError("stage schedule must be nonempty")
        if self.epsilon_scale <= 0:
            raise ValueError("epsilon_scale must be positive")


@dataclass
class EncoderTrainConfig:
    steps: int = 2000
    batch_size: int = 2
    lr: float = 1e-3
    k_aug_views: int = 2
    canonical_only: bool = False    # train the canonical-view editor variant
    w_latent_consistency: float = 1.0
    w_feature_consistency: float = 0.5
    w_image: float = 1.0
    w_perceptual: float = 0.5
    w_mask: float = 0.5
    w_angles: float = 1.0
    use_real_data: bool = False
    seed: int = 0


@dataclass
class InversionConfig:
    n_opt: int = 300                # latent/camera optimization steps
    n_pti: int = 350                # pivotal (weight) tuning steps
    lr_opt: float = 5e-3
    lr_pti: float = 1e-3
    w_image: float = 1.0
    w_perceptual: float = 0.5
    w_mask: float = 0.5
    w_locality: float = 0.3
    locality_latents: int = 4
    seed: int = 0


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _to_jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def save_config(path: str | Path, **sections) -> None:
    Path(path).write_text(json.dumps({k: _to_jsonable(v) for k, v in sections.items()}, indent=2))


_SECTION_TYPES = {
    "model": ModelConfig,
    "render": RenderConfig,
    "train": TrainConfig,
    "encoder": EncoderTrainConfig,
    "inversion": InversionConfig,
}


def load_config(path: str | Path) -> dict:
    """Load a JSON config file into dataclass sections (unknown keys rejected)."""
    raw = json.loads(Path(path).read_text())
    out = {}
    for name, payload in raw.items():
        cls = _SECTION_TYPES.get(name)
        if cls is None:
            raise ValueError(f"unknown config section: {name}")
        fields = {f.name for f in dataclasses.fields(cls)}
        bad = set(payload) - fields
        if bad:
            raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
        if "stage_schedule" in payload:
            payload["stage_schedule"] = [tuple(s) for s in payload["stage_schedule"]]
        out[name] = cls(**payload)
    return out
