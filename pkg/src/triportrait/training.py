"""Adversarial training: alternating G/D steps, split lazy R1, density
regularization, pose-conditioning swap and the two-stage resolution schedule."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .camera import CameraPose, pose_swap
from .checkpoint import save_training_checkpoint
from .config import TrainConfig
from .data import BalancedSampler, FaceDataset, one_hot_mask
from .discriminator import DualDiscriminator, DualInput, dual_input_from_fake, dual_input_from_real
from .errors import TrainingFault
from .generator import Generator
from .losses import gan_losses, split_r1


@dataclass
class TrainResult:
    checkpoints: list[Path]
    metrics_path: Path
    steps: int


class Trainer:
    def __init__(self, generator: Generator, dataset: FaceDataset, cfg: TrainConfig,
                 out_dir: str | Path, disc_channels: int = 64):
        cfg.validate()
        self.g = generator
        self.cfg = cfg
        self.dataset = dataset
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.d = DualDiscriminator(generator.model_cfg,
                                   generator.render_cfg.output_resolution,
                                   base_channels=disc_channels)
        self.opt_g = torch.optim.Adam(self.g.parameters(), lr=cfg.lr_generator,
                                      betas=(cfg.adam_beta0, cfg.adam_beta1))
        self.opt_d = torch.optim.Adam(self.d.parameters(), lr=cfg.lr_discriminator,
                                      betas=(cfg.adam_beta0, cfg.adam_beta1))
        self.sampler = BalancedSampler(dataset, cfg.batch_size, seed=cfg.seed,
                                       image_size=generator.render_cfg.output_resolution)
        self.pose_pool = dataset.pose_pool()
        self.rng = np.random.default_rng(cfg.seed)
        self.torch_rng = torch.Generator().manual_seed(cfg.seed)
        self.step = 0
        self.metrics_path = self.out_dir / "metrics.jsonl"
        self._last_r1 = (0.0, 0.0)  # carried between lazy-R1 steps for logging

    # -- plumbing -------------------------------------------------------------

    def _conditioning(self, poses: torch.Tensor) -> torch.Tensor:
        """Per-sample generator pose conditioning with random swapping."""
        out = []
        for row in poses:
            pose = CameraPose.from_vector(row.numpy())
            swapped = pose_swap(pose, self.cfg.pose_swap_prob, self.pose_pool, self.rng)
            out.append(torch.as_tensor(swapped.as_vector(), dtype=poses.dtype))
        return torch.stack(out)

    def _render_fake(self, batch: int, cameras: list[CameraPose],
                     conditioning: torch.Tensor, lr_resolution: int, update_ema: bool):
        z = torch.randn(batch, self.g.model_cfg.style_dim, generator=self.torch_rng)
        styles = self.g.mapping(z, conditioning, update_ema=update_ema)
        planes = self.g.generate_planes(styles)
        bundle = self.g.render_bundle(styles, cameras, lr_resolution=lr_resolution,
                                      stratified=True, generator=self.torch_rng,
                                      planes=planes)
        return self.g.superres(bundle, styles), bundle, planes[0]

    def _noise_sigma(self) -> float:
        cfg = self.cfg
        if cfg.instance_noise <= 0:
            return 0.0
        frac = 1.0 - self.step / max(cfg.instance_noise_anneal_steps, 1)
        return cfg.instance_noise * max(frac, 0.0)

    def _with_image_noise(self, dual: DualInput, sigma: float) -> DualInput:
        if sigma <= 0:
            return dual
        return DualInput(
            image_hr=dual.image_hr
            + sigma * torch.randn(dual.image_hr.shape, generator=self.torch_rng),
            image_lr_resized=dual.image_lr_resized
            + sigma * torch.randn(dual.image_lr_resized.shape, generator=self.torch_rng),
            semantic_hr=dual.semantic_hr,
            semantic_lr_resized=dual.semantic_lr_resized,
            pose=dual.pose,
        )

    def _checkpoint(self, tag: str) -> Path:
        path = self.out_dir / f"checkpoint_{tag}.tpck"
        save_training_checkpoint(path, self.g, discriminator=self.d,
                                 meta={"step": self.step})
        return path

    def _log(self, record: dict) -> None:
        with self.metrics_path.open("a") as f:
            f.write(json.dumps(record) + "\n")

    # -- one optimization step -------------------------------------------------

    def train_step(self, lr_resolution: int) -> dict:
        cfg = self.cfg
        images, masks, poses = self.sampler.next_batch()
        cameras = [CameraPose.from_vector(p.numpy()) for p in poses]
        conditioning = self._conditioning(poses)
        run_r1 = self.step % cfg.r1_interval == 0

        # discriminator step
        self.d.requires_grad_(True)
        self.g.requires_grad_(False)
        with torch.no_grad():
            fake_out, _, _ = self._render_fake(images.shape[0], cameras, conditioning,
                                               lr_resolution, update_ema=False)
        sigma = self._noise_sigma()
        fake_in = self._with_image_noise(dual_input_from_fake(fake_out, poses), sigma)
        real_in = self._with_image_noise(
            dual_input_from_real(images, one_hot_mask(masks).float(), poses,
                                 lr_size=lr_resolution,
                                 label_smoothing=cfg.semantic_label_smoothing), sigma)
        fake_logits = self.d(fake_in)
        real_logits = self.d(real_in)
        if not (torch.isfinite(fake_logits).all() and torch.isfinite(real_logits).all()):
            self._checkpoint("diagnostic")
            raise TrainingFault("non-finite discriminator logits; diagnostic checkpoint written")
        loss_d = F.softplus(fake_logits).mean() + F.softplus(-real_logits).mean()
        r1_image = torch.zeros(())
        r1_semantic = torch.zeros(())
        if run_r1:
            r1_image, r1_semantic = split_r1(self.d, real_in, create_graph=True)
            # lazy regularization: weight compensated by the interval
            loss_d = loss_d + (0.5 * cfg.gamma_image * r1_image
                               + 0.5 * cfg.gamma_semantic * r1_semantic) * cfg.r1_interval
            self._last_r1 = (float(r1_image.detach()), float(r1_semantic.detach()))
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        self.opt_d.step()

        # generator step
        self.d.requires_grad_(False)
        self.g.requires_grad_(True)
        fake_out, bundle, planes_s = self._render_fake(images.shape[0], cameras, conditioning,
                                                       lr_resolution, update_ema=True)
        adv = F.softplus(-self.d(self._with_image_noise(
            dual_input_from_fake(fake_out, poses), sigma))).mean()
        l_density = torch.zeros(())
        if cfg.lambda_density > 0 and bundle.fine_points is not None:
            pts = bundle.fine_points.detach()
            if pts.shape[1] > 2048:
                sel = torch.randint(pts.shape[1], (2048,), generator=self.torch_rng)
                pts = pts[:, sel]
            l_density = self.g.field.density_discontinuity(
                planes_s, pts, cfg.epsilon_scale, generator=self.torch_rng)
        loss_g = adv + cfg.lambda_density * l_density
        if not torch.isfinite(loss_g):
            self._checkpoint("diagnostic")
            raise TrainingFault("non-finite generator loss; diagnostic checkpoint written")
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()

        return {
            "loss_G": float(loss_g.detach()),
            "loss_D": float(loss_d.detach()),
            "r1_image": self._last_r1[0],
            "r1_semantic": self._last_r1[1],
            "l_density": float(l_density.detach()),
        }

    # -- schedule ----------------------------------------------------------------

    def train(self) -> TrainResult:
        cfg = self.cfg
        checkpoints = []
        t_start = time.time()
        images_seen = 0
        for stage_idx, (lr_resolution, stage_images) in enumerate(cfg.stage_schedule):
            steps = max(1, math.ceil(stage_images / cfg.batch_size))
            for _ in range(steps):
                t0 = time.time()
                stats = self.train_step(lr_resolution)
                self.step += 1
                images_seen += cfg.batch_size
                if self.step % cfg.log_every == 0:
                    stats.update(step=self.step, stage=stage_idx,
                                 lr_resolution=lr_resolution,
                                 images_per_sec=cfg.batch_size / max(time.time() - t0, 1e-9))
                    self._log(stats)
                if self.step % cfg.checkpoint_every == 0:
                    checkpoints.append(self._checkpoint(f"{self.step:07d}"))
            checkpoints.append(self._checkpoint(f"stage{stage_idx}_final"))
        return TrainResult(checkpoints, self.metrics_path, self.step)
