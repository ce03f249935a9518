"""Desk-scale experiment pipeline: data, GAN runs, encoder fits, evaluations.

Everything here is driven by an ExperimentProfile and caches per-stage
artifacts under a work directory, so the acceptance suite and the scripts in
scripts/ share one code path and repeated runs are cheap.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .camera import PosePool, pose_from_angles
from .checkpoint import (load_container, load_generator_checkpoint, load_state_arrays,
                         save_container, save_training_checkpoint, state_dict_arrays)
from .config import (EncoderTrainConfig, InversionConfig, ModelConfig, RenderConfig,
                     TrainConfig)
from .data import FaceDataset, load_mask, one_hot_mask
from .encoders import PortraitEncoder, train_encoders
from .generator import Generator
from .inversion import hybrid_invert
from .losses import FeatureEmbedder, toy_fid
from .palette import NUM_CLASSES
from .toyfaces import ToyFaceSpec, generate_toy_dataset
from .training import Trainer


@dataclass
class ExperimentProfile:
    name: str = "quick"
    seed: int = 0
    data_resolution: int = 32
    train_count: int = 512
    holdout_count: int = 128
    model: ModelConfig = field(default_factory=lambda: ModelConfig(
        trunk_resolution=16, plane_resolution=32, trunk_channels=32,
        branch_channels=32, superres_channels=32))
    render: RenderConfig = field(default_factory=lambda: RenderConfig(
        lr_resolution=16, output_resolution=32, coarse_samples=12, fine_samples=12))
    batch_size: int = 4
    gan_steps: int = 1200
    lambda_density: float = 0.25
    disc_channels: int = 32
    encoder_steps: int = 500
    encoder_steps_ablation: int = 500
    canonical_steps: int = 500
    encoder_batch: int = 2
    k_aug_views: int = 2
    ladder_identities: int = 16
    inversion: InversionConfig = field(default_factory=lambda: InversionConfig(
        n_opt=60, n_pti=80, lr_opt=8e-3, lr_pti=2e-3))
    eval_samples: int = 96

    def digest(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:10]

    def workdir(self, root: str | Path) -> Path:
        return Path(root) / f"{self.name}-{self.digest()}"


FULL_PROFILE = ExperimentProfile(
    name="full", data_resolution=64, train_count=8000, holdout_count=512,
    model=ModelConfig(trunk_resolution=64, plane_resolution=128),
    render=RenderConfig(lr_resolution=32, output_resolution=64,
                        coarse_samples=48, fine_samples=48),
    batch_size=8, gan_steps=12_500, disc_channels=64,
    encoder_steps=2000, encoder_steps_ablation=2000, canonical_steps=2000,
    inversion=InversionConfig(), eval_samples=256)


# -- stages --------------------------------------------------------------------


def stage_data(profile: ExperimentProfile, work: Path) -> tuple[Path, Path]:
    spec = ToyFaceSpec(resolution=profile.data_resolution)
    train_dir = work / "data_train"
    holdout_dir = work / "data_holdout"
    if not (train_dir / "poses.json").exists():
        generate_toy_dataset(spec, profile.train_count, train_dir, seed=profile.seed)
    if not (holdout_dir / "poses.json").exists():
        generate_toy_dataset(spec, profile.holdout_count, holdout_dir,
                             seed=profile.seed + 9000)
    return train_dir, holdout_dir


def _train_cfg(profile: ExperimentProfile, lambda_density: float) -> TrainConfig:
    images = profile.gan_steps * profile.batch_size
    return TrainConfig(batch_size=profile.batch_size,
                       lambda_density=lambda_density,
                       stage_schedule=[(profile.render.lr_resolution, images)],
                       seed=profile.seed, log_every=100,
                       checkpoint_every=10 ** 9)


def stage_gan(profile: ExperimentProfile, work: Path, train_dir: Path,
              lambda_density: float, tag: str) -> tuple[Path, Path]:
    """Train one GAN arm; returns (final checkpoint, init checkpoint)."""
    run_dir = work / f"gan_{tag}"
    final = run_dir / "checkpoint_stage0_final.tpck"
    init = run_dir / "checkpoint_init.tpck"
    if final.exists() and init.exists():
        return final, init
    torch.manual_seed(profile.seed)
    gen = Generator(dataclasses.replace(profile.model),
                    dataclasses.replace(profile.render))
    trainer = Trainer(gen, FaceDataset(train_dir), _train_cfg(profile, lambda_density),
                      run_dir, disc_channels=profile.disc_channels)
    save_training_checkpoint(init, gen, meta={"step": 0})
    trainer.train()
    return final, init


def stage_encoders(profile: ExperimentProfile, work: Path, ckpt: Path) -> Path:
    """Fit the three encoder variants against the trained generator."""
    out = work / "encoders.tpck"
    if out.exists():
        return out
    gen, segments, meta = load_generator_checkpoint(ckpt)
    pool_sampler = None  # default uniform view range matches the toy pose spread

    variants = {
        "encoder": EncoderTrainConfig(steps=profile.encoder_steps,
                                      batch_size=profile.encoder_batch,
                                      k_aug_views=profile.k_aug_views,
                                      seed=profile.seed),
        "encoder.k0": EncoderTrainConfig(steps=profile.encoder_steps_ablation,
                                         batch_size=profile.encoder_batch,
                                         k_aug_views=0, seed=profile.seed),
        "encoder.canonical": EncoderTrainConfig(steps=profile.canonical_steps,
                                                batch_size=profile.encoder_batch,
                                                canonical_only=True, seed=profile.seed),
    }
    for key, cfg in variants.items():
        torch.manual_seed(profile.seed + 17)
        result = train_encoders(gen, cfg, pose_sampler=pool_sampler)
        segments[key] = state_dict_arrays(result.encoder)
        meta[f"{key}_cfg"] = result.encoder.hparams()
    segments["meta"] = {"json": json.dumps(meta).encode("utf-8")}
    save_container(out, segments)
    return out


def load_encoder(ckpt_path: Path, key: str) -> PortraitEncoder:
    segments = load_container(ckpt_path)
    meta = json.loads(segments["meta"]["json"].decode("utf-8"))
    enc = PortraitEncoder(**meta[f"{key}_cfg"])
    load_state_arrays(enc, segments[key])
    enc.eval()
    return enc


# -- sampling helpers -------------------------------------------------------------


def sample_portraits(gen: Generator, pool: PosePool, count: int, seed: int,
                     batch: int = 16, truncation: float = 1.0):
    """Render generator samples at pool-drawn poses; returns images and masks."""
    rng = np.random.default_rng(seed)
    g = torch.Generator().manual_seed(seed)
    images, masks = [], []
    with torch.no_grad():
        for start in range(0, count, batch):
            n = min(batch, count - start)
            cams = [pool.sample(rng) for _ in range(n)]
            z = torch.randn(n, gen.model_cfg.style_dim, generator=g)
            from .camera import poses_to_tensor

            styles = gen.mapping(z, poses_to_tensor(cams), truncation=truncation)
            out, _ = gen.render(styles, cams)
            images.append(out.image)
            masks.append(out.semantic_mask())
    return torch.cat(images), torch.cat(masks)


def real_batch(dataset: FaceDataset, count: int):
    images, masks = [], []
    for rec in dataset.records[:count]:
        img, mask, _ = dataset.load(rec)
        images.append(img)
        masks.append(mask)
    return torch.stack(images), torch.stack(masks)


# -- metrics ----------------------------------------------------------------------


def fid_against(embedder: FeatureEmbedder, images: torch.Tensor,
                real_images: torch.Tensor) -> float:
    with torch.no_grad():
        return toy_fid(embedder, images, real_images)


def nearest_match_iou(gen_masks: torch.Tensor, real_masks: torch.Tensor) -> float:
    """Mean per-class IoU after matching each generated mask to its best
    held-out neighbour (classes scored where present in either mask)."""
    gen_oh = one_hot_mask(gen_masks).reshape(len(gen_masks), NUM_CLASSES, -1)
    real_oh = one_hot_mask(real_masks).reshape(len(real_masks), NUM_CLASSES, -1)
    inter = torch.einsum("ncp,mcp->nmc", gen_oh, real_oh)
    areas_g = gen_oh.sum(dim=-1)
    areas_r = real_oh.sum(dim=-1)
    union = areas_g[:, None, :] + areas_r[None, :, :] - inter
    present = union > 0
    iou = torch.where(present, inter / union.clamp_min(1.0), torch.zeros(()))
    mean_iou = (iou * present).sum(dim=-1) / present.sum(dim=-1).clamp_min(1)
    best = mean_iou.max(dim=1).values
    return float(best.mean())


def density_discontinuity_statistic(gen: Generator, pool: PosePool, seed: int,
                                    samples: int = 16, epsilon_scale: float = 0.008) -> float:
    """Mean |d(x) - d(x+eps)| over fine points of fresh renders."""
    rng = np.random.default_rng(seed)
    g = torch.Generator().manual_seed(seed)
    stats = []
    with torch.no_grad():
        for _ in range(samples):
            cam = pool.sample(rng)
            z = torch.randn(1, gen.model_cfg.style_dim, generator=g)
            from .camera import poses_to_tensor

            styles = gen.mapping(z, poses_to_tensor([cam]))
            planes = gen.generate_planes(styles)
            bundle = gen.render_bundle(styles, cam, planes=planes)
            stat = gen.field.density_discontinuity(
                planes[0], bundle.fine_points, epsilon_scale,
                generator=torch.Generator().manual_seed(seed))
            stats.append(float(stat))
    return float(np.mean(stats))


# -- inversion ladder ---------------------------------------------------------------


def _image_l2(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).square().mean())


def _render_state_at(gen: Generator, styles_layers: torch.Tensor, camera) -> torch.Tensor:
    from .backbone import StyleCodes

    with torch.no_grad():
        out, _ = gen.render(StyleCodes(styles_layers), camera)
    return out.image


def _optimize_styles(gen: Generator, styles0: torch.Tensor, yaw0, pitch0,
                     image, mask, cfg: InversionConfig):
    """Stage-2-only optimization used for the init-strategy comparison."""
    from .backbone import StyleCodes
    from .inversion import _recon_loss, _render_with_angles

    embedder = FeatureEmbedder()
    styles = styles0.clone().requires_grad_(True)
    angles = torch.tensor([float(yaw0), float(pitch0)], requires_grad=True)
    opt = torch.optim.Adam([styles, angles], lr=cfg.lr_opt)
    for _ in range(cfg.n_opt):
        out = _render_with_angles(gen, StyleCodes(styles), angles[0:1], angles[1:2])
        loss = _recon_loss(out.image, out.semantic, image, mask, embedder, cfg)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    return styles.detach(), angles.detach()


def eval_inversion_ladder(gen: Generator, encoder: PortraitEncoder,
                          profile: ExperimentProfile, seed: int = 99) -> dict:
    """Reconstruction L2 for: average init, encoder init, + optimization,
    + pivotal tuning, plus the equal-budget avg-init-with-optimization arm."""
    rcfg = gen.render_cfg
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(profile.ladder_identities):
        z = torch.randn(1, gen.model_cfg.style_dim, generator=g)
        yaw = float(rng.uniform(-0.5, 0.5))
        pitch = float(rng.uniform(-0.2, 0.2))
        cam = pose_from_angles(yaw, pitch, radius=rcfg.camera_radius, focal=rcfg.focal)
        with torch.no_grad():
            target = gen.synthesize(z, cam, cam)
        image = target.image
        mask = target.semantic_mask()

        avg_layers = gen.mapping.w_mean.reshape(1, 1, -1).repeat(
            1, gen.model_cfg.num_style_layers, 1)
        err_avg = _image_l2(_render_state_at(gen, avg_layers, cam), image)

        with torch.no_grad():
            state = encoder(image, mask)
        err_enc = _image_l2(_render_state_at(gen, state.styles().layers, cam), image)

        session = hybrid_invert(gen, encoder, image[0], mask[0], profile.inversion)
        # pure image L2 at each inversion stage, re-rendered at the fitted camera
        from .backbone import StyleCodes
        from .inversion import _render_with_angles

        fit_yaw = torch.tensor([session.source_angles[0]])
        fit_pitch = torch.tensor([session.source_angles[1]])
        with torch.no_grad():
            out_opt = _render_with_angles(gen, session.pivot_styles, fit_yaw, fit_pitch)
            err_opt = _image_l2(out_opt.image, image)
            out_pti = _render_with_angles(session.generator, session.pivot_styles,
                                          fit_yaw, fit_pitch)
            err_pti = _image_l2(out_pti.image, image)

        avg_opt_styles, avg_opt_angles = _optimize_styles(
            gen, avg_layers, state.yaw, state.pitch, image, mask, profile.inversion)
        with torch.no_grad():
            out_avg_opt = _render_with_angles(gen, StyleCodes(avg_opt_styles),
                                              avg_opt_angles[0:1], avg_opt_angles[1:2])
        err_avg_opt = _image_l2(out_avg_opt.image, image)

        rows.append(dict(avg=err_avg, encoder=err_enc, optimized=err_opt,
                         pivotal=err_pti, avg_optimized=err_avg_opt))
    means = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    means["rows"] = rows
    return means


def eval_novel_view_error(gen: Generator, encoder: PortraitEncoder,
                          identities: int = 12, seed: int = 123) -> float:
    """Encoder-only inversion error on novel +/-30 deg views (mean L2)."""
    rcfg = gen.render_cfg
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    errs = []
    deg30 = np.deg2rad(30.0)
    with torch.no_grad():
        for _ in range(identities):
            z = torch.randn(1, gen.model_cfg.style_dim, generator=g)
            src = pose_from_angles(float(rng.uniform(-0.45, 0.45)),
                                   float(rng.uniform(-0.15, 0.15)),
                                   radius=rcfg.camera_radius, focal=rcfg.focal)
            target_src = gen.synthesize(z, src, src)
            state = encoder(target_src.image, target_src.semantic_mask())
            styles = state.styles()
            for yaw in (-deg30, deg30):
                cam = pose_from_angles(yaw, 0.0, radius=rcfg.camera_radius,
                                       focal=rcfg.focal)
                truth = gen.synthesize(z, src, cam)
                recon, _ = gen.render(styles, cam)
                errs.append(_image_l2(recon.image, truth.image))
    return float(np.mean(errs))


def eval_canonical_robustness(gen: Generator, encoder: PortraitEncoder,
                              encoder_can: PortraitEncoder, identities: int = 10,
                              seed: int = 321) -> dict:
    """Reconstruction error versus the source yaw for both editor pipelines.

    The canonical pipeline encodes the identity's frontal render regardless of
    the source view; the plain pipeline encodes the posed source render. Both
    are scored on a fixed test view per identity.
    """
    rcfg = gen.render_cfg
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    yaw_grid = np.deg2rad(np.array([-40, -30, -20, -10, 0, 10, 20, 30, 40], dtype=float))
    err_plain = np.zeros((identities, len(yaw_grid)))
    err_can = np.zeros((identities, len(yaw_grid)))
    with torch.no_grad():
        for i in range(identities):
            z = torch.randn(1, gen.model_cfg.style_dim, generator=g)
            test_cam = pose_from_angles(float(rng.uniform(-0.35, 0.35)),
                                        float(rng.uniform(-0.1, 0.1)),
                                        radius=rcfg.camera_radius, focal=rcfg.focal)
            frontal = pose_from_angles(0.0, 0.0, radius=rcfg.camera_radius,
                                       focal=rcfg.focal)
            truth = gen.synthesize(z, frontal, test_cam)
            canon = gen.synthesize(z, frontal, frontal)
            state_can = encoder_can(canon.image, canon.semantic_mask())
            recon_can, _ = gen.render(state_can.styles(), test_cam)
            e_can = _image_l2(recon_can.image, truth.image)
            for j, yaw in enumerate(yaw_grid):
                src_cam = pose_from_angles(float(yaw), 0.0,
                                           radius=rcfg.camera_radius, focal=rcfg.focal)
                src = gen.synthesize(z, frontal, src_cam)
                state = encoder(src.image, src.semantic_mask())
                recon, _ = gen.render(state.styles(), test_cam)
                err_plain[i, j] = _image_l2(recon.image, truth.image)
                err_can[i, j] = e_can  # canonical input is yaw-independent
    from scipy import stats as sstats

    plain_by_yaw = err_plain.mean(axis=0)
    can_by_yaw = err_can.mean(axis=0)
    rho, _ = sstats.spearmanr(np.abs(yaw_grid), plain_by_yaw)
    return {
        "yaw_grid_deg": np.rad2deg(yaw_grid).tolist(),
        "plain_by_yaw": plain_by_yaw.tolist(),
        "canonical_by_yaw": can_by_yaw.tolist(),
        "canonical_std_over_mean": float(can_by_yaw.std() / max(can_by_yaw.mean(), 1e-12)),
        "plain_spearman_vs_abs_yaw": float(rho),
    }


# -- orchestration -----------------------------------------------------------------


def run_pipeline(profile: ExperimentProfile, root: str | Path,
                 stages: tuple[str, ...] = ("data", "gan", "ablation", "encoders")) -> dict:
    """Run (or reuse) the artifact-producing stages; returns paths."""
    work = profile.workdir(root)
    work.mkdir(parents=True, exist_ok=True)
    (work / "profile.json").write_text(
        json.dumps(dataclasses.asdict(profile), indent=2, default=str))
    out: dict = {"work": work}
    train_dir, holdout_dir = stage_data(profile, work)
    out.update(train_dir=train_dir, holdout_dir=holdout_dir)
    if "gan" in stages:
        ckpt, init = stage_gan(profile, work, train_dir, profile.lambda_density, "main")
        out.update(ckpt_main=ckpt, ckpt_init=init,
                   metrics_main=work / "gan_main" / "metrics.jsonl")
    if "ablation" in stages:
        ckpt0, _ = stage_gan(profile, work, train_dir, 0.0, "nodensity")
        out.update(ckpt_ablation=ckpt0,
                   metrics_ablation=work / "gan_nodensity" / "metrics.jsonl")
    if "encoders" in stages:
        out["encoders"] = stage_encoders(profile, work, out["ckpt_main"])
    return out
