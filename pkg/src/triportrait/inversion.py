"""Hybrid inversion (encoder init + latent optimization + pivotal tuning) and
the session state driving all interactive edits.

A Session owns one portrait: the pivot styles found by inversion, the weight
delta from pivotal tuning, a replayable edit stack, and cached canonical-view
renders. Edits never re-run optimization; shape edits go through the
canonical-view encoder, texture edits are style surgery.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import StyleCodes
from .camera import canonical_pose, differentiable_rays, pose_from_angles
from .checkpoint import load_container, save_container
from .config import InversionConfig
from .data import one_hot_mask
from .encoders import PortraitEncoder
from .errors import RejectedInputError
from .field import RayBatch
from .generator import Generator
from .losses import FeatureEmbedder, perceptual_distance
from .palette import NUM_CLASSES


@dataclass
class Session:
    source_image: torch.Tensor        # (3, H, W) in [-1, 1]
    source_mask: torch.Tensor         # (H, W) int64
    pivot_styles: StyleCodes          # styles after latent optimization
    weight_delta: dict[str, torch.Tensor]
    generator: Generator              # tuned copy (base + delta applied)
    edit_stack: list[dict] = field(default_factory=list)
    current_styles: StyleCodes | None = None
    active_restyle: "object | None" = None       # RegionStyleSpec, set by edits
    canonical_image: torch.Tensor | None = None  # cached canonical render
    canonical_semantic: torch.Tensor | None = None
    diverged: bool = False
    stage_losses: dict = field(default_factory=dict)
    source_angles: tuple[float, float] = (0.0, 0.0)  # fitted source yaw/pitch

    def __post_init__(self):
        if self.current_styles is None:
            self.current_styles = self.pivot_styles.clone()

    @property
    def camera(self):
        rcfg = self.generator.render_cfg
        return canonical_pose(radius=rcfg.camera_radius, focal=rcfg.focal)

    def refresh_canonical(self) -> None:
        """Regenerate the canonical-view cache from the current state."""
        out = _session_render(self, self.camera)
        self.canonical_image = out.image.detach()
        self.canonical_semantic = out.semantic.detach()

    def canonical_hash(self) -> str:
        payload = self.canonical_image.numpy().tobytes() \
            + self.canonical_semantic.numpy().tobytes()
        return hashlib.sha256(payload).hexdigest()


def _session_render(session: Session, camera, lr_resolution=None, hr=True):
    """Render session state; import-free hook shared with the editing module."""
    from .editing import restyle_overrides

    overrides, band = restyle_overrides(session)
    gen = session.generator
    if hr:
        out, _ = gen.render(session.current_styles, camera, lr_resolution=lr_resolution,
                            texture_overrides=overrides, blend_band=band)
        return out
    bundle = gen.render_bundle(session.current_styles, camera, lr_resolution=lr_resolution,
                               texture_overrides=overrides, blend_band=band)
    return bundle


def _validate_portrait(generator: Generator, image: torch.Tensor, mask: torch.Tensor):
    res = generator.render_cfg.output_resolution
    if image.ndim == 3:
        image = image.unsqueeze(0)
    if mask.ndim == 2:
        mask = mask.unsqueeze(0)
    if image.shape[-1] != res or mask.shape[-1] != res:
        raise RejectedInputError(f"portrait must be {res}x{res}")
    if mask.max().item() >= NUM_CLASSES:
        raise RejectedInputError("mask contains class index >= 19")
    return image, mask.long()


def _recon_loss(out_image, out_semantic, target_image, target_mask, embedder,
                cfg: InversionConfig):
    loss_img = F.mse_loss(out_image, target_image)
    loss_perc = perceptual_distance(embedder, out_image, target_image)
    loss_mask = F.cross_entropy(out_semantic, target_mask)
    return cfg.w_image * loss_img + cfg.w_perceptual * loss_perc + cfg.w_mask * loss_mask


def _render_with_angles(gen: Generator, styles: StyleCodes, yaw, pitch):
    """HR render through differentiable rays so camera angles get gradients."""
    rcfg = gen.render_cfg
    origins, dirs = differentiable_rays(yaw, pitch, rcfg.lr_resolution,
                                        radius=rcfg.camera_radius, focal=rcfg.focal)
    rays = RayBatch(origins.to(styles.layers.dtype), dirs.to(styles.layers.dtype),
                    near=rcfg.near, far=rcfg.far, coarse_count=rcfg.coarse_samples,
                    fine_count=rcfg.fine_samples, resolution=rcfg.lr_resolution)
    planes_s, planes_t = gen.generate_planes(styles)
    bundle = gen.field.render_rays(planes_s, planes_t, rays)
    return gen.superres(bundle, styles)


def hybrid_invert(generator: Generator, encoder: PortraitEncoder,
                  image: torch.Tensor, mask: torch.Tensor,
                  cfg: InversionConfig | None = None,
                  progress=None) -> Session:
    """Encoder init -> W+/camera optimization -> pivotal tuning -> Session.

    Zero-step budgets fall back to the previous stage's state; a loss blowup
    (10x the starting loss) aborts with the session flagged diverged.
    """
    cfg = cfg or InversionConfig()
    image, mask = _validate_portrait(generator, image, mask)
    embedder = FeatureEmbedder()
    generator.eval()
    generator.requires_grad_(False)

    def report(frac):
        if progress is not None:
            progress(frac)

    # stage 1: encoder initialization
    with torch.no_grad():
        state = encoder(image, mask)
    styles0 = state.styles().layers.detach()
    yaw0, pitch0 = state.yaw.detach(), state.pitch.detach()
    stage_losses = {}
    target_mask = mask  # (1, H, W)
    with torch.no_grad():
        out0 = _render_with_angles(generator, StyleCodes(styles0), yaw0, pitch0)
        stage_losses["encoder_init"] = float(
            _recon_loss(out0.image, out0.semantic, image, target_mask, embedder, cfg))

    # stage 2: latent + camera optimization around the encoder estimate
    styles_opt = styles0.clone().requires_grad_(True)
    angles = torch.stack([yaw0, pitch0]).clone().reshape(2).requires_grad_(True)
    opt = torch.optim.Adam([styles_opt, angles], lr=cfg.lr_opt)
    diverged = False
    first = None
    for i in range(cfg.n_opt):
        out = _render_with_angles(generator, StyleCodes(styles_opt),
                                  angles[0:1], angles[1:2])
        loss = _recon_loss(out.image, out.semantic, image, target_mask, embedder, cfg)
        if first is None:
            first = float(loss.detach())
        if float(loss.detach()) > 10.0 * first:
            diverged = True
            break
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        report(0.5 * (i + 1) / max(cfg.n_opt, 1))
    pivot = styles_opt.detach().clone()
    yaw_fit = angles.detach()[0:1]
    pitch_fit = angles.detach()[1:2]
    with torch.no_grad():
        out1 = _render_with_angles(generator, StyleCodes(pivot), yaw_fit, pitch_fit)
        stage_losses["optimized"] = float(
            _recon_loss(out1.image, out1.semantic, image, target_mask, embedder, cfg))

    # stage 3: pivotal tuning of the generator weights around the fixed pivot
    tuned = copy.deepcopy(generator)
    tuned.requires_grad_(True)
    opt_w = torch.optim.Adam(tuned.parameters(), lr=cfg.lr_pti)
    locality_g = torch.Generator().manual_seed(cfg.seed)
    z_loc = torch.randn(cfg.locality_latents, generator.model_cfg.style_dim,
                        generator=locality_g)
    cond = canonical_pose(radius=generator.render_cfg.camera_radius,
                          focal=generator.render_cfg.focal)
    with torch.no_grad():
        loc_styles = generator.map_latent(z_loc, torch.as_tensor(
            cond.as_vector(), dtype=torch.float32).expand(cfg.locality_latents, -1))
        base_loc = generator.render_bundle(loc_styles, [cond] * cfg.locality_latents)
        base_loc_rgb = base_loc.rgb_map()
    first = None
    for i in range(cfg.n_pti):
        out = _render_with_angles(tuned, StyleCodes(pivot), yaw_fit, pitch_fit)
        loss = _recon_loss(out.image, out.semantic, image, target_mask, embedder, cfg)
        if cfg.w_locality > 0:
            loc_bundle = tuned.render_bundle(loc_styles, [cond] * cfg.locality_latents)
            loss = loss + cfg.w_locality * F.mse_loss(loc_bundle.rgb_map(), base_loc_rgb)
        if first is None:
            first = float(loss.detach())
        if float(loss.detach()) > 10.0 * first:
            diverged = True
            break
        opt_w.zero_grad(set_to_none=True)
        loss.backward()
        opt_w.step()
        report(0.5 + 0.5 * (i + 1) / max(cfg.n_pti, 1))
    tuned.requires_grad_(False)
    tuned.eval()
    with torch.no_grad():
        out2 = _render_with_angles(tuned, StyleCodes(pivot), yaw_fit, pitch_fit)
        stage_losses["pivotal_tuned"] = float(
            _recon_loss(out2.image, out2.semantic, image, target_mask, embedder, cfg))

    # float64 deltas so base + delta reconstructs the tuned weights bitwise
    delta = {}
    base_params = dict(generator.named_parameters())
    for name, p in tuned.named_parameters():
        d = p.detach().double() - base_params[name].detach().double()
        if d.abs().max() > 0:
            delta[name] = d
    session = Session(source_image=image[0], source_mask=mask[0],
                      pivot_styles=StyleCodes(pivot), weight_delta=delta,
                      generator=tuned, diverged=diverged, stage_losses=stage_losses,
                      source_angles=(float(yaw_fit), float(pitch_fit)))
    session.refresh_canonical()
    report(1.0)
    return session


def canonical_encode(encoder_can: PortraitEncoder, image: torch.Tensor,
                     mask: torch.Tensor, pose=None):
    """Encode canonical-view inputs; refuses explicit non-canonical metadata."""
    if pose is not None:
        from .camera import recover_angles

        yaw, pitch = recover_angles(pose)
        if abs(yaw) > 1e-6 or abs(pitch) > 1e-6:
            raise RejectedInputError("canonical encoder only accepts frontal renders")
    with torch.no_grad():
        return encoder_can(image, mask)


def apply_mask_edit(session: Session, edited_mask: torch.Tensor,
                    encoder_can: PortraitEncoder) -> Session:
    """Shape edit: re-encode the edited canonical mask, keep texture styles."""
    if edited_mask.ndim == 2:
        edited_mask = edited_mask.unsqueeze(0)
    res = session.generator.render_cfg.output_resolution
    if edited_mask.shape[-1] != res or edited_mask.shape[-2] != res:
        raise RejectedInputError(f"edited mask must be {res}x{res}")
    if edited_mask.max().item() >= NUM_CLASSES:
        raise RejectedInputError("mask contains class index >= 19")
    state = canonical_encode(encoder_can, session.canonical_image, edited_mask.long())
    layers = session.current_styles.layers.clone()
    layers[:, :session.current_styles.shallow_layers] = state.shape_styles
    session.current_styles = StyleCodes(layers)
    session.edit_stack.append({
        "kind": "mask_edit",
        "mask": edited_mask[0].numpy().astype(np.uint8),
    })
    session.refresh_canonical()
    return session


def replay_edits(session: Session, encoder_can: PortraitEncoder) -> Session:
    """Re-apply the edit stack from the pivot; deterministic reconstruction."""
    from .editing import RegionStyleSpec, global_style_adjust, region_restyle

    stack = session.edit_stack
    session.edit_stack = []
    session.current_styles = session.pivot_styles.clone()
    session.active_restyle = None
    session.refresh_canonical()
    for entry in stack:
        if entry["kind"] == "mask_edit":
            apply_mask_edit(session, torch.as_tensor(entry["mask"]).long(), encoder_can)
        elif entry["kind"] == "style_mix":
            global_style_adjust(session, entry["block"],
                                torch.as_tensor(entry["values"]),
                                list(entry["layers"]))
        elif entry["kind"] == "restyle":
            spec = RegionStyleSpec(
                assignments=[(set(a["classes"]), torch.as_tensor(a["styles"]))
                             for a in entry["assignments"]],
                blend_band=entry.get("blend_band", 0.0))
            region_restyle(session, spec, session.camera)
        else:
            raise RejectedInputError(f"unknown edit kind: {entry['kind']}")
    return session


# -- session files ------------------------------------------------------------


def save_session(session: Session, path, base_checkpoint: str | None = None) -> None:
    segments: dict[str, dict] = {
        "session.pivot": {"styles": session.pivot_styles.layers},
        "session.current": {"styles": session.current_styles.layers},
        "session.delta": {k: v for k, v in session.weight_delta.items()},
        "session.source": {
            "image": ((session.source_image.permute(1, 2, 0).numpy() + 1) * 127.5
                      ).round().astype(np.uint8),
            "mask": session.source_mask.numpy().astype(np.uint8),
        },
    }
    edits_meta = []
    for i, entry in enumerate(session.edit_stack):
        meta = {"kind": entry["kind"]}
        if entry["kind"] == "mask_edit":
            segments.setdefault("session.edits", {})[f"{i}.mask"] = entry["mask"]
        elif entry["kind"] == "style_mix":
            meta["block"] = entry["block"]
            meta["layers"] = list(entry["layers"])
            segments.setdefault("session.edits", {})[f"{i}.values"] = np.asarray(entry["values"])
        elif entry["kind"] == "restyle":
            meta["blend_band"] = entry.get("blend_band", 0.0)
            meta["classes"] = [sorted(a["classes"]) for a in entry["assignments"]]
            for j, a in enumerate(entry["assignments"]):
                segments.setdefault("session.edits", {})[f"{i}.styles.{j}"] = \
                    np.asarray(a["styles"])
        edits_meta.append(meta)
    segments["session.meta"] = {"json": json.dumps({
        "edits": edits_meta,
        "diverged": session.diverged,
        "stage_losses": session.stage_losses,
        "canonical_hash": session.canonical_hash(),
        "base_checkpoint": base_checkpoint,
        "model_cfg": dataclasses.asdict(session.generator.model_cfg),
        "render_cfg": dataclasses.asdict(session.generator.render_cfg),
    }).encode("utf-8")}
    save_container(path, segments)


def load_session(path, base_generator: Generator | None = None,
                 encoder_can: PortraitEncoder | None = None,
                 verify_hash: bool = True) -> Session:
    """Rebuild a session from disk: base weights + delta, then edit replay.

    base_generator may be omitted when the session records its base
    checkpoint path.
    """
    segments = load_container(path)
    meta = json.loads(segments["session.meta"]["json"].decode("utf-8"))
    if base_generator is None:
        from .checkpoint import load_generator_checkpoint

        ckpt_path = meta.get("base_checkpoint")
        if not ckpt_path:
            raise RejectedInputError(
                "session does not record its base checkpoint; pass base_generator")
        base_generator, _, _ = load_generator_checkpoint(ckpt_path)

    tuned = copy.deepcopy(base_generator)
    tuned.requires_grad_(False)
    params = dict(tuned.named_parameters())
    with torch.no_grad():
        for name, d in segments.get("session.delta", {}).items():
            delta = torch.as_tensor(np.asarray(d))
            params[name].copy_((params[name].double() + delta).to(params[name].dtype))
    tuned.eval()

    src = segments["session.source"]
    image = torch.as_tensor(src["image"].astype(np.float32) / 127.5 - 1.0).permute(2, 0, 1)
    mask = torch.as_tensor(src["mask"].astype(np.int64))

    edits = []
    edit_arrays = segments.get("session.edits", {})
    for i, entry in enumerate(meta["edits"]):
        kind = entry["kind"]
        if kind == "mask_edit":
            edits.append({"kind": kind, "mask": np.asarray(edit_arrays[f"{i}.mask"])})
        elif kind == "style_mix":
            edits.append({"kind": kind, "block": entry["block"],
                          "layers": entry["layers"],
                          "values": np.asarray(edit_arrays[f"{i}.values"])})
        elif kind == "restyle":
            assignments = [{"classes": cls, "styles": np.asarray(edit_arrays[f"{i}.styles.{j}"])}
                           for j, cls in enumerate(entry["classes"])]
            edits.append({"kind": kind, "assignments": assignments,
                          "blend_band": entry.get("blend_band", 0.0)})

    session = Session(
        source_image=image, source_mask=mask,
        pivot_styles=StyleCodes(torch.as_tensor(np.asarray(segments["session.pivot"]["styles"]))),
        weight_delta={k: torch.as_tensor(np.asarray(v))
                      for k, v in segments.get("session.delta", {}).items()},
        generator=tuned, edit_stack=edits, diverged=meta.get("diverged", False),
        stage_losses=meta.get("stage_losses", {}))
    if edits and encoder_can is None:
        raise RejectedInputError("session has edits; a canonical encoder is required to replay")
    if edits:
        replay_edits(session, encoder_can)
    else:
        session.refresh_canonical()
    if verify_hash and session.canonical_hash() != meta["canonical_hash"]:
        raise RejectedInputError("session replay does not reproduce the canonical render")
    return session
