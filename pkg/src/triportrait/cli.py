"""Command line entry points: dataset generation, training, inversion, editing."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch


def _cmd_make_toy_data(args):
    from .toyfaces import ToyFaceSpec, generate_toy_dataset

    spec = ToyFaceSpec(resolution=args.resolution)
    out = generate_toy_dataset(spec, args.count, args.out, seed=args.seed)
    print(f"wrote {args.count} identities to {out}")


def _cmd_train(args):
    from .config import ModelConfig, RenderConfig, TrainConfig, load_config
    from .data import FaceDataset
    from .generator import Generator
    from .training import Trainer

    sections = load_config(args.config) if args.config else {}
    model_cfg = sections.get("model", ModelConfig())
    render_cfg = sections.get("render", RenderConfig())
    train_cfg = sections.get("train", TrainConfig())
    torch.manual_seed(train_cfg.seed)
    np.random.seed(train_cfg.seed)
    gen = Generator(model_cfg, render_cfg)
    trainer = Trainer(gen, FaceDataset(args.data), train_cfg, args.out)
    result = trainer.train()
    print(f"trained {result.steps} steps; checkpoints: "
          f"{[str(p) for p in result.checkpoints]}")


def _cmd_train_encoders(args):
    from .checkpoint import load_container, load_generator_checkpoint, save_container, \
        state_dict_arrays
    from .config import EncoderTrainConfig
    from .encoders import train_encoders

    gen, segments, meta = load_generator_checkpoint(args.ckpt)
    cfg = EncoderTrainConfig(steps=args.steps, k_aug_views=args.k_views,
                             canonical_only=args.canonical, seed=args.seed)
    result = train_encoders(gen, cfg)
    key = "encoder.canonical" if args.canonical else "encoder"
    segments[key] = state_dict_arrays(result.encoder)
    meta_key = "encoder_canonical_cfg" if args.canonical else "encoder_cfg"
    meta[meta_key] = result.encoder.hparams()
    segments["meta"] = {"json": json.dumps(meta).encode("utf-8")}
    save_container(args.out or args.ckpt, segments)
    print(f"trained {key} for {args.steps} steps "
          f"(final loss {result.losses[-1]['total']:.4f})")


def _cmd_invert(args):
    from .checkpoint import load_generator_checkpoint, load_state_arrays
    from .config import InversionConfig
    from .data import load_image, load_mask
    from .encoders import PortraitEncoder
    from .inversion import hybrid_invert, save_session

    gen, segments, meta = load_generator_checkpoint(args.ckpt)
    res = gen.render_cfg.output_resolution
    encoder = PortraitEncoder(**meta.get("encoder_cfg", {"resolution": res}))
    if "encoder" in segments:
        load_state_arrays(encoder, segments["encoder"])
    else:
        print("warning: checkpoint has no trained encoder; using a random init",
              file=sys.stderr)
    cfg = InversionConfig(n_opt=args.opt_steps, n_pti=args.pti_steps)
    session = hybrid_invert(gen, encoder, load_image(Path(args.image)),
                            load_mask(Path(args.mask)), cfg)
    save_session(session, args.out, base_checkpoint=str(Path(args.ckpt).resolve()))
    print(f"session written to {args.out}; stage losses: "
          f"{json.dumps(session.stage_losses)}"
          + (" [DIVERGED: partial result]" if session.diverged else ""))


def _load_session_for_cli(args):
    from .checkpoint import load_generator_checkpoint, load_state_arrays
    from .encoders import PortraitEncoder
    from .inversion import load_session

    base = None
    encoder_can = None
    if getattr(args, "ckpt", None):
        base, segments, meta = load_generator_checkpoint(args.ckpt)
        res = base.render_cfg.output_resolution
        encoder_can = PortraitEncoder(
            **meta.get("encoder_canonical_cfg", {"resolution": res}))
        if "encoder.canonical" in segments:
            load_state_arrays(encoder_can, segments["encoder.canonical"])
    return load_session(args.session, base, encoder_can)


def _save_png(image: torch.Tensor, path):
    from PIL import Image

    arr = ((image.permute(1, 2, 0).numpy() + 1) * 127.5).round().clip(0, 255)
    Image.fromarray(arr.astype(np.uint8)).save(path)


def _cmd_render(args):
    from .camera import pose_from_angles
    from .editing import render_view

    session = _load_session_for_cli(args)
    rcfg = session.generator.render_cfg
    camera = pose_from_angles(np.deg2rad(args.yaw), np.deg2rad(args.pitch),
                              radius=rcfg.camera_radius, focal=rcfg.focal)
    out = render_view(session, camera)
    _save_png(out.image[0], args.out)
    print(f"rendered {args.out} at yaw {args.yaw} deg, pitch {args.pitch} deg")


def _cmd_restyle(args):
    from .camera import pose_from_angles
    from .editing import RegionStyleSpec, region_restyle
    from .palette import class_indices

    session = _load_session_for_cli(args)
    gen = session.generator
    z = torch.randn(1, gen.model_cfg.style_dim,
                    generator=torch.Generator().manual_seed(args.style_seed))
    rcfg = gen.render_cfg
    cond = pose_from_angles(0.0, 0.0, radius=rcfg.camera_radius, focal=rcfg.focal)
    with torch.no_grad():
        w_t = gen.map_latent(z, cond).texture_styles[0]
    classes = set(class_indices(args.classes.split(",")))
    spec = RegionStyleSpec(assignments=[(classes, w_t)], blend_band=args.blend_band)
    camera = pose_from_angles(np.deg2rad(args.yaw), np.deg2rad(args.pitch),
                              radius=rcfg.camera_radius, focal=rcfg.focal)
    out = region_restyle(session, spec, camera)
    if args.out:
        _save_png(out.image[0], args.out)
    if args.save_session:
        from .inversion import save_session

        save_session(session, args.save_session,
                     base_checkpoint=getattr(args, "ckpt", None))
    print(f"restyled classes {sorted(classes)} with seed {args.style_seed}")


def _cmd_extract_mesh(args):
    from .editing import extract_mesh, save_obj

    session = _load_session_for_cli(args)
    mesh = extract_mesh(session, grid_resolution=args.res, level=args.level)
    save_obj(mesh, args.out)
    print(f"wrote {len(mesh.vertices)} vertices / {len(mesh.faces)} faces to {args.out}")


def _cmd_serve(args):
    from .service import main as serve_main

    serve_main(args.config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triportrait")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-data", help="generate the procedural toy dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(fn=_cmd_make_toy_data)

    p = sub.add_parser("train", help="adversarial training on a dataset directory")
    p.add_argument("--config", default=None, help="JSON config with model/render/train sections")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("train-encoders", help="fit encoders against a trained generator")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", default=None, help="output checkpoint (defaults to in-place)")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--k-views", type=int, default=2)
    p.add_argument("--canonical", action="store_true",
                   help="train the canonical-view editor variant")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_train_encoders)

    p = sub.add_parser("invert", help="hybrid inversion of one portrait")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--opt-steps", type=int, default=300)
    p.add_argument("--pti-steps", type=int, default=350)
    p.set_defaults(fn=_cmd_invert)

    p = sub.add_parser("render", help="free-view render from a session file")
    p.add_argument("--session", required=True)
    p.add_argument("--yaw", type=float, default=0.0, help="degrees")
    p.add_argument("--pitch", type=float, default=0.0, help="degrees")
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", default=None, help="base checkpoint override")
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("restyle", help="regional texture restyle from a style seed")
    p.add_argument("--session", required=True)
    p.add_argument("--classes", required=True, help="comma-separated names or indices")
    p.add_argument("--style-seed", type=int, required=True)
    p.add_argument("--blend-band", type=float, default=0.0)
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--out", default=None)
    p.add_argument("--save-session", default=None)
    p.add_argument("--ckpt", default=None)
    p.set_defaults(fn=_cmd_restyle)

    p = sub.add_parser("extract-mesh", help="marching-cubes mesh from a session")
    p.add_argument("--session", required=True)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--level", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", default=None)
    p.set_defaults(fn=_cmd_extract_mesh)

    p = sub.add_parser("serve", help="run the interactive editing service")
    p.add_argument("--config", default=None)
    p.set_defaults(fn=_cmd_serve)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
