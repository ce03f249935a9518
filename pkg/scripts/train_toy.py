#!/usr/bin/env python3
"""End-to-end desk experiment: toy data -> GAN (+ density ablation) -> encoders
-> evaluation report. Artifacts cache under --workdir, so re-runs are cheap.

    python3 scripts/train_toy.py --workdir runs/ --profile quick
    python3 scripts/train_toy.py --workdir runs/ --profile full
"""

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import torch  # noqa: E402

from triportrait import experiments as X  # noqa: E402
from triportrait.checkpoint import load_generator_checkpoint  # noqa: E402
from triportrait.data import FaceDataset  # noqa: E402
from triportrait.losses import FeatureEmbedder  # noqa: E402


def evaluate(paths: dict, profile: X.ExperimentProfile) -> dict:
    embedder = FeatureEmbedder()
    holdout = FaceDataset(paths["holdout_dir"])
    pool = FaceDataset(paths["train_dir"]).pose_pool()
    real_images, real_masks = X.real_batch(holdout, profile.eval_samples)

    gen_main, _, _ = load_generator_checkpoint(paths["ckpt_main"])
    gen_init, _, _ = load_generator_checkpoint(paths["ckpt_init"])
    gen_abl, _, _ = load_generator_checkpoint(paths["ckpt_ablation"])

    report = {}
    t0 = time.time()
    fake_main, fake_masks = X.sample_portraits(gen_main, pool, profile.eval_samples,
                                               seed=profile.seed + 5)
    fake_init, _ = X.sample_portraits(gen_init, pool, profile.eval_samples,
                                      seed=profile.seed + 5)
    fake_abl, _ = X.sample_portraits(gen_abl, pool, profile.eval_samples,
                                     seed=profile.seed + 5)
    report["fid_init"] = X.fid_against(embedder, fake_init, real_images)
    report["fid_main"] = X.fid_against(embedder, fake_main, real_images)
    report["fid_ablation"] = X.fid_against(embedder, fake_abl, real_images)
    report["fid_improvement"] = 1.0 - report["fid_main"] / report["fid_init"]
    report["mask_iou"] = X.nearest_match_iou(fake_masks, real_masks)
    report["density_stat_main"] = X.density_discontinuity_statistic(
        gen_main, pool, seed=7, epsilon_scale=profile.render.epsilon_scale)
    report["density_stat_ablation"] = X.density_discontinuity_statistic(
        gen_abl, pool, seed=7, epsilon_scale=profile.render.epsilon_scale)
    print(f"[eval] sampling metrics done in {time.time() - t0:.0f}s")

    enc = X.load_encoder(paths["encoders"], "encoder")
    enc_k0 = X.load_encoder(paths["encoders"], "encoder.k0")
    enc_can = X.load_encoder(paths["encoders"], "encoder.canonical")

    t0 = time.time()
    report["ladder"] = X.eval_inversion_ladder(gen_main, enc, profile)
    print(f"[eval] inversion ladder done in {time.time() - t0:.0f}s")
    t0 = time.time()
    report["novel_view_kaug"] = X.eval_novel_view_error(gen_main, enc)
    report["novel_view_k0"] = X.eval_novel_view_error(gen_main, enc_k0)
    report["canonical"] = X.eval_canonical_robustness(gen_main, enc, enc_can)
    print(f"[eval] encoder evals done in {time.time() - t0:.0f}s")
    return report


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--workdir", default="runs")
    parser.add_argument("--profile", choices=["quick", "full"], default="quick")
    parser.add_argument("--gan-steps", type=int, default=None)
    parser.add_argument("--encoder-steps", type=int, default=None)
    parser.add_argument("--stages", default="data,gan,ablation,encoders,eval")
    args = parser.parse_args()

    profile = X.FULL_PROFILE if args.profile == "full" else X.ExperimentProfile()
    if args.gan_steps:
        profile = dataclasses.replace(profile, gan_steps=args.gan_steps)
    if args.encoder_steps:
        profile = dataclasses.replace(profile, encoder_steps=args.encoder_steps,
                                      encoder_steps_ablation=args.encoder_steps,
                                      canonical_steps=args.encoder_steps)
    torch.set_num_threads(max(torch.get_num_threads(), 2))

    stages = tuple(s for s in args.stages.split(",") if s != "eval")
    t0 = time.time()
    paths = X.run_pipeline(profile, args.workdir, stages=stages)
    print(f"[pipeline] artifacts ready in {time.time() - t0:.0f}s under {paths['work']}")

    if "eval" in args.stages.split(","):
        report = evaluate(paths, profile)
        out = paths["work"] / "eval.json"
        out.write_text(json.dumps(report, indent=2))
        print(json.dumps({k: v for k, v in report.items() if not isinstance(v, dict)},
                         indent=2))
        print(f"[eval] full report: {out}")


if __name__ == "__main__":
    main()
