import json

import numpy as np
import pytest
import torch
from PIL import Image

from triportrait.cli import main

from conftest import tiny_model_cfg, tiny_render_cfg


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    main(["make-toy-data", "--count", "6", "--out", str(root / "data"),
          "--seed", "1", "--resolution", "16"])
    import dataclasses

    cfg = {
        "model": dataclasses.asdict(tiny_model_cfg(
            trunk_resolution=8, plane_resolution=16, trunk_channels=8,
            branch_channels=8, superres_channels=8)),
        "render": dataclasses.asdict(tiny_render_cfg(
            lr_resolution=8, output_resolution=16, coarse_samples=6, fine_samples=6)),
        "train": {"batch_size": 2, "stage_schedule": [[8, 4]], "seed": 0,
                  "log_every": 1, "checkpoint_every": 50},
    }
    (root / "cfg.json").write_text(json.dumps(cfg))
    main(["train", "--config", str(root / "cfg.json"), "--data", str(root / "data"),
          "--out", str(root / "run")])
    ckpt = root / "run" / "checkpoint_stage0_final.tpck"
    assert ckpt.exists()
    main(["train-encoders", "--ckpt", str(ckpt), "--steps", "1"])
    main(["train-encoders", "--ckpt", str(ckpt), "--steps", "1", "--canonical"])
    return root, ckpt


def test_make_toy_data_layout(workspace):
    root, _ = workspace
    assert (root / "data" / "poses.json").exists()
    assert len(list((root / "data" / "images").glob("*.png"))) == 6


def test_invert_render_restyle_mesh_pipeline(workspace, capsys):
    root, ckpt = workspace
    image = sorted((root / "data" / "images").glob("*.png"))[0]
    mask = root / "data" / "masks" / image.name
    # the dataset is 16x16 already, matching the model output resolution
    session = root / "portrait.session"
    main(["invert", "--image", str(image), "--mask", str(mask), "--ckpt", str(ckpt),
          "--out", str(session), "--opt-steps", "2", "--pti-steps", "2"])
    assert session.exists()

    out_png = root / "view.png"
    main(["render", "--session", str(session), "--yaw", "15", "--pitch", "-5",
          "--out", str(out_png)])
    img = Image.open(out_png)
    assert img.size == (16, 16)

    restyled = root / "restyled.png"
    main(["restyle", "--session", str(session), "--classes", "hair,cloth",
          "--style-seed", "3", "--out", str(restyled)])
    assert restyled.exists()

    obj = root / "head.obj"
    main(["extract-mesh", "--session", str(session), "--res", "16", "--out", str(obj)])
    assert obj.exists()
    capsys.readouterr()
