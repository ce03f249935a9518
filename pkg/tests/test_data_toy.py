import json
import math

import numpy as np
import pytest
import torch

from triportrait.camera import pose_from_angles, recover_angles
from triportrait.data import (BalancedSampler, DatasetRecord, FaceDataset, augment,
                              load_mask, one_hot_mask, rebalance_weights)
from triportrait.errors import RejectedInputError
from triportrait.palette import NUM_CLASSES
from triportrait.toyfaces import (ToyFaceSpec, generate_toy_dataset, render_identity,
                                  sample_identity)


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    generate_toy_dataset(ToyFaceSpec(resolution=32), count=6, out_dir=out, seed=7)
    return out


def test_dataset_cardinality(toy_dir):
    assert len(list((toy_dir / "images").glob("*.png"))) == 6
    assert len(list((toy_dir / "masks").glob("*.png"))) == 6
    poses = json.loads((toy_dir / "poses.json").read_text())
    assert len(poses) == 6
    assert all(len(v) == 25 for v in poses.values())


def test_masks_stay_in_class_range(toy_dir):
    for path in (toy_dir / "masks").glob("*.png"):
        mask = load_mask(path)
        assert mask.max().item() < NUM_CLASSES
        assert mask.min().item() >= 0


def test_toy_faces_have_the_advertised_parts():
    spec = ToyFaceSpec(resolution=64, glasses_prob=1.0)
    rng = np.random.default_rng(3)
    identity = sample_identity(spec, rng)
    _, mask = render_identity(identity, pose_from_angles(0.0, 0.0), 64)
    present = set(np.unique(mask).tolist())
    # head, hair, both eyes, nose, mouth, cloth, glasses, background
    for cls in (0, 1, 2, 4, 5, 10, 13, 18, 3):
        assert cls in present, f"class {cls} missing from frontal toy render"


def test_multiview_class_histograms_stay_close():
    # histogram oracle: same identity at two poses keeps class mass stable
    spec = ToyFaceSpec(resolution=64)
    rng = np.random.default_rng(11)
    identity = sample_identity(spec, rng)
    _, mask_a = render_identity(identity, pose_from_angles(-0.35, 0.05), 64)
    _, mask_b = render_identity(identity, pose_from_angles(0.35, 0.0), 64)
    h_a = np.bincount(mask_a.reshape(-1), minlength=NUM_CLASSES) / mask_a.size
    h_b = np.bincount(mask_b.reshape(-1), minlength=NUM_CLASSES) / mask_b.size
    tv = 0.5 * np.abs(h_a - h_b).sum()
    assert tv < 0.20


def test_flip_is_involutive(toy_dir):
    ds = FaceDataset(toy_dir)
    rec = ds.records[0]
    twice = augment(augment(rec))
    assert twice.flip == rec.flip
    np.testing.assert_allclose(twice.pose.extrinsic, rec.pose.extrinsic, atol=1e-12)
    img_a, mask_a, _ = ds.load(rec)
    img_b, mask_b, _ = ds.load(twice)
    torch.testing.assert_close(img_a, img_b, rtol=0, atol=0)
    torch.testing.assert_close(mask_a, mask_b, rtol=0, atol=0)


def test_flip_negates_yaw(toy_dir):
    ds = FaceDataset(toy_dir)
    rec = ds.records[0]
    yaw, pitch = recover_angles(rec.pose)
    f_yaw, f_pitch = recover_angles(augment(rec).pose)
    assert math.isclose(f_yaw, -yaw, abs_tol=1e-9)
    assert math.isclose(f_pitch, pitch, abs_tol=1e-9)


def test_flip_mirrors_image_and_swaps_eye_classes(toy_dir):
    ds = FaceDataset(toy_dir)
    rec = ds.records[0]
    img, mask, _ = ds.load(rec)
    img_f, mask_f, _ = ds.load(augment(rec))
    torch.testing.assert_close(img_f, img.flip(-1), rtol=0, atol=0)
    flipped = mask.flip(-1)
    assert torch.equal(mask_f == 4, flipped == 5)
    assert torch.equal(mask_f == 5, flipped == 4)


def test_rebalance_weight_formula_oracle():
    # 1% of samples in a steep bin must receive >= 5x the uniform weight
    rng = np.random.default_rng(0)
    yaws = np.concatenate([rng.uniform(-0.2, 0.2, 990), rng.uniform(0.65, 0.7, 10)])
    w = rebalance_weights(yaws, bins=9)
    steep = w[-10:].mean()
    assert steep >= 5.0
    assert w.mean() == pytest.approx(1.0, abs=1e-9)
    # oracle: per-sample weight == 1 / (occupied_bins * bin_frequency), renormalized
    edges = np.linspace(yaws.min() - 1e-9, yaws.max() + 1e-9, 10)
    which = np.clip(np.digitize(yaws, edges) - 1, 0, 8)
    counts = np.bincount(which, minlength=9)
    occ = (counts > 0).sum()
    raw = 1.0 / (occ * counts[which] / len(yaws))
    expected = raw * len(yaws) / raw.sum()
    np.testing.assert_allclose(w, expected, rtol=1e-9)


def test_one_hot_shape_and_exactness(toy_dir):
    mask = load_mask(next(iter((toy_dir / "masks").glob("*.png"))))
    oh = one_hot_mask(mask)
    assert oh.shape == (NUM_CLASSES, *mask.shape)
    assert torch.equal(oh.argmax(dim=0), mask)
    assert torch.equal(oh.sum(dim=0), torch.ones_like(mask, dtype=torch.float32))


def test_out_of_range_mask_rejected(tmp_path):
    from PIL import Image

    bad = np.full((8, 8), 31, dtype=np.uint8)
    path = tmp_path / "bad.png"
    Image.fromarray(bad, mode="L").save(path)
    with pytest.raises(RejectedInputError):
        load_mask(path)


def test_balanced_sampler_deterministic(toy_dir):
    ds = FaceDataset(toy_dir)
    a = BalancedSampler(ds, batch_size=3, seed=5).next_batch()
    b = BalancedSampler(ds, batch_size=3, seed=5).next_batch()
    for x, y in zip(a, b):
        torch.testing.assert_close(x, y, rtol=0, atol=0)
