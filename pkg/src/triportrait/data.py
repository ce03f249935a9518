"""Dataset ingestion: images + index masks + poses, flip/rebalance augmentation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .camera import CameraPose, PosePool, pose_from_angles, recover_angles
from .errors import RejectedInputError
from .palette import NUM_CLASSES

# mirrored classes swap sides under a horizontal flip
_FLIP_PAIRS = ((4, 5), (6, 7), (8, 9))


@dataclass(frozen=True)
class DatasetRecord:
    image_path: Path
    mask_path: Path
    pose: CameraPose
    flip: bool = False


def augment(record: DatasetRecord) -> DatasetRecord:
    """Horizontal flip: mirrors image and mask, negates the yaw."""
    yaw, pitch = recover_angles(record.pose)
    radius = float(np.linalg.norm(record.pose.position))
    flipped_pose = pose_from_angles(-yaw, pitch, radius=radius,
                                    focal=float(record.pose.intrinsic[0, 0]))
    return replace(record, pose=flipped_pose, flip=not record.flip)


def _flip_mask_classes(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for a, b in _FLIP_PAIRS:
        sel_a = mask == a
        sel_b = mask == b
        out[sel_a] = b
        out[sel_b] = a
    return out


def load_image(path: Path, flip: bool = False) -> torch.Tensor:
    """PNG -> (3, H, W) float tensor in [-1, 1]."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    if flip:
        img = img[:, ::-1].copy()
    return torch.from_numpy(img).permute(2, 0, 1) * 2.0 - 1.0


def load_mask(path: Path, flip: bool = False) -> torch.Tensor:
    """Index-mask PNG -> (H, W) int64 tensor; class indices must be < 19."""
    mask = np.asarray(Image.open(path), dtype=np.int64)
    if mask.ndim == 3:
        mask = mask[..., 0]
    if mask.max() >= NUM_CLASSES:
        raise RejectedInputError(f"mask {path} contains class index {mask.max()} >= {NUM_CLASSES}")
    if flip:
        mask = _flip_mask_classes(mask[:, ::-1])
    return torch.from_numpy(np.ascontiguousarray(mask))


def one_hot_mask(mask: torch.Tensor) -> torch.Tensor:
    """(H, W) or (B, H, W) index mask -> float one-hot with 19 channels first."""
    oh = torch.nn.functional.one_hot(mask, NUM_CLASSES).float()
    return oh.permute(2, 0, 1) if mask.ndim == 2 else oh.permute(0, 3, 1, 2)


def rebalance_weights(yaws: np.ndarray, bins: int = 9, strength: float = 1.0) -> np.ndarray:
    """Per-sample weights inversely proportional to yaw-bin frequency.

    With strength 1 each bin receives equal total mass, so a bin holding
    fraction f of the data gets per-sample weight (1 / (bins * f)) ** strength
    (uniform sampling == weight 1).
    """
    edges = np.linspace(yaws.min() - 1e-9, yaws.max() + 1e-9, bins + 1)
    which = np.clip(np.digitize(yaws, edges) - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    occupied = counts > 0
    freq = counts / len(yaws)
    w_bin = np.zeros(bins)
    w_bin[occupied] = (1.0 / (occupied.sum() * freq[occupied])) ** strength
    weights = w_bin[which]
    return weights * len(yaws) / weights.sum()


class FaceDataset:
    """images/NNNNNN.png + masks/NNNNNN.png + poses.json."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        poses_file = self.root / "poses.json"
        if not poses_file.exists():
            raise FileNotFoundError(f"{poses_file} not found")
        raw = json.loads(poses_file.read_text())
        self.records: list[DatasetRecord] = []
        for stem in sorted(raw):
            img = self.root / "images" / f"{stem}.png"
            msk = self.root / "masks" / f"{stem}.png"
            if not img.exists() or not msk.exists():
                raise FileNotFoundError(f"missing files for dataset entry {stem}")
            self.records.append(DatasetRecord(img, msk, CameraPose.from_vector(raw[stem])))
        if not self.records:
            raise RejectedInputError(f"dataset at {self.root} is empty")
        self.resolution = load_mask(self.records[0].mask_path).shape[-1]

    def __len__(self) -> int:
        return len(self.records)

    def pose_pool(self) -> PosePool:
        return PosePool([r.pose for r in self.records])

    def load(self, record: DatasetRecord) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        image = load_image(record.image_path, record.flip)
        mask = load_mask(record.mask_path, record.flip)
        pose = torch.as_tensor(record.pose.as_vector(), dtype=torch.float32)
        return image, mask, pose


class BalancedSampler:
    """Flip-augmented, pose-rebalanced batch sampler over a FaceDataset."""

    def __init__(self, dataset: FaceDataset, batch_size: int, seed: int = 0,
                 flip_prob: float = 0.5, rebalance: bool = True, image_size: int | None = None):
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.flip_prob = flip_prob
        self.image_size = image_size
        yaws = np.array([recover_angles(r.pose)[0] for r in dataset.records])
        if rebalance and len(dataset) > 1:
            self.weights = rebalance_weights(yaws)
        else:
            self.weights = np.ones(len(dataset))
        self.probs = self.weights / self.weights.sum()

    def next_batch(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        idx = self.rng.choice(len(self.dataset), size=self.batch_size, p=self.probs)
        images, masks, poses = [], [], []
        for i in idx:
            rec = self.dataset.records[int(i)]
            if self.rng.random() < self.flip_prob:
                rec = augment(rec)
            img, mask, pose = self.dataset.load(rec)
            if self.image_size and img.shape[-1] != self.image_size:
                img = torch.nn.functional.interpolate(
                    img.unsqueeze(0), size=(self.image_size, self.image_size),
                    mode="bilinear", align_corners=False).squeeze(0)
                mask = torch.nn.functional.interpolate(
                    mask[None, None].float(), size=(self.image_size, self.image_size),
                    mode="nearest").long().squeeze()
            images.append(img)
            masks.append(mask)
            poses.append(pose)
        return torch.stack(images), torch.stack(masks), torch.stack(poses)
