"""Procedural toy portrait dataset with exact-by-construction semantic masks.

Each identity is a set of parametric solids (ellipsoid head, hair cap, two
eyes, nose, mouth, shoulder cloth, optional glasses rings), ray-traced
analytically per pixel. The nearest hit's class index forms the mask; rays
that miss everything fall to the background class, which acts as a backdrop
plane at infinity. Poses are drawn from a truncated Gaussian over yaw/pitch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import palette
from .camera import CameraPose, pose_from_angles

_LIGHT = np.array([0.35, 0.45, 0.82])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)
_AMBIENT = 0.4


@dataclass
class ToyFaceSpec:
    resolution: int = 64
    glasses_prob: float = 0.3
    yaw_std: float = 0.35
    yaw_max: float = 0.7
    pitch_mean: float = 0.03
    pitch_std: float = 0.12
    pitch_max: float = 0.35
    camera_radius: float = 2.7
    focal: float = 1.9
    size_jitter: float = 0.12
    color_jitter: float = 0.18


@dataclass
class Ellipsoid:
    center: np.ndarray
    radii: np.ndarray
    class_id: int
    color: np.ndarray


@dataclass
class Ring:
    """Flat annulus with +z normal; stands in for a glasses lens rim."""

    center: np.ndarray
    inner: float
    outer: float
    class_id: int
    color: np.ndarray


@dataclass
class ToyIdentity:
    parts: list = field(default_factory=list)
    background: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.25, 0.3]))


def _jit(rng: np.random.Generator, amount: float) -> float:
    return 1.0 + rng.uniform(-amount, amount)


def _color(rng: np.random.Generator, base, amount: float) -> np.ndarray:
    c = np.asarray(base, dtype=np.float64) / 255.0
    return np.clip(c * (1 + rng.uniform(-amount, amount, 3)), 0.02, 1.0)


def sample_identity(spec: ToyFaceSpec, rng: np.random.Generator) -> ToyIdentity:
    j = spec.size_jitter
    cj = spec.color_jitter
    cls = palette.CLASS_INDEX
    skin = _color(rng, (224, 172, 138), cj)
    parts = [
        Ellipsoid(np.array([0.0, 0.02, 0.0]),
                  np.array([0.54 * _jit(rng, j), 0.70 * _jit(rng, j), 0.60 * _jit(rng, j)]),
                  cls["skin"], skin),
        Ellipsoid(np.array([0.0, 0.30 + rng.uniform(-0.05, 0.08), -0.16]),
                  np.array([0.60 * _jit(rng, j), 0.62 * _jit(rng, j), 0.58 * _jit(rng, j)]),
                  cls["hair"], _color(rng, (70, 42, 22), 0.5)),
        Ellipsoid(np.array([-0.21, 0.12, 0.50]),
                  np.array([0.075, 0.075, 0.05]) * _jit(rng, j),
                  cls["left_eye"], _color(rng, (245, 245, 245), 0.1)),
        Ellipsoid(np.array([0.21, 0.12, 0.50]),
                  np.array([0.075, 0.075, 0.05]) * _jit(rng, j),
                  cls["right_eye"], _color(rng, (235, 235, 235), 0.1)),
        Ellipsoid(np.array([0.0, -0.02, 0.56]),
                  np.array([0.09, 0.15, 0.11]) * _jit(rng, j),
                  cls["nose"], np.clip(skin * 1.06, 0, 1)),
        Ellipsoid(np.array([0.0, -0.30, 0.47]),
                  np.array([0.17 * _jit(rng, j), 0.055 * _jit(rng, j), 0.07]),
                  cls["mouth"], _color(rng, (165, 60, 60), cj)),
        Ellipsoid(np.array([0.0, -1.12, -0.02]),
                  np.array([0.85 * _jit(rng, j), 0.55 * _jit(rng, j), 0.5]),
                  cls["cloth"], _color(rng, (52, 70, 120), 0.5)),
    ]
    if rng.random() < spec.glasses_prob:
        rim = _color(rng, (30, 60, 160), 0.4)
        for sx in (-1.0, 1.0):
            parts.append(Ring(np.array([sx * 0.21, 0.12, 0.58]),
                              inner=0.085, outer=0.125 * _jit(rng, j),
                              class_id=cls["eye_glasses"], color=rim))
    return ToyIdentity(parts=parts, background=_color(rng, (55, 62, 80), 0.6))


def sample_pose(spec: ToyFaceSpec, rng: np.random.Generator) -> CameraPose:
    yaw = np.clip(rng.normal(0.0, spec.yaw_std), -spec.yaw_max, spec.yaw_max)
    pitch = np.clip(rng.normal(spec.pitch_mean, spec.pitch_std),
                    -spec.pitch_max, spec.pitch_max)
    return pose_from_angles(float(yaw), float(pitch),
                            radius=spec.camera_radius, focal=spec.focal)


def _ellipsoid_hits(part: Ellipsoid, origins, dirs):
    o = (origins - part.center) / part.radii
    d = dirs / part.radii
    a = (d * d).sum(-1)
    b = 2.0 * (o * d).sum(-1)
    c = (o * o).sum(-1) - 1.0
    disc = b * b - 4 * a * c
    hit = disc > 0
    sq = np.sqrt(np.clip(disc, 0, None))
    t0 = (-b - sq) / (2 * a)
    t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > 1e-4, t0, t1)
    hit &= t > 1e-4
    t = np.where(hit, t, np.inf)
    t_safe = np.where(hit, t, 1.0)
    p = origins + t_safe[..., None] * dirs
    n = (p - part.center) / (part.radii ** 2)
    n /= np.linalg.norm(n, axis=-1, keepdims=True) + 1e-12
    return t, n


def _ring_hits(part: Ring, origins, dirs):
    dz = dirs[..., 2]
    t = np.where(np.abs(dz) > 1e-8, (part.center[2] - origins[..., 2]) / dz, np.inf)
    p = origins + t[..., None] * dirs
    r = np.linalg.norm(p[..., :2] - part.center[:2], axis=-1)
    hit = (t > 1e-4) & (r >= part.inner) & (r <= part.outer)
    t = np.where(hit, t, np.inf)
    n = np.zeros_like(dirs)
    n[..., 2] = np.where(dz < 0, 1.0, -1.0)
    return t, n


def render_identity(identity: ToyIdentity, pose: CameraPose,
                    resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns (image float in [0,1], index mask uint8), both resolution^2."""
    r = pose.extrinsic[:3, :3]
    eye = pose.position
    f_x, f_y = pose.intrinsic[0, 0], pose.intrinsic[1, 1]
    c_x, c_y = pose.intrinsic[0, 2], pose.intrinsic[1, 2]
    px = (np.arange(resolution) + 0.5) / resolution
    u, v = np.meshgrid(px, px, indexing="xy")
    d_cam = np.stack([(u - c_x) / f_x, (v - c_y) / f_y, np.ones_like(u)], axis=-1)
    dirs = d_cam @ r
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(eye, dirs.shape)

    best_t = np.full(dirs.shape[:2], np.inf)
    mask = np.zeros(dirs.shape[:2], dtype=np.uint8)
    image = np.tile(identity.background, (*dirs.shape[:2], 1))
    for part in identity.parts:
        if isinstance(part, Ellipsoid):
            t, n = _ellipsoid_hits(part, origins, dirs)
        else:
            t, n = _ring_hits(part, origins, dirs)
        closer = t < best_t
        if not closer.any():
            continue
        best_t = np.where(closer, t, best_t)
        mask = np.where(closer, part.class_id, mask)
        lambert = _AMBIENT + (1 - _AMBIENT) * np.clip(n @ _LIGHT, 0, None)
        shaded = part.color[None, None, :] * lambert[..., None]
        image = np.where(closer[..., None], shaded, image)
    return np.clip(image, 0.0, 1.0), mask


def generate_toy_dataset(spec: ToyFaceSpec, count: int, out_dir: str | Path,
                         seed: int = 0) -> Path:
    """Render `count` identities to the dataset layout (images/, masks/, poses.json)."""
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e
    rng = np.random.default_rng(seed)
    poses: dict[str, list[float]] = {}
    for i in range(count):
        identity = sample_identity(spec, rng)
        pose = sample_pose(spec, rng)
        image, mask = render_identity(identity, pose, spec.resolution)
        stem = f"{i:06d}"
        Image.fromarray((image * 255).round().astype(np.uint8)).save(out / "images" / f"{stem}.png")
        Image.fromarray(mask, mode="L").save(out / "masks" / f"{stem}.png")
        poses[stem] = [float(x) for x in pose.as_vector()]
    (out / "poses.json").write_text(json.dumps(poses))
    return out
