"""Camera poses, pixel rays and the dataset pose distribution.

Conventions: world coordinates live in the [-1, 1]^3 cube, +y up. The camera
extrinsic is a world-to-camera matrix in the OpenCV convention (x right,
y down, z forward); the intrinsic is a normalized pinhole matrix with the
principal point at (0.5, 0.5). A pose flattens to 25 reals: 16 row-major
extrinsic entries followed by 9 row-major intrinsic entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


class InvalidPoseError(ValueError):
    pass


@dataclass(frozen=True)
class CameraPose:
    extrinsic: np.ndarray  # (4, 4) world-to-camera
    intrinsic: np.ndarray  # (3, 3) normalized pinhole

    def __post_init__(self):
        ext = np.asarray(self.extrinsic, dtype=np.float64)
        intr = np.asarray(self.intrinsic, dtype=np.float64)
        if ext.shape != (4, 4) or intr.shape != (3, 3):
            raise InvalidPoseError("extrinsic must be 4x4 and intrinsic 3x3")
        if not (np.isfinite(ext).all() and np.isfinite(intr).all()):
            raise InvalidPoseError("pose contains non-finite values")
        if not np.array_equal(ext[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidPoseError("extrinsic bottom row must be [0,0,0,1]")
        r = ext[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-5:
            raise InvalidPoseError("rotation block is not orthonormal")
        if intr[0, 0] <= 0 or intr[1, 1] <= 0:
            raise InvalidPoseError("intrinsic focal entries must be positive")
        object.__setattr__(self, "extrinsic", ext)
        object.__setattr__(self, "intrinsic", intr)

    def as_vector(self) -> np.ndarray:
        """Flatten to the 25-value conditioning vector."""
        return np.concatenate([self.extrinsic.reshape(-1), self.intrinsic.reshape(-1)])

    @classmethod
    def from_vector(cls, vec) -> "CameraPose":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape != (25,):
            raise InvalidPoseError("pose vector must have 25 entries")
        return cls(vec[:16].reshape(4, 4), vec[16:].reshape(3, 3))

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        r = self.extrinsic[:3, :3]
        t = self.extrinsic[:3, 3]
        return -r.T @ t


def pose_from_angles(yaw: float, pitch: float, radius: float = 2.7, focal: float = 1.9) -> CameraPose:
    """Camera on a sphere around the origin, looking at the origin.

    yaw rotates about +y (0 = frontal, positive toward +x); pitch lifts the
    camera toward +y.
    """
    eye = radius * np.array([
        math.sin(yaw) * math.cos(pitch),
        math.sin(pitch),
        math.cos(yaw) * math.cos(pitch),
    ])
    fwd = -eye / np.linalg.norm(eye)
    up = np.array([0.0, 1.0, 0.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 0.0, 1.0])
    x = np.cross(fwd, up)
    x /= np.linalg.norm(x)
    y = np.cross(fwd, x)
    r = np.stack([x, y, fwd])
    ext = np.eye(4)
    ext[:3, :3] = r
    ext[:3, 3] = -r @ eye
    intr = np.array([[focal, 0.0, 0.5], [0.0, focal, 0.5], [0.0, 0.0, 1.0]])
    return CameraPose(ext, intr)


def recover_angles(pose: CameraPose) -> tuple[float, float]:
    """Invert pose_from_angles for a look-at-origin camera."""
    eye = pose.position
    radius = float(np.linalg.norm(eye))
    pitch = math.asin(np.clip(eye[1] / radius, -1.0, 1.0))
    yaw = math.atan2(eye[0], eye[2])
    return yaw, pitch


def canonical_pose(radius: float = 2.7, focal: float = 1.9) -> CameraPose:
    return pose_from_angles(0.0, 0.0, radius=radius, focal=focal)


def rays_for_camera(pose: CameraPose, resolution: int,
                    dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pixel ray origins and unit directions, row-major over the image.

    Returns (origins, directions), each (resolution*resolution, 3).
    """
    r = pose.extrinsic[:3, :3]
    eye = pose.position
    f_x = pose.intrinsic[0, 0]
    f_y = pose.intrinsic[1, 1]
    c_x = pose.intrinsic[0, 2]
    c_y = pose.intrinsic[1, 2]

    px = (np.arange(resolution) + 0.5) / resolution
    u, v = np.meshgrid(px, px, indexing="xy")
    d_cam = np.stack([(u - c_x) / f_x, (v - c_y) / f_y, np.ones_like(u)], axis=-1)
    d_world = d_cam.reshape(-1, 3) @ r  # == r.T @ d per ray
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(eye, d_world.shape).copy()
    return (torch.as_tensor(origins, dtype=dtype), torch.as_tensor(d_world, dtype=dtype))


def poses_to_tensor(poses: list[CameraPose], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.stack([torch.as_tensor(p.as_vector(), dtype=dtype) for p in poses])


def differentiable_rays(yaw: torch.Tensor, pitch: torch.Tensor, resolution: int,
                        radius: float = 2.7, focal: float = 1.9
                        ) -> tuple[torch.Tensor, torch.Tensor]:
    """Torch version of rays_for_camera: gradients flow to yaw/pitch.

    yaw/pitch are 0-dim or (B,) tensors; returns origins/directions (B, N, 3).
    """
    yaw = yaw.reshape(-1)
    pitch = pitch.reshape(-1)
    dtype = yaw.dtype
    eye = radius * torch.stack([torch.sin(yaw) * torch.cos(pitch),
                                torch.sin(pitch),
                                torch.cos(yaw) * torch.cos(pitch)], dim=-1)
    fwd = -eye / eye.norm(dim=-1, keepdim=True)
    up = torch.tensor([0.0, 1.0, 0.0], dtype=dtype).expand_as(fwd)
    x = torch.cross(fwd, up, dim=-1)
    x = x / x.norm(dim=-1, keepdim=True)
    y = torch.cross(fwd, x, dim=-1)
    rot = torch.stack([x, y, fwd], dim=-2)  # (B, 3, 3) rows

    px = (torch.arange(resolution, dtype=dtype) + 0.5) / resolution
    v, u = torch.meshgrid(px, px, indexing="ij")
    d_cam = torch.stack([(u - 0.5) / focal, (v - 0.5) / focal, torch.ones_like(u)], dim=-1)
    d_cam = d_cam.reshape(1, -1, 3)
    d_world = torch.einsum("bnk,bkj->bnj", d_cam.expand(rot.shape[0], -1, -1), rot)
    d_world = d_world / d_world.norm(dim=-1, keepdim=True)
    origins = eye.unsqueeze(1).expand_as(d_world)
    return origins, d_world


class PosePool:
    """Gaussian fit over dataset (yaw, pitch), clipped to the observed range.

    Used for the generator pose-conditioning swap; sampling is reproducible
    given a seeded numpy Generator.
    """

    def __init__(self, poses: list[CameraPose]):
        if not poses:
            raise ValueError("pose pool requires at least one pose")
        angles = np.array([recover_angles(p) for p in poses])
        self.mean = angles.mean(axis=0)
        self.cov = np.cov(angles.T) if len(poses) > 1 else np.eye(2) * 1e-6
        self.cov = np.atleast_2d(self.cov) + np.eye(2) * 1e-12
        self.lo = angles.min(axis=0)
        self.hi = angles.max(axis=0)
        self.radius = float(np.mean([np.linalg.norm(p.position) for p in poses]))
        self.focal = float(np.mean([p.intrinsic[0, 0] for p in poses]))

    def sample_angles(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        draws = rng.multivariate_normal(self.mean, self.cov, size=n)
        return np.clip(draws, self.lo, self.hi)

    def sample(self, rng: np.random.Generator) -> CameraPose:
        yaw, pitch = self.sample_angles(rng, 1)[0]
        return pose_from_angles(float(yaw), float(pitch), radius=self.radius, focal=self.focal)


def pose_swap(conditioning: CameraPose, prob: float, pool: PosePool,
              rng: np.random.Generator) -> CameraPose:
    """With probability `prob`, replace the conditioning pose by a pool draw."""
    if pool is None:
        raise ValueError("pose_swap requires a fitted pose pool")
    if rng.random() < prob:
        return pool.sample(rng)
    return conditioning
