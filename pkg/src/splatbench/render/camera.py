"""Pinhole camera model.

Conventions used across the whole package:
  - camera frame: x right, y down, z forward (optical axis)
  - pose is the 4x4 rigid camera-to-world transform
  - pixel (u, v) = (column, row), sample points at integer coordinates,
    u = fx * x/z + cx, v = fy * y/z + cy
  - depth maps hold z-depth (distance along the optical axis), not ray length
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class Camera:
    pose: np.ndarray  # 4x4 camera-to-world
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        rot = self.pose[:3, :3]
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-6:
            raise ValueError("pose rotation block is not orthonormal (tol 1e-6)")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        self.width = int(self.width)
        self.height = int(self.height)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts.reshape(-1, 3) - self.position) @ self.rotation

    def cam_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts.reshape(-1, 3) @ self.rotation.T + self.position

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """(N,3) camera-frame points -> (N,2) pixel coords. No validity check."""
        pts = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
        z = pts[:, 2]
        return np.stack([self.fx * pts[:, 0] / z + self.cx,
                         self.fy * pts[:, 1] / z + self.cy], axis=1)

    def backproject(self, u, v, depth) -> np.ndarray:
        """Pixel coords + z-depth -> (N,3) camera-frame points."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        return np.stack([(u - self.cx) / self.fx * depth,
                         (v - self.cy) / self.fy * depth,
                         depth], axis=-1)

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) world-frame ray directions with unit z in the camera frame.

        With this scaling, the ray parameter t at a hit equals its z-depth.
        """
        us, vs = np.meshgrid(np.arange(self.width), np.arange(self.height))
        dirs_cam = np.stack([(us - self.cx) / self.fx,
                             (vs - self.cy) / self.fy,
                             np.ones_like(us, dtype=np.float64)], axis=-1)
        return dirs_cam @ self.rotation.T

    def visible(self, point_world: np.ndarray, znear: float = 0.05) -> bool:
        """True if a world point projects inside the image in front of the camera."""
        p = self.world_to_cam(point_world)[0]
        if p[2] <= znear:
            return False
        u, v = self.project(p[None])[0]
        return 0 <= u <= self.width - 1 and 0 <= v <= self.height - 1


def intrinsics_for(width: int, height: int, hfov_deg: float = 70.0) -> tuple:
    """fx, fy, cx, cy for a square-pixel camera with given horizontal FOV."""
    fx = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
    return fx, fx, (width - 1) / 2.0, (height - 1) / 2.0


def look_at(eye, target, width: int, height: int, hfov_deg: float = 70.0) -> Camera:
    """Camera at `eye` with optical axis through `target`, world z kept up."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    up = WORLD_UP if abs(forward @ WORLD_UP) < 0.999 else np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = eye
    fx, fy, cx, cy = intrinsics_for(width, height, hfov_deg)
    return Camera(pose, fx, fy, cx, cy, width, height)
