"""Gaussian splat scene representation.

A scene is a flat, ordered collection of anisotropic 3D Gaussians stored as
struct-of-arrays (float64 throughout), plus a semantic codebook and metadata.
Covariances are kept factored as (scale, rotation) so they are positive
definite by construction.
"""

from __future__ import annotations

import copy
import datetime
from dataclasses import dataclass, field

import numpy as np

from .codebook import EmbeddingCodebook

OPACITY_EPS = 1e-4  # opacities live in [OPACITY_EPS, 1 - OPACITY_EPS]


def n_sh_coeffs(sh_degree: int) -> int:
    return (sh_degree + 1) ** 2


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from quaternions (w, x, y, z); shape (..., 4) -> (..., 3, 3).

    Quaternions are normalized internally, so callers may pass raw values.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("zero-norm quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    rot = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


@dataclass
class GaussianSplat:
    """One anisotropic Gaussian.

    center   -- (3,) world position, meters
    scale    -- (3,) strictly positive per-axis extents, meters
    rotation -- (4,) unit quaternion (w, x, y, z)
    opacity  -- scalar in the open interval (0, 1)
    color    -- (n_sh, 3) spherical-harmonic coefficients; n_sh = (deg+1)^2
    semantic -- (d,) semantic code
    """

    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray
    semantic: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.color = np.atleast_2d(np.asarray(self.color, dtype=np.float64))
        self.semantic = np.asarray(self.semantic, dtype=np.float64).ravel()
        self.opacity = float(self.opacity)
        if not np.all(self.scale > 0):
            raise ValueError("scale components must be strictly positive")
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must have unit norm (tol 1e-6)")
        if not (0.0 < self.opacity < 1.0):
            raise ValueError("opacity must lie in the open interval (0, 1)")


def covariance(splat: GaussianSplat) -> np.ndarray:
    """3x3 covariance R diag(scale^2) R^T; symmetric positive definite."""
    rot = quat_to_rotmat(splat.rotation)
    return (rot * splat.scale**2) @ rot.T


@dataclass
class EditRecord:
    """One append-only scene edit; payloads are complete so the log replays exactly."""

    op: str  # "add" | "remove"
    label: str = ""
    # op == "add": dict of per-splat arrays keyed like SceneModel fields
    # op == "remove": sorted int64 index array (indices valid when applied)
    payload: dict | np.ndarray | None = None


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class SceneModel:
    """Editable collection of Gaussian splats with codebook and edit log.

    Arrays (all float64):
      centers (N,3), scales (N,3), rotations (N,4), opacities (N,),
      colors (N, n_sh, 3), semantics (N, d).

    Concurrency: one writer at a time; readers should work on `snapshot()`
    copies, which are fully independent of subsequent edits.
    """

    def __init__(self, centers, scales, rotations, opacities, colors, semantics,
                 codebook: EmbeddingCodebook, sh_degree: int = 0,
                 bounds: np.ndarray | None = None):
        self.centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
        n = self.centers.shape[0]
        self.scales = np.ascontiguousarray(scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float64).reshape(n)
        self.colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(
            n, n_sh_coeffs(sh_degree), 3)
        self.semantics = np.ascontiguousarray(semantics, dtype=np.float64).reshape(n, -1)
        self.codebook = codebook
        self.sh_degree = int(sh_degree)
        if bounds is None:
            bounds = np.stack([self.centers.min(axis=0), self.centers.max(axis=0)]) \
                if n else np.zeros((2, 3))
        self.bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
        self.created = _now()
        self.updated = self.created
        self.edit_log: list[EditRecord] = []

    # -- basic accessors ----------------------------------------------------

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def semantic_dim(self) -> int:
        return self.semantics.shape[1]

    def splat(self, i: int) -> GaussianSplat:
        return GaussianSplat(self.centers[i], self.scales[i], self.rotations[i],
                             self.opacities[i], self.colors[i], self.semantics[i])

    def __iter__(self):
        return (self.splat(i) for i in range(len(self)))

    def covariances(self) -> np.ndarray:
        """(N,3,3) covariances for all splats."""
        rot = quat_to_rotmat(self.rotations)
        return np.einsum("nij,nj,nkj->nik", rot, self.scales**2, rot)

    def scene_extent(self) -> float:
        return float(np.linalg.norm(self.bounds[1] - self.bounds[0]))

    def validate(self) -> None:
        """Raise ValueError on any violated invariant."""
        for name in ("centers", "scales", "rotations", "opacities", "colors", "semantics"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if len(self) and not np.all(self.scales > 0):
            raise ValueError("non-positive scale")
        if len(self):
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-6:
                raise ValueError("non-unit rotation quaternion")
            if np.any(self.opacities <= 0) or np.any(self.opacities >= 1):
                raise ValueError("opacity outside (0, 1)")

    def snapshot(self) -> "SceneModel":
        """Deep, immutable-by-convention copy safe to render while this scene is edited."""
        return copy.deepcopy(self)

    def touch(self) -> None:
        self.updated = _now()

    # -- editing ------------------------------------------------------------

    def _field_dict(self, mask_or_idx) -> dict:
        return {
            "centers": self.centers[mask_or_idx].copy(),
            "scales": self.scales[mask_or_idx].copy(),
            "rotations": self.rotations[mask_or_idx].copy(),
            "opacities": self.opacities[mask_or_idx].copy(),
            "colors": self.colors[mask_or_idx].copy(),
            "semantics": self.semantics[mask_or_idx].copy(),
        }

    def add_splats(self, fields: dict, label: str = "", log: bool = True) -> None:
        """Append splats given a dict of per-splat arrays (same keys as storage)."""
        n_new = np.asarray(fields["centers"]).reshape(-1, 3).shape[0]
        if n_new == 0:
            return
        self.centers = np.concatenate(
            [self.centers, np.asarray(fields["centers"], np.float64).reshape(-1, 3)])
        self.scales = np.concatenate(
            [self.scales, np.asarray(fields["scales"], np.float64).reshape(-1, 3)])
        self.rotations = np.concatenate(
            [self.rotations, np.asarray(fields["rotations"], np.float64).reshape(-1, 4)])
        self.opacities = np.concatenate(
            [self.opacities, np.asarray(fields["opacities"], np.float64).reshape(-1)])
        self.colors = np.concatenate(
            [self.colors, np.asarray(fields["colors"], np.float64).reshape(
                -1, self.colors.shape[1], 3)])
        self.semantics = np.concatenate(
            [self.semantics, np.asarray(fields["semantics"], np.float64).reshape(
                -1, self.semantic_dim)])
        if log:
            self.edit_log.append(EditRecord("add", label, {
                k: np.asarray(v, np.float64).copy() for k, v in fields.items()}))
        self.touch()

    def remove_splats(self, indices, label: str = "", log: bool = True) -> None:
        """Delete splats by index (into the current ordering)."""
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= len(self):
            raise IndexError("splat index out of range")
        keep = np.ones(len(self), dtype=bool)
        keep[idx] = False
        self.centers = self.centers[keep]
        self.scales = self.scales[keep]
        self.rotations = self.rotations[keep]
        self.opacities = self.opacities[keep]
        self.colors = self.colors[keep]
        self.semantics = self.semantics[keep]
        if log:
            self.edit_log.append(EditRecord("remove", label, idx))
        self.touch()

    def replay_edits(self, records: list[EditRecord]) -> None:
        """Apply a logged edit sequence (used to reproduce pre-fine-tune edits)."""
        for rec in records:
            if rec.op == "add":
                self.add_splats(rec.payload, label=rec.label, log=True)
            elif rec.op == "remove":
                self.remove_splats(rec.payload, label=rec.label, log=True)
            else:
                raise ValueError(f"unknown edit op {rec.op!r}")

    # -- equality (used by round-trip tests) ---------------------------------

    def equal_fields(self, other: "SceneModel") -> bool:
        """Bit-exact equality of all splat fields, codebook, and edit log."""
        if len(self) != len(other) or self.sh_degree != other.sh_degree:
            return False
        for name in ("centers", "scales", "rotations", "opacities", "colors", "semantics"):
            if not np.array_equal(getattr(self, name), getattr(other, name)):
                return False
        if not np.array_equal(self.bounds, other.bounds):
            return False
        if not self.codebook.equal(other.codebook):
            return False
        if len(self.edit_log) != len(other.edit_log):
            return False
        for a, b in zip(self.edit_log, other.edit_log):
            if a.op != b.op or a.label != b.label:
                return False
            if a.op == "add":
                if any(not np.array_equal(a.payload[k], b.payload[k]) for k in a.payload):
                    return False
            else:
                if not np.array_equal(a.payload, b.payload):
                    return False
        return True
