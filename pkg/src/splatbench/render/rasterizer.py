"""Forward rendering and analytic gradients.

`render` produces color / depth / semantic / alpha images; with
`keep_cache=True` the returned output carries a ForwardCache that
`render_gradients` (and the trainer) replays for the backward pass.
Rendering is deterministic: identical scene and camera give bit-identical
images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.model import SceneModel
from .camera import Camera
from . import kernels, project

DEPTH_ALPHA_FLOOR = 0.1   # pixels with less accumulated weight show background depth
DEFAULT_BG_DEPTH = 100.0  # meters; "far" sentinel for empty pixels


class MissingForwardCacheError(RuntimeError):
    """render_gradients called without a matching forward cache."""


@dataclass
class ForwardCache:
    scene: SceneModel
    camera: Camera
    proj: project.Projection
    tile_splats: np.ndarray
    tile_offsets: np.ndarray
    tiles_x: int
    sem: np.ndarray          # (M, d) compact semantic codes
    bg_color: np.ndarray
    trans_final: np.ndarray  # (H, W)
    nproc: np.ndarray        # (H, W) examined contributor counts
    depth_accum: np.ndarray  # (H, W) sum of w_i * z_i


@dataclass
class RenderOutput:
    color: np.ndarray              # (H, W, 3) in [0, 1]
    depth: np.ndarray              # (H, W) meters
    semantic: np.ndarray | None    # (H, W, d) when requested
    alpha: np.ndarray              # (H, W) accumulated opacity
    cache: ForwardCache | None = None


def render(scene: SceneModel, camera: Camera, *, bg_color=(0.0, 0.0, 0.0),
           bg_depth: float = DEFAULT_BG_DEPTH, with_semantic: bool = True,
           keep_cache: bool = False) -> RenderOutput:
    """Rasterize the scene; splats behind the near plane are skipped silently."""
    h, w = camera.height, camera.width
    bg = np.asarray(bg_color, dtype=np.float64).reshape(3)
    proj = project.preprocess(scene, camera)
    m = proj.idx.size
    d = scene.semantic_dim
    sem = (np.ascontiguousarray(scene.semantics[proj.idx]) if with_semantic
           else np.zeros((m, 0)))

    out_color = np.zeros((h, w, 3))
    out_sem = np.zeros((h, w, sem.shape[1]))
    depth_accum = np.zeros((h, w))
    trans = np.ones((h, w))
    nproc = np.zeros((h, w), dtype=np.int64)

    tile_splats, tile_offsets, tiles_x, _ = kernels.bin_tiles(
        proj.mu2d, proj.radius, proj.z, w, h)
    if m:
        kernels.forward_kernel(
            tile_splats, tile_offsets, tiles_x,
            np.ascontiguousarray(proj.mu2d), np.ascontiguousarray(proj.conic),
            np.ascontiguousarray(proj.opacity), np.ascontiguousarray(proj.color),
            sem, np.ascontiguousarray(proj.z),
            bg, w, h, out_color, out_sem, depth_accum, trans, nproc)
    else:
        out_color += bg

    wsum = 1.0 - trans
    depth = np.where(wsum >= DEPTH_ALPHA_FLOOR,
                     depth_accum / np.maximum(wsum, 1e-12), bg_depth)
    cache = None
    if keep_cache:
        cache = ForwardCache(scene, camera, proj, tile_splats, tile_offsets,
                             tiles_x, sem, bg, trans, nproc, depth_accum)
    return RenderOutput(color=out_color, depth=depth,
                        semantic=out_sem if with_semantic else None,
                        alpha=wsum, cache=cache)


def _cache_matches(cache: ForwardCache, scene: SceneModel, camera: Camera) -> bool:
    return (cache is not None and cache.scene is scene
            and cache.camera.width == camera.width
            and cache.camera.height == camera.height
            and np.array_equal(cache.camera.pose, camera.pose)
            and (cache.camera.fx, cache.camera.fy, cache.camera.cx, cache.camera.cy)
            == (camera.fx, camera.fy, camera.cx, camera.cy))


def backward_from_cache(cache: ForwardCache, dl_color: np.ndarray,
                        dl_sem: np.ndarray | None = None,
                        dl_depth: np.ndarray | None = None) -> dict:
    """Full-size parameter gradients for arbitrary per-output loss gradients."""
    scene = cache.scene
    camera = cache.camera
    h, w = camera.height, camera.width
    m = cache.proj.idx.size
    d = cache.sem.shape[1]
    n = len(scene)
    n_sh = scene.colors.shape[1]

    dl_color = np.ascontiguousarray(dl_color, dtype=np.float64).reshape(h, w, 3)
    if dl_sem is None:
        dl_sem = np.zeros((h, w, d))
    else:
        dl_sem = np.ascontiguousarray(dl_sem, dtype=np.float64).reshape(h, w, d)
    dl_u = np.zeros((h, w))
    dl_wsum = np.zeros((h, w))
    if dl_depth is not None:
        wsum = 1.0 - cache.trans_final
        mask = wsum >= DEPTH_ALPHA_FLOOR
        safe = np.maximum(wsum, 1e-12)
        dl_u[mask] = (dl_depth / safe)[mask]
        dl_wsum[mask] = (-dl_depth * cache.depth_accum / safe**2)[mask]

    grads = {
        "centers": np.zeros((n, 3)), "scales": np.zeros((n, 3)),
        "rotations": np.zeros((n, 4)), "opacities": np.zeros(n),
        "colors": np.zeros((n, n_sh, 3)), "semantics": np.zeros((n, scene.semantic_dim)),
    }
    if m == 0:
        return grads

    g_mu2d = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_opacity = np.zeros(m)
    g_color = np.zeros((m, 3))
    g_sem = np.zeros((m, d))
    g_z = np.zeros(m)
    kernels.backward_kernel(
        cache.tile_splats, cache.tile_offsets, cache.tiles_x,
        np.ascontiguousarray(cache.proj.mu2d), np.ascontiguousarray(cache.proj.conic),
        np.ascontiguousarray(cache.proj.opacity), np.ascontiguousarray(cache.proj.color),
        cache.sem, np.ascontiguousarray(cache.proj.z),
        cache.bg_color, w, h, cache.trans_final, cache.nproc,
        dl_color, dl_sem, dl_u, dl_wsum,
        g_mu2d, g_conic, g_opacity, g_color, g_sem, g_z)

    coeffs = scene.colors[cache.proj.idx] if scene.sh_degree > 0 else None
    out = project.backward(cache.proj, camera, scene.sh_degree, n,
                           g_mu2d, g_conic, g_color, g_opacity, g_z, n_sh,
                           coeffs=coeffs)
    grads.update(out)
    if d:
        grads["semantics"][cache.proj.idx] = g_sem
    return grads


def render_gradients(scene: SceneModel, camera: Camera, loss_grad: np.ndarray,
                     cache: ForwardCache | None) -> dict:
    """Per-splat parameter gradients for a color-image loss gradient.

    Requires the ForwardCache produced by `render(..., keep_cache=True)` for
    the same scene object and camera; anything else raises
    MissingForwardCacheError.
    """
    if not _cache_matches(cache, scene, camera):
        raise MissingForwardCacheError(
            "no forward cache for this (scene, camera); call "
            "render(scene, camera, keep_cache=True) first")
    return backward_from_cache(cache, loss_grad)
