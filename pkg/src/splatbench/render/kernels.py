"""Tile-binned alpha compositing kernels (numba, single-threaded).

Splats are globally sorted front-to-back by view depth, binned to 16x16
pixel tiles by their influence radius, and composited per pixel with early
termination once transmittance drops below T_MIN. The backward kernel walks
each pixel's contributor list in reverse, recomputing alphas (bit-identical
to the forward pass) and accumulating per-splat gradients; with one thread
and fixed traversal order the results are deterministic run-to-run.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .project import ALPHA_CLAMP, ALPHA_MIN, T_MIN

TILE = 16


def bin_tiles(mu2d: np.ndarray, radius: np.ndarray, z: np.ndarray,
              width: int, height: int):
    """Depth-sort splats and build per-tile contributor lists.

    Returns (order-resolved splat index array, tile offset array) where
    entries tile_offsets[t]:tile_offsets[t+1] of the index array list the
    splats touching tile t, front-to-back.
    """
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    m = mu2d.shape[0]
    if m == 0:
        return (np.zeros(0, dtype=np.int64),
                np.zeros(n_tiles + 1, dtype=np.int64), tiles_x, tiles_y)

    order = np.argsort(z, kind="stable")
    x0 = np.clip(np.floor((mu2d[:, 0] - radius) / TILE), 0, tiles_x - 1).astype(np.int64)
    x1 = np.clip(np.floor((mu2d[:, 0] + radius) / TILE), 0, tiles_x - 1).astype(np.int64)
    y0 = np.clip(np.floor((mu2d[:, 1] - radius) / TILE), 0, tiles_y - 1).astype(np.int64)
    y1 = np.clip(np.floor((mu2d[:, 1] + radius) / TILE), 0, tiles_y - 1).astype(np.int64)

    counts = (x1 - x0 + 1) * (y1 - y0 + 1)
    counts_sorted = counts[order]
    total = int(counts_sorted.sum())
    pair_tile = np.empty(total, dtype=np.int64)
    pair_rank = np.empty(total, dtype=np.int64)  # depth rank, ascending = nearer
    pair_splat = np.empty(total, dtype=np.int64)
    _fill_pairs(order, x0, x1, y0, y1, tiles_x, pair_tile, pair_rank, pair_splat)

    key_order = np.lexsort((pair_rank, pair_tile))
    pair_tile = pair_tile[key_order]
    pair_splat = pair_splat[key_order]
    tile_offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.add.at(tile_offsets, pair_tile + 1, 1)
    tile_offsets = np.cumsum(tile_offsets)
    return pair_splat, tile_offsets, tiles_x, tiles_y


@njit(cache=True)
def _fill_pairs(order, x0, x1, y0, y1, tiles_x, pair_tile, pair_rank, pair_splat):
    pos = 0
    for rank in range(order.size):
        s = order[rank]
        for ty in range(y0[s], y1[s] + 1):
            for tx in range(x0[s], x1[s] + 1):
                pair_tile[pos] = ty * tiles_x + tx
                pair_rank[pos] = rank
                pair_splat[pos] = s
                pos += 1


@njit(cache=True)
def forward_kernel(tile_splats, tile_offsets, tiles_x,
                   mu2d, conic, opacity, color, sem, z,
                   bg_color, width, height,
                   out_color, out_sem, out_depth_accum, out_trans, out_nproc):
    """Composite color / semantics / depth numerator per pixel.

    out_trans receives the final transmittance, out_nproc the number of tile
    list entries examined before termination (needed to replay in reverse).
    """
    n_tiles = tile_offsets.size - 1
    s_dim = sem.shape[1]
    for t in range(n_tiles):
        start = tile_offsets[t]
        end = tile_offsets[t + 1]
        if start == end:
            continue
        ty = t // tiles_x
        tx = t % tiles_x
        v_lo = ty * TILE
        u_lo = tx * TILE
        v_hi = min(v_lo + TILE, height)
        u_hi = min(u_lo + TILE, width)
        for v in range(v_lo, v_hi):
            for u in range(u_lo, u_hi):
                trans = 1.0
                k = start
                while k < end:
                    s = tile_splats[k]
                    dx = u - mu2d[s, 0]
                    dy = v - mu2d[s, 1]
                    q = (conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy
                         + conic[s, 2] * dy * dy)
                    alpha = opacity[s] * np.exp(-0.5 * q)
                    if alpha >= ALPHA_MIN:
                        if alpha > ALPHA_CLAMP:
                            alpha = ALPHA_CLAMP
                        w = alpha * trans
                        for c in range(3):
                            out_color[v, u, c] += w * color[s, c]
                        for c in range(s_dim):
                            out_sem[v, u, c] += w * sem[s, c]
                        out_depth_accum[v, u] += w * z[s]
                        trans *= 1.0 - alpha
                        if trans < T_MIN:
                            k += 1
                            break
                    k += 1
                out_nproc[v, u] = k - start
                out_trans[v, u] = trans
                for c in range(3):
                    out_color[v, u, c] += trans * bg_color[c]


@njit(cache=True)
def backward_kernel(tile_splats, tile_offsets, tiles_x,
                    mu2d, conic, opacity, color, sem, z,
                    bg_color, width, height,
                    trans_final, nproc,
                    dl_color, dl_sem, dl_u, dl_wsum,
                    g_mu2d, g_conic, g_opacity, g_color, g_sem, g_z):
    """Reverse-order gradient accumulation; mirrors forward_kernel exactly.

    dl_u is the loss gradient on the depth numerator (sum of w_i * z_i);
    dl_wsum on the accumulated weight (1 - transmittance).
    """
    n_tiles = tile_offsets.size - 1
    s_dim = sem.shape[1]
    sem_suffix = np.zeros(s_dim)
    for t in range(n_tiles):
        start = tile_offsets[t]
        end = tile_offsets[t + 1]
        if start == end:
            continue
        ty = t // tiles_x
        tx = t % tiles_x
        v_lo = ty * TILE
        u_lo = tx * TILE
        v_hi = min(v_lo + TILE, height)
        u_hi = min(u_lo + TILE, width)
        for v in range(v_lo, v_hi):
            for u in range(u_lo, u_hi):
                n = nproc[v, u]
                if n == 0:
                    continue
                has_sem = False
                for c in range(s_dim):
                    sem_suffix[c] = 0.0
                    if dl_sem[v, u, c] != 0.0:
                        has_sem = True
                t_after = trans_final[v, u]
                # suffix accumulators: sum of f_j * w_j for j > i (+ background)
                suf0 = bg_color[0] * t_after
                suf1 = bg_color[1] * t_after
                suf2 = bg_color[2] * t_after
                suf_u = 0.0
                suf_w = 0.0
                for k in range(start + n - 1, start - 1, -1):
                    s = tile_splats[k]
                    dx = u - mu2d[s, 0]
                    dy = v - mu2d[s, 1]
                    q = (conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy
                         + conic[s, 2] * dy * dy)
                    g_val = np.exp(-0.5 * q)
                    alpha = opacity[s] * g_val
                    if alpha < ALPHA_MIN:
                        continue
                    clamped = alpha > ALPHA_CLAMP
                    if clamped:
                        alpha = ALPHA_CLAMP
                    one_m = 1.0 - alpha
                    t_before = t_after / one_m
                    w = alpha * t_before

                    dlda = (dl_color[v, u, 0] * (color[s, 0] * t_before - suf0 / one_m)
                            + dl_color[v, u, 1] * (color[s, 1] * t_before - suf1 / one_m)
                            + dl_color[v, u, 2] * (color[s, 2] * t_before - suf2 / one_m))
                    dlda += dl_u[v, u] * (z[s] * t_before - suf_u / one_m)
                    dlda += dl_wsum[v, u] * (t_before - suf_w / one_m)

                    g_color[s, 0] += dl_color[v, u, 0] * w
                    g_color[s, 1] += dl_color[v, u, 1] * w
                    g_color[s, 2] += dl_color[v, u, 2] * w
                    g_z[s] += dl_u[v, u] * w
                    if has_sem:
                        for c in range(s_dim):
                            d = dl_sem[v, u, c]
                            if d != 0.0:
                                dlda += d * (sem[s, c] * t_before - sem_suffix[c] / one_m)
                                g_sem[s, c] += d * w
                        for c in range(s_dim):
                            sem_suffix[c] += sem[s, c] * w

                    if not clamped:
                        # alpha = opacity * exp(-q/2): chain into opacity,
                        # projected mean, and conic
                        g_opacity[s] += dlda * g_val
                        dldg = dlda * opacity[s]
                        g_mu2d[s, 0] += dldg * g_val * (conic[s, 0] * dx + conic[s, 1] * dy)
                        g_mu2d[s, 1] += dldg * g_val * (conic[s, 1] * dx + conic[s, 2] * dy)
                        g_conic[s, 0] += dldg * g_val * (-0.5 * dx * dx)
                        g_conic[s, 1] += dldg * g_val * (-dx * dy)
                        g_conic[s, 2] += dldg * g_val * (-0.5 * dy * dy)

                    suf0 += color[s, 0] * w
                    suf1 += color[s, 1] * w
                    suf2 += color[s, 2] * w
                    suf_u += z[s] * w
                    suf_w += w
                    t_after = t_before
