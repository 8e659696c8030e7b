"""Numba kernels for tile binning, compositing and its reverse replay.

All kernels work in float64. A splat is described by its pixel-space mean,
conic ``(a, b, c)`` with ``Q = [[a, b], [b, c]]``, opacity and RGB color.
The forward and backward kernels evaluate alpha with identical expressions
so the replay sees bit-identical values.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def bin_splats(order, rect, n_tiles):
    """Duplicate each splat into every tile its footprint touches.

    ``order`` lists splat ids front to back; ``rect`` holds inclusive-exclusive
    tile bounds (x0, y0, x1, y1) and the tile grid is row-major with
    ``n_tiles = (nty, ntx)``. Returns ``(entries, tile_start)`` so that
    ``entries[tile_start[t]:tile_start[t + 1]]`` is tile ``t``'s depth-ordered list.
    """
    nty, ntx = n_tiles
    counts = np.zeros(nty * ntx + 1, dtype=np.int64)
    for i in range(order.shape[0]):
        g = order[i]
        for ty in range(rect[g, 1], rect[g, 3]):
            for tx in range(rect[g, 0], rect[g, 2]):
                counts[ty * ntx + tx + 1] += 1
    tile_start = np.cumsum(counts)
    cursor = tile_start[:-1].copy()
    entries = np.empty(tile_start[-1], dtype=np.int64)
    for i in range(order.shape[0]):
        g = order[i]
        for ty in range(rect[g, 1], rect[g, 3]):
            for tx in range(rect[g, 0], rect[g, 2]):
                t = ty * ntx + tx
                entries[cursor[t]] = g
                cursor[t] += 1
    return entries, tile_start


@njit(cache=True, inline="always")
def _quad(conic, k, dx, dy):
    return conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy


@njit(cache=True, parallel=True)
def composite(tile_start, mean2d, conic, opacity, color, background,
              width, height, tile_size, cutoff_sq, alpha_max, t_min):
    """Front-to-back blending. Splat arrays are gathered in entry order."""
    image = np.empty((height, width, 3))
    accum = np.empty((height, width))
    final_t = np.empty((height, width))
    n_contrib = np.zeros((height, width), dtype=np.int64)
    ntx = (width + tile_size - 1) // tile_size
    nty = (height + tile_size - 1) // tile_size
    for t in prange(ntx * nty):
        ty = t // ntx
        tx = t - ty * ntx
        start = tile_start[t]
        end = tile_start[t + 1]
        for py in range(ty * tile_size, min(height, (ty + 1) * tile_size)):
            for px in range(tx * tile_size, min(width, (tx + 1) * tile_size)):
                trans = 1.0
                r = 0.0
                gg = 0.0
                b = 0.0
                acc = 0.0
                last = 0
                for k in range(start, end):
                    dx = px - mean2d[k, 0]
                    dy = py - mean2d[k, 1]
                    q = _quad(conic, k, dx, dy)
                    if q > cutoff_sq:
                        continue
                    alpha = opacity[k] * math.exp(-0.5 * q)
                    if alpha > alpha_max:
                        alpha = alpha_max
                    w = alpha * trans
                    r += w * color[k, 0]
                    gg += w * color[k, 1]
                    b += w * color[k, 2]
                    acc += w
                    trans = trans * (1.0 - alpha)
                    last = k - start + 1
                    # the splat that crosses the threshold is kept, so the
                    # dropped remainder is bounded by t_min
                    if trans < t_min:
                        break
                image[py, px, 0] = r + trans * background[0]
                image[py, px, 1] = gg + trans * background[1]
                image[py, px, 2] = b + trans * background[2]
                accum[py, px] = acc
                final_t[py, px] = trans
                n_contrib[py, px] = last
    return image, accum, final_t, n_contrib


@njit(cache=True, inline="always")
def _replay_pixel(px, py, start, n, entries, mean2d, conic, opacity, color, background,
                  trans, d_pix, cutoff_sq, alpha_max, out, use_entry_index):
    """Walk one pixel's contributors back to front, adding partials into ``out``.

    Splat arrays are in entry order. Rows of ``out`` are entries when
    ``use_entry_index`` is set, splat ids otherwise; the layout is d_mean2d (2),
    d_conic a/b/c (3), d_opacity, d_color (3).
    """
    b0 = background[0]
    b1 = background[1]
    b2 = background[2]
    for k in range(start + n - 1, start - 1, -1):
        dx = px - mean2d[k, 0]
        dy = py - mean2d[k, 1]
        q = _quad(conic, k, dx, dy)
        if q > cutoff_sq:
            continue
        gauss = math.exp(-0.5 * q)
        alpha = opacity[k] * gauss
        clamped = alpha > alpha_max
        if clamped:
            alpha = alpha_max
        trans = trans / (1.0 - alpha)
        row = k if use_entry_index else entries[k]
        w = alpha * trans
        out[row, 6] += w * d_pix[0]
        out[row, 7] += w * d_pix[1]
        out[row, 8] += w * d_pix[2]
        c0 = color[k, 0]
        c1 = color[k, 1]
        c2 = color[k, 2]
        d_alpha = trans * ((c0 - b0) * d_pix[0] + (c1 - b1) * d_pix[1] + (c2 - b2) * d_pix[2])
        b0 = alpha * c0 + (1.0 - alpha) * b0
        b1 = alpha * c1 + (1.0 - alpha) * b1
        b2 = alpha * c2 + (1.0 - alpha) * b2
        if clamped:
            continue
        out[row, 5] += d_alpha * gauss
        d_q = -0.5 * d_alpha * alpha
        out[row, 2] += d_q * dx * dx
        out[row, 3] += d_q * 2.0 * dx * dy
        out[row, 4] += d_q * dy * dy
        out[row, 0] -= d_q * 2.0 * (conic[k, 0] * dx + conic[k, 1] * dy)
        out[row, 1] -= d_q * 2.0 * (conic[k, 1] * dx + conic[k, 2] * dy)


@njit(cache=True, parallel=True)
def replay_per_entry(entries, tile_start, mean2d, conic, opacity, color, background,
                     final_t, n_contrib, d_image, width, height, tile_size, cutoff_sq, alpha_max):
    """Deterministic backward: partials land in per-entry rows, one tile per task."""
    out = np.zeros((entries.shape[0], 9))
    ntx = (width + tile_size - 1) // tile_size
    nty = (height + tile_size - 1) // tile_size
    for t in prange(ntx * nty):
        ty = t // ntx
        tx = t - ty * ntx
        start = tile_start[t]
        for py in range(ty * tile_size, min(height, (ty + 1) * tile_size)):
            for px in range(tx * tile_size, min(width, (tx + 1) * tile_size)):
                n = n_contrib[py, px]
                if n == 0:
                    continue
                _replay_pixel(px, py, start, n, entries, mean2d, conic, opacity, color,
                              background, final_t[py, px], d_image[py, px], cutoff_sq,
                              alpha_max, out, True)
    return out


@njit(cache=True)
def reduce_entries(entries, per_entry, n_splats):
    out = np.zeros((n_splats, per_entry.shape[1]))
    for k in range(entries.shape[0]):
        g = entries[k]
        for j in range(per_entry.shape[1]):
            out[g, j] += per_entry[k, j]
    return out


@njit(cache=True)
def replay_direct(entries, tile_start, mean2d, conic, opacity, color, background,
                  final_t, n_contrib, d_image, width, height, tile_size, cutoff_sq, alpha_max,
                  n_splats):
    """Fast backward: accumulate straight into per-splat rows (single thread)."""
    out = np.zeros((n_splats, 9))
    ntx = (width + tile_size - 1) // tile_size
    nty = (height + tile_size - 1) // tile_size
    for t in range(ntx * nty):
        ty = t // ntx
        tx = t - ty * ntx
        start = tile_start[t]
        for py in range(ty * tile_size, min(height, (ty + 1) * tile_size)):
            for px in range(tx * tile_size, min(width, (tx + 1) * tile_size)):
                n = n_contrib[py, px]
                if n == 0:
                    continue
                _replay_pixel(px, py, start, n, entries, mean2d, conic, opacity, color,
                              background, final_t[py, px], d_image[py, px], cutoff_sq,
                              alpha_max, out, False)
    return out
