"""Bilinear resampling shared by advection, warping and augmentation."""
from __future__ import annotations

import numpy as np


def bilinear_sample(values: np.ndarray, src_y: np.ndarray, src_x: np.ndarray,
                    fill: float = 0.0) -> np.ndarray:
    """Sample ``values`` (H, W) at fractional positions ``(src_y, src_x)``.

    Each of the four neighbours that falls outside the grid contributes
    ``fill`` instead of a grid value. Integer positions reproduce grid values
    exactly. Computation is float64.
    """
    v = np.asarray(values, dtype=np.float64)
    H, W = v.shape
    src_y = np.asarray(src_y, dtype=np.float64)
    src_x = np.asarray(src_x, dtype=np.float64)
    y0 = np.floor(src_y)
    x0 = np.floor(src_x)
    fy = src_y - y0
    fx = src_x - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    def tap(yy, xx):
        inside = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
        out = np.full(yy.shape, float(fill))
        out[inside] = v[yy[inside], xx[inside]]
        return out

    top = tap(y0, x0) * (1 - fx) + tap(y0, x0 + 1) * fx
    bot = tap(y0 + 1, x0) * (1 - fx) + tap(y0 + 1, x0 + 1) * fx
    out = top * (1 - fy) + bot * fy
    return out


def shift_sample(values: np.ndarray, dy, dx, fill: float = 0.0) -> np.ndarray:
    """Backward-traced translation: ``out(y, x) = values(y - dy, x - dx)``.

    ``dy``/``dx`` may be scalars or (H, W) grids.
    """
    H, W = np.shape(values)
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64),
                         indexing="ij")
    return bilinear_sample(values, yy - dy, xx - dx, fill)


def shift_stack(stack: np.ndarray, dy: np.ndarray, dx: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Translate each grid ``stack[t]`` (T, H, W) by its own ``(dy[t], dx[t])``.

    Same semantics as :func:`shift_sample` applied per grid.
    """
    s = np.asarray(stack, dtype=np.float64)
    T, H, W = s.shape
    dy = np.asarray(dy, dtype=np.float64).reshape(T, 1, 1)
    dx = np.asarray(dx, dtype=np.float64).reshape(T, 1, 1)
    sy = np.arange(H, dtype=np.float64).reshape(1, H, 1) - dy
    sx = np.arange(W, dtype=np.float64).reshape(1, 1, W) - dx
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy, fx = sy - y0, sx - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    padded = np.full((T, H + 2, W + 2), float(fill))
    padded[:, 1:-1, 1:-1] = s
    # any neighbour beyond one cell outside is still fill: clip into the pad ring
    t_idx = np.arange(T).reshape(T, 1, 1)

    def tap(yy, xx):
        return padded[t_idx, np.clip(yy + 1, 0, H + 1), np.clip(xx + 1, 0, W + 1)]

    top = tap(y0, x0) * (1 - fx) + tap(y0, x0 + 1) * fx
    bot = tap(y0 + 1, x0) * (1 - fx) + tap(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy
