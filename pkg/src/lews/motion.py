"""Dense pyramidal Lucas-Kanade motion estimation for rainfall fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geogrid import RainfallField, Region, ValidationError
from .interp import shift_sample


@dataclass(frozen=True)
class FlowConfig:
    window_radius: int = 2
    pyramid_levels: int = 2
    ridge_lambda: float = 1e-3
    iterations_per_level: int = 3
    max_speed: float = 5.0

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValidationError("window_radius must be >= 1")
        if self.pyramid_levels < 1:
            raise ValidationError("pyramid_levels must be >= 1")
        if not self.ridge_lambda > 0:
            raise ValidationError("ridge_lambda must be > 0")
        if self.iterations_per_level < 1:
            raise ValidationError("iterations_per_level must be >= 1")
        if not self.max_speed > 0:
            raise ValidationError("max_speed must be > 0")


@dataclass(frozen=True, eq=False)
class MotionField:
    """Per-cell velocity in cells/hour; ``u`` along columns (east), ``v`` along rows."""

    region: Region
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("u", "v"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if a.shape != self.region.shape or not np.all(np.isfinite(a)):
                raise ValidationError(f"motion component {name} must be a finite grid")
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def uniform(cls, region: Region, u: float, v: float) -> "MotionField":
        return cls(region, np.full(region.shape, float(u)), np.full(region.shape, float(v)))


def box_sum(a: np.ndarray, r: int) -> np.ndarray:
    """Sum over the (2r+1)^2 window around each cell, clamped to the grid."""
    H, W = a.shape
    p = np.zeros((H + 1, W + 1))
    p[1:, 1:] = np.cumsum(np.cumsum(a, axis=0), axis=1)
    y0 = np.clip(np.arange(H) - r, 0, H)
    y1 = np.clip(np.arange(H) + r + 1, 0, H)
    x0 = np.clip(np.arange(W) - r, 0, W)
    x1 = np.clip(np.arange(W) + r + 1, 0, W)
    return (p[y1][:, x1] - p[y0][:, x1] - p[y1][:, x0] + p[y0][:, x0])


def _window_slices(shape, center, r):
    (H, W), (cy, cx) = shape, center
    return slice(max(cy - r, 0), min(cy + r + 1, H)), slice(max(cx - r, 0), min(cx + r + 1, W))


def lk_solve_window(Ix, Iy, It, center, cfg: FlowConfig = FlowConfig()) -> tuple[float, float]:
    """Ridge-regularized LK solution for the window around ``center``.

    Minimizes sum_window (Ix*u + Iy*v + It)^2 + lambda*(u^2 + v^2).
    """
    Ix, Iy, It = (np.asarray(a, dtype=np.float64) for a in (Ix, Iy, It))
    if not (Ix.shape == Iy.shape == It.shape):
        raise ValidationError("gradient grids must share a shape")
    cy, cx = center
    if not (0 <= cy < Ix.shape[0] and 0 <= cx < Ix.shape[1]):
        raise ValidationError(f"center {center} outside grid")
    sl = _window_slices(Ix.shape, center, cfg.window_radius)
    gx, gy, gt = Ix[sl], Iy[sl], It[sl]
    G = np.array([[np.sum(gx * gx), np.sum(gx * gy)],
                  [np.sum(gx * gy), np.sum(gy * gy)]]) + cfg.ridge_lambda * np.eye(2)
    b = np.array([np.sum(gx * gt), np.sum(gy * gt)])
    u, v = np.linalg.solve(G, -b)
    return float(u), float(v)


def _lk_dense(Ix, Iy, It, cfg: FlowConfig):
    # closed-form 2x2 solve of (G + lambda I) w = -b at every cell
    r, lam = cfg.window_radius, cfg.ridge_lambda
    a = box_sum(Ix * Ix, r) + lam
    c = box_sum(Iy * Iy, r) + lam
    b = box_sum(Ix * Iy, r)
    bx = box_sum(Ix * It, r)
    by = box_sum(Iy * It, r)
    det = a * c - b * b
    u = -(c * bx - b * by) / det
    v = -(a * by - b * bx) / det
    return u, v


def downsample2(a: np.ndarray) -> np.ndarray:
    """2x box downsampling; a trailing odd row/column is dropped."""
    H, W = a.shape
    a = a[: H - H % 2, : W - W % 2]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def upsample2(a: np.ndarray, shape) -> np.ndarray:
    """Nearest-neighbour 2x upsampling, edge-padded to ``shape``."""
    up = np.repeat(np.repeat(a, 2, axis=0), 2, axis=1)
    H, W = shape
    up = up[:H, :W]
    return np.pad(up, ((0, H - up.shape[0]), (0, W - up.shape[1])), mode="edge")


def _usable_levels(shape, requested: int, min_size: int = 3) -> int:
    levels, (H, W) = 1, shape
    while levels < requested and H // 2 >= min_size and W // 2 >= min_size:
        H, W = H // 2, W // 2
        levels += 1
    return levels


def _pair_increment(src, dst, u, v, cfg):
    warped = shift_sample(src, v, u)
    Iy, Ix = np.gradient(warped)
    It = dst - warped
    return _lk_dense(Ix, Iy, It, cfg)


def estimate_flow(f0: RainfallField, f1: RainfallField, f2: RainfallField,
                  cfg: FlowConfig = FlowConfig()) -> MotionField:
    """Motion field from three consecutive fields, coarse to fine.

    At each pyramid level the earlier frame of each pair is warped along the
    current estimate and a dense LK increment is solved for the pairs
    (f0, f1) and (f1, f2); the two increments are averaged.
    """
    if not (f0.region == f1.region == f2.region):
        raise ValidationError("fields must share a region")
    if not (f1.t_index - f0.t_index == 1 and f2.t_index - f1.t_index == 1):
        raise ValidationError("fields must be consecutive hours")
    frames = [np.asarray(f.values, dtype=np.float64) for f in (f0, f1, f2)]
    n_levels = _usable_levels(frames[0].shape, cfg.pyramid_levels)
    pyramids = [[fr] for fr in frames]
    for _ in range(n_levels - 1):
        for pyr in pyramids:
            pyr.append(downsample2(pyr[-1]))

    u = v = None
    for level in range(n_levels - 1, -1, -1):
        a, b, c = (pyr[level] for pyr in pyramids)
        if u is None:
            u = np.zeros(a.shape)
            v = np.zeros(a.shape)
        else:
            u = 2.0 * upsample2(u, a.shape)
            v = 2.0 * upsample2(v, a.shape)
        lim = cfg.max_speed / 2 ** level
        for _ in range(cfg.iterations_per_level):
            du0, dv0 = _pair_increment(a, b, u, v, cfg)
            du1, dv1 = _pair_increment(b, c, u, v, cfg)
            u = np.clip(u + 0.5 * (du0 + du1), -lim, lim)
            v = np.clip(v + 0.5 * (dv0 + dv1), -lim, lim)
    u = np.clip(np.nan_to_num(u), -cfg.max_speed, cfg.max_speed)
    v = np.clip(np.nan_to_num(v), -cfg.max_speed, cfg.max_speed)
    return MotionField(f0.region, u, v)
