"""Rainfall-motion augmentation: random-walk displacement of the rain sequence.

Terrain stays geographically anchored; only its continuous elevation channel
receives additive noise.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .geogrid import Provenance, RainfallSequence, TerrainGrid, ValidationError
from .interp import shift_stack

if TYPE_CHECKING:
    from .pipeline.samples import Sample


@dataclass(frozen=True)
class AugmentConfig:
    sigma_disp: float = 0.5
    sigma_rain_noise: float = 0.5
    sigma_terrain_noise: float = 0.05
    seed: int = 0
    # steps before this index get zero increments, so the walk starts here
    start_step: int = 0

    def __post_init__(self):
        if self.start_step < 0:
            raise ValidationError("start_step must be >= 0")
        for name in ("sigma_disp", "sigma_rain_noise", "sigma_terrain_noise"):
            s = getattr(self, name)
            if not (np.isfinite(s) and s >= 0):
                raise ValidationError(f"{name} must be finite and >= 0")


@dataclass(frozen=True, eq=False)
class DisplacementPath:
    """Cumulative offsets (dx, dy) in cells; row t is the offset of step t."""

    increments: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return np.cumsum(self.increments, axis=0)

    def __len__(self) -> int:
        return len(self.increments)

    def to_text(self) -> str:
        lines = ["t,dx,dy,eps_x,eps_y"]
        for t, ((ox, oy), (ex, ey)) in enumerate(zip(self.offsets, self.increments)):
            lines.append(f"{t},{ox!r},{oy!r},{ex!r},{ey!r}")
        return "\n".join(lines) + "\n"


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, *stream)``, e.g. (seed, sample, view)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, stream)]))


def sample_displacement_path(T: int, cfg: AugmentConfig, rng: np.random.Generator) -> DisplacementPath:
    if T < 1:
        raise ValidationError("T must be >= 1")
    inc = np.zeros((T, 2))
    k = min(cfg.start_step, T)
    inc[k:] = rng.normal(0.0, 1.0, size=(T - k, 2)) * cfg.sigma_disp
    return DisplacementPath(inc)


def apply_displacement(seq: RainfallSequence, path: DisplacementPath, fill: float = 0.0) -> RainfallSequence:
    """Translate grid t by ``offsets[t]``, resampling bilinearly."""
    if len(path) != len(seq):
        raise ValidationError("displacement path and sequence lengths differ")
    off = path.offsets
    out = np.maximum(shift_stack(seq.values, off[:, 1], off[:, 0], fill), 0.0)
    return RainfallSequence(seq.region, seq.t0, out, (Provenance.AUGMENTED,) * len(seq))


def perturb_terrain(terrain: TerrainGrid, sigma: float, rng: np.random.Generator) -> TerrainGrid:
    if sigma == 0:
        return terrain
    noisy = terrain.elevation_norm + rng.normal(0.0, sigma, size=terrain.elevation_norm.shape)
    return TerrainGrid(terrain.region, terrain.soil, terrain.vegetation, terrain.slope,
                       terrain.elevation, noisy)


def augment_rain(seq: RainfallSequence, cfg: AugmentConfig,
                 rng: np.random.Generator) -> tuple[RainfallSequence, DisplacementPath]:
    """Displace ``seq`` along a fresh random walk, then add rain noise clamped at 0."""
    path = sample_displacement_path(len(seq), cfg, rng)
    rain = apply_displacement(seq, path)
    if cfg.sigma_rain_noise > 0:
        noisy = rain.values + rng.normal(0.0, cfg.sigma_rain_noise, size=rain.values.shape)
        rain = RainfallSequence(rain.region, rain.t0, np.maximum(noisy, 0.0), rain.provenance)
    return rain, path


def augment_sample(sample: "Sample", cfg: AugmentConfig, rng: np.random.Generator) -> "Sample":
    """Displaced and noised view of ``sample``; label and metadata are kept."""
    rain, _ = augment_rain(sample.rain, cfg, rng)
    terrain = perturb_terrain(sample.terrain, cfg.sigma_terrain_noise, rng)
    return replace(sample, rain=rain, terrain=terrain)
