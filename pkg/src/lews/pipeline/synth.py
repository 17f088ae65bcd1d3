"""Synthetic regions, rainfall and landslide events.

Rain is a sum of Gaussian rain cells drifting with a region-level wind that
changes direction from time to time; cells are born and die during wet
spells. Events come from a transparent oracle: a susceptible cell fails in
the hour its antecedent precipitation index (API) first rises to the
threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import lfilter

from ..geogrid import (Event, EventTable, FormatError, N_SOIL, N_VEG, RainfallSequence, Region,
                       TerrainGrid, ValidationError, _parse_manifest, read_events,
                       read_rainfall_stack, read_terrain, write_events, write_rainfall_stack,
                       write_terrain)

PAVED_SOIL = 0


@dataclass(frozen=True)
class SynthConfig:
    n_regions: int = 19
    hours: int = 17520
    height: int = 10
    width: int = 10
    cell_km: float = 1.0
    # wet/dry regime switching, per hour
    wet_start_prob: float = 0.012
    wet_end_prob: float = 0.03
    # rain cells
    cell_birth_rate: float = 0.08
    cell_lifetime_mean: float = 60.0
    cell_amplitude: tuple[float, float] = (2.0, 14.0)
    cell_sigma: tuple[float, float] = (1.5, 3.5)
    cell_speed: tuple[float, float] = (0.2, 0.6)
    wind_change_prob: float = 0.15
    # landslide oracle
    api_decay: float = 0.85
    trigger_threshold: float = 70.0
    steep_slope_min: int = 5
    paved_fraction: tuple[float, float] = (0.0, 0.4)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.api_decay < 1:
            raise ValidationError("api_decay must lie in (0, 1)")
        if not self.trigger_threshold > 0:
            raise ValidationError("trigger_threshold must be > 0")
        if self.n_regions < 1 or self.hours < 1:
            raise ValidationError("n_regions and hours must be positive")
        if not 0 <= self.steep_slope_min <= 8:
            raise ValidationError("steep_slope_min must be a slope category")
        for name in ("cell_amplitude", "cell_sigma", "cell_speed", "paved_fraction"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValidationError(f"{name} must be an ordered non-negative range")


@dataclass
class SynthDataset:
    regions: list[Region]
    rain: dict[str, RainfallSequence]
    terrain: dict[str, TerrainGrid]
    events: EventTable
    config: SynthConfig = field(default_factory=SynthConfig)

    @property
    def hours(self) -> int:
        return len(next(iter(self.rain.values())))


def _smooth_field(rng, shape, sigma):
    return gaussian_filter(rng.normal(size=shape), sigma, mode="reflect")


def _quantize(a, k, rng, skew=None):
    """Map a continuous field onto k categories via random cut points."""
    probs = rng.dirichlet(np.ones(k)) if skew is None else skew
    edges = np.quantile(a, np.cumsum(probs)[:-1])
    return np.searchsorted(edges, a, side="right")


# slope magnitude cut points (m per cell) for the 8 slope classes
SLOPE_EDGES = np.array([10.0, 20.0, 35.0, 50.0, 70.0, 95.0, 125.0])


def generate_terrain(region: Region, rng: np.random.Generator, paved_range=(0.0, 0.4)) -> TerrainGrid:
    shape = region.shape
    relief = rng.uniform(150.0, 900.0)
    elev = _smooth_field(rng, shape, 1.5)
    elev = (elev - elev.min()) / max(np.ptp(elev), 1e-9) * relief + rng.uniform(0, 500)
    gy, gx = np.gradient(elev)
    slope_idx = np.searchsorted(SLOPE_EDGES, np.hypot(gx, gy))
    paved = rng.uniform(*paved_range)
    soil_field = _smooth_field(rng, shape, 1.0)
    rest = rng.dirichlet(np.ones(N_SOIL - 1)) * (1 - paved)
    soil_idx = _quantize(soil_field, N_SOIL, rng, np.concatenate([[paved], rest]))
    veg_idx = _quantize(_smooth_field(rng, shape, 1.0), N_VEG, rng)
    return TerrainGrid.from_categories(region, soil_idx, veg_idx, slope_idx, elev)


def susceptible_cells(terrain: TerrainGrid, steep_slope_min: int = 5) -> np.ndarray:
    soil, _, slope = terrain.categories()
    return (slope >= steep_slope_min) & (soil != PAVED_SOIL)


def simulate_rainfall(region: Region, hours: int, cfg: SynthConfig,
                      rng: np.random.Generator) -> np.ndarray:
    """(hours, H, W) float32 rain in mm/h."""
    H, W = region.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    out = np.zeros((hours, H, W), dtype=np.float32)
    wet = False
    theta = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(*cfg.cell_speed)
    # columns: y, x, vy, vx, amplitude, sigma, remaining life
    cells = np.zeros((0, 7))
    margin = 4.0
    for t in range(hours):
        wet = (rng.random() < cfg.wet_start_prob) if not wet else (rng.random() >= cfg.wet_end_prob)
        if rng.random() < cfg.wind_change_prob:
            theta += rng.normal(0, 1.0)
            speed = rng.uniform(*cfg.cell_speed)
        wind = speed * np.array([np.sin(theta), np.cos(theta)])
        n_new = rng.poisson(cfg.cell_birth_rate) if wet else 0
        if n_new:
            new = np.empty((n_new, 7))
            new[:, 0] = rng.uniform(-margin, H - 1 + margin, n_new)
            new[:, 1] = rng.uniform(-margin, W - 1 + margin, n_new)
            new[:, 2:4] = 0.0
            new[:, 4] = rng.uniform(*cfg.cell_amplitude, n_new)
            new[:, 5] = rng.uniform(*cfg.cell_sigma, n_new)
            new[:, 6] = rng.geometric(1.0 / max(cfg.cell_lifetime_mean, 1.0), n_new)
            cells = np.vstack([cells, new])
        if len(cells):
            cells[:, 2:4] = wind
            cy, cx, amp, sig = cells[:, 0, None, None], cells[:, 1, None, None], \
                cells[:, 4, None, None], cells[:, 5, None, None]
            field_ = (amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig ** 2))).sum(axis=0)
            out[t] = field_
            cells[:, 0:2] += cells[:, 2:4]
            cells[:, 6] -= 1
            keep = (cells[:, 6] > 0) & (cells[:, 0] > -3 * margin) & (cells[:, 0] < H + 3 * margin) \
                & (cells[:, 1] > -3 * margin) & (cells[:, 1] < W + 3 * margin)
            cells = cells[keep]
    out[out < 1e-3] = 0.0
    return out


def antecedent_index(rain: np.ndarray, decay: float) -> np.ndarray:
    """API_t = sum_k decay^k r_{t-k}, along axis 0."""
    return lfilter([1.0], [1.0, -decay], np.asarray(rain, dtype=np.float64), axis=0)


def trigger_events(region_id: str, rain: np.ndarray, susceptible: np.ndarray,
                   decay: float, threshold: float) -> list[Event]:
    """Events where a susceptible cell's API crosses ``threshold`` from below."""
    api = antecedent_index(rain, decay)
    prev = np.concatenate([np.zeros((1,) + api.shape[1:]), api[:-1]])
    hit = (prev < threshold) & (api >= threshold) & susceptible[None]
    ts, ys, xs = np.nonzero(hit)
    return [Event(region_id, int(t), int(y), int(x)) for t, y, x in zip(ts, ys, xs)]


def synth_generate(cfg: SynthConfig = SynthConfig()) -> SynthDataset:
    regions, rain, terrain, events = [], {}, {}, []
    for k in range(cfg.n_regions):
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), k]))
        region = Region(f"R{k:02d}", cfg.height, cfg.width, cfg.cell_km)
        grid = generate_terrain(region, rng, cfg.paved_fraction)
        values = simulate_rainfall(region, cfg.hours, cfg, rng)
        events += trigger_events(region.region_id, values,
                                 susceptible_cells(grid, cfg.steep_slope_min),
                                 cfg.api_decay, cfg.trigger_threshold)
        regions.append(region)
        rain[region.region_id] = RainfallSequence(region, 0, values)
        terrain[region.region_id] = grid
    return SynthDataset(regions, rain, terrain, EventTable(events), cfg)


# ------------------------------------------------------------------ storage

def config_to_dict(cfg) -> dict[str, str]:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = ",".join(repr(float(x)) for x in v) if isinstance(v, tuple) else repr(v)
    return out


def save_dataset(ds: SynthDataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["kind = synthetic_dataset", f"hours = {ds.hours}",
             "regions = " + ",".join(r.region_id for r in ds.regions)]
    lines += [f"synth.{k} = {v}" for k, v in config_to_dict(ds.config).items()]
    for r in ds.regions:
        write_rainfall_stack(ds.rain[r.region_id], d / f"rain_{r.region_id}.stack")
        write_terrain(ds.terrain[r.region_id], d / f"terrain_{r.region_id}.grid")
    write_events(ds.events, d / "events.csv")
    (d / "dataset.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_config(cls, entries: dict[str, str]):
    kwargs = {}
    for f in fields(cls):
        if f.name not in entries:
            continue
        raw = entries[f.name]
        default = getattr(cls(), f.name)
        try:
            if isinstance(default, tuple):
                kwargs[f.name] = tuple(type(default[0])(float(x)) for x in raw.split(","))
            elif isinstance(default, bool):
                kwargs[f.name] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw.strip("'\"")
        except ValueError:
            raise ValidationError(f"bad value {raw!r} for {f.name}") from None
    return cls(**kwargs)


def load_dataset(directory) -> SynthDataset:
    d = Path(directory)
    m = _parse_manifest(d / "dataset.txt")
    if m.get("kind") != "synthetic_dataset":
        raise FormatError(f"{d} is not a dataset directory")
    cfg = _parse_config(SynthConfig, {k[6:]: v for k, v in m.items() if k.startswith("synth.")})
    ids = [r for r in m.get("regions", "").split(",") if r]
    rain = {rid: read_rainfall_stack(d / f"rain_{rid}.stack") for rid in ids}
    terrain = {rid: read_terrain(d / f"terrain_{rid}.grid") for rid in ids}
    regions = [rain[rid].region for rid in ids]
    events = read_events(d / "events.csv")
    events.validate(regions, int(m["hours"]))
    return SynthDataset(regions, rain, terrain, events, cfg)
