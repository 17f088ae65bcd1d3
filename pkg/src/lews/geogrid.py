"""Gridded rainfall / terrain data model and its on-disk formats.

Every stored array is a pair of files: a plain-text manifest of ``key = value``
lines and a raw payload of 32-bit little-endian floats (``<manifest>.bin``).
Serialized bytes depend only on content, so identical inputs always produce
identical files.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

N_SOIL = 10
N_VEG = 11
N_SLOPE = 8
N_TERRAIN_CHANNELS = N_SOIL + N_VEG + N_SLOPE + 1
ONEHOT_TOL = 1e-6
PAYLOAD_DTYPE = np.dtype("<f4")


class ValidationError(ValueError):
    """Data violates a grid invariant."""


class FormatError(ValueError):
    """A stored file is malformed or inconsistent with its manifest."""


class Provenance(enum.Enum):
    OBSERVED = "observed"
    FORECAST = "forecast"
    AUGMENTED = "augmented"


@dataclass(frozen=True)
class Region:
    region_id: str
    height_cells: int = 10
    width_cells: int = 10
    cell_size_km: float = 1.0

    def __post_init__(self):
        if self.height_cells < 3 or self.width_cells < 3:
            raise ValidationError("region must be at least 3x3 cells")
        if not self.cell_size_km > 0:
            raise ValidationError("cell_size_km must be positive")
        if not self.region_id or any(c in self.region_id for c in ",\n="):
            raise ValidationError(f"bad region id {self.region_id!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_cells, self.width_cells)


def _check_rain(values: np.ndarray, shape: tuple[int, ...]) -> None:
    if values.shape != shape:
        raise ValidationError(f"rain grid shape {values.shape} != {shape}")
    if not np.all(np.isfinite(values)):
        raise ValidationError("rain grid contains non-finite values")
    if np.any(values < 0):
        raise ValidationError("rain grid contains negative values")


@dataclass(frozen=True, eq=False)
class RainfallField:
    """One hourly precipitation grid in mm/h."""

    region: Region
    t_index: int
    values: np.ndarray
    provenance: Provenance = Provenance.OBSERVED

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        _check_rain(values, self.region.shape)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t_index", int(self.t_index))


@dataclass(frozen=True, eq=False)
class RainfallSequence:
    """Consecutive hourly rainfall grids, stored as one ``(T, H, W)`` array.

    ``t0`` is the hour index of the first grid; grid ``k`` is hour ``t0 + k``.
    """

    region: Region
    t0: int
    values: np.ndarray
    provenance: tuple[Provenance, ...] = ()

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 3 or values.shape[0] < 1:
            raise ValidationError("rainfall sequence must be a non-empty (T, H, W) stack")
        _check_rain(values, (values.shape[0],) + self.region.shape)
        prov = tuple(self.provenance) or (Provenance.OBSERVED,) * values.shape[0]
        if len(prov) != values.shape[0]:
            raise ValidationError("provenance length must match sequence length")
        prov = tuple(Provenance(p) for p in prov)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "provenance", prov)
        object.__setattr__(self, "t0", int(self.t0))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def fields(self) -> list[RainfallField]:
        return [RainfallField(self.region, self.t0 + k, self.values[k], self.provenance[k])
                for k in range(len(self))]

    @classmethod
    def from_fields(cls, fields: Sequence[RainfallField]) -> "RainfallSequence":
        if not fields:
            raise ValidationError("empty field list")
        region = fields[0].region
        for a, b in zip(fields, fields[1:]):
            if b.region != region:
                raise ValidationError("fields span more than one region")
            if b.t_index - a.t_index != 1:
                raise ValidationError("fields are not consecutive hours")
        return cls(region, fields[0].t_index,
                   np.stack([f.values for f in fields]),
                   tuple(f.provenance for f in fields))

    def window(self, start: int, stop: int) -> "RainfallSequence":
        """Sub-sequence covering hours ``start .. stop-1`` (absolute indices)."""
        i, j = start - self.t0, stop - self.t0
        if i < 0 or j > len(self) or j <= i:
            raise ValidationError(f"window [{start}, {stop}) outside sequence")
        return RainfallSequence(self.region, start, self.values[i:j], self.provenance[i:j])

    def field_at(self, t: int) -> RainfallField:
        k = t - self.t0
        if not 0 <= k < len(self):
            raise ValidationError(f"hour {t} outside sequence")
        return RainfallField(self.region, t, self.values[k], self.provenance[k])


def normalize_elevation(elevation: np.ndarray) -> np.ndarray:
    """Per-region z-score; a flat region maps to all zeros."""
    e = np.asarray(elevation, dtype=np.float64)
    std = e.std()
    if std == 0 or std < 1e-12 * max(1.0, abs(e.mean())):
        return np.zeros_like(e)
    return (e - e.mean()) / std


def _check_onehot(name: str, block: np.ndarray) -> None:
    if not np.all(np.isfinite(block)):
        raise ValidationError(f"{name} channels contain non-finite values")
    if np.any(np.abs(block.sum(axis=-1) - 1.0) > ONEHOT_TOL):
        raise ValidationError(f"{name} one-hot channels must sum to 1 in every cell")
    if np.any((np.abs(block) > ONEHOT_TOL) & (np.abs(block - 1) > ONEHOT_TOL)):
        raise ValidationError(f"{name} channels must be 0/1")


@dataclass(frozen=True, eq=False)
class TerrainGrid:
    """Static terrain channels for one region.

    ``soil``, ``vegetation`` and ``slope`` are ``(H, W, K)`` one-hot blocks;
    ``elevation`` is in meters. ``elevation_norm`` defaults to the per-region
    z-score of ``elevation`` and is the copy the encoder consumes.
    """

    region: Region
    soil: np.ndarray
    vegetation: np.ndarray
    slope: np.ndarray
    elevation: np.ndarray
    elevation_norm: np.ndarray | None = None

    def __post_init__(self):
        H, W = self.region.shape
        for name, arr, k in (("soil", self.soil, N_SOIL), ("vegetation", self.vegetation, N_VEG),
                             ("slope", self.slope, N_SLOPE)):
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            if arr.shape != (H, W, k):
                raise ValidationError(f"{name} block shape {arr.shape} != {(H, W, k)}")
            _check_onehot(name, arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        elev = np.ascontiguousarray(self.elevation, dtype=np.float32)
        if elev.shape != (H, W) or not np.all(np.isfinite(elev)):
            raise ValidationError("elevation must be a finite (H, W) grid")
        elev.flags.writeable = False
        object.__setattr__(self, "elevation", elev)
        norm = self.elevation_norm
        norm = normalize_elevation(elev) if norm is None else np.asarray(norm, dtype=np.float64)
        if norm.shape != (H, W) or not np.all(np.isfinite(norm)):
            raise ValidationError("normalized elevation must be a finite (H, W) grid")
        norm = np.ascontiguousarray(norm, dtype=np.float64)
        norm.flags.writeable = False
        object.__setattr__(self, "elevation_norm", norm)

    @classmethod
    def from_categories(cls, region: Region, soil_idx, veg_idx, slope_idx, elevation) -> "TerrainGrid":
        eye = lambda k, idx: np.eye(k, dtype=np.float32)[np.asarray(idx, dtype=np.int64)]
        return cls(region, eye(N_SOIL, soil_idx), eye(N_VEG, veg_idx), eye(N_SLOPE, slope_idx), elevation)

    def stored_channels(self) -> np.ndarray:
        """``(30, H, W)`` stack in file order with raw elevation last."""
        return np.concatenate([
            np.moveaxis(self.soil, -1, 0), np.moveaxis(self.vegetation, -1, 0),
            np.moveaxis(self.slope, -1, 0), self.elevation[None],
        ]).astype(np.float32)

    @cached_property
    def _model_channels(self) -> np.ndarray:
        out = self.stored_channels()
        out[-1] = self.elevation_norm.astype(np.float32)
        out.flags.writeable = False
        return out

    def model_channels(self) -> np.ndarray:
        """``(30, H, W)`` encoder input: one-hot blocks plus normalized elevation."""
        return self._model_channels

    def categories(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.soil.argmax(-1), self.vegetation.argmax(-1), self.slope.argmax(-1)


@dataclass(frozen=True)
class Event:
    region_id: str
    t_index: int
    y: int
    x: int


@dataclass
class EventTable:
    rows: list[Event] = field(default_factory=list)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def for_region(self, region_id: str) -> "EventTable":
        return EventTable([e for e in self.rows if e.region_id == region_id])

    def hours(self, region_id: str | None = None) -> np.ndarray:
        ts = [e.t_index for e in self.rows if region_id is None or e.region_id == region_id]
        return np.array(sorted(ts), dtype=np.int64)

    def validate(self, regions: Iterable[Region], n_hours: int | None = None) -> None:
        by_id = {r.region_id: r for r in regions}
        for e in self.rows:
            r = by_id.get(e.region_id)
            if r is None:
                raise ValidationError(f"event for unknown region {e.region_id!r}")
            if not (0 <= e.y < r.height_cells and 0 <= e.x < r.width_cells):
                raise ValidationError(f"event cell ({e.y}, {e.x}) outside region {e.region_id}")
            if e.t_index < 0 or (n_hours is not None and e.t_index >= n_hours):
                raise ValidationError(f"event hour {e.t_index} outside dataset range")


# --------------------------------------------------------------------- files

def _payload_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".bin")


def _format_manifest(entries: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in entries.items())


def _parse_manifest(path) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _get_int(m: dict, key: str) -> int:
    try:
        return int(m[key])
    except KeyError:
        raise FormatError(f"manifest missing {key!r}") from None
    except ValueError:
        raise FormatError(f"manifest key {key!r} is not an integer") from None


def _get_float(m: dict, key: str) -> float:
    try:
        return float(m[key])
    except KeyError:
        raise FormatError(f"manifest missing {key!r}") from None
    except ValueError:
        raise FormatError(f"manifest key {key!r} is not a number") from None


def write_array_pair(path, manifest: dict, array: np.ndarray) -> None:
    """Write ``manifest`` text at ``path`` and ``array`` as float32-LE at ``path.bin``."""
    path = Path(path)
    payload = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()
    text = _format_manifest(dict(manifest, payload=_payload_path(path).name,
                                 dtype="float32le"))
    _payload_path(path).write_bytes(payload)
    path.write_text(text, encoding="utf-8")


def read_payload(path, n_words: int) -> np.ndarray:
    raw = _payload_path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"payload length {len(raw)} is not a whole number of words")
    if len(raw) // 4 != n_words:
        raise FormatError(f"payload has {len(raw) // 4} words, manifest implies {n_words}")
    data = np.frombuffer(raw, dtype=PAYLOAD_DTYPE).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise FormatError("payload contains NaN or infinite values")
    return data


def _region_entries(region: Region) -> dict:
    return {"region_id": region.region_id, "H": region.height_cells,
            "W": region.width_cells, "cell_km": repr(float(region.cell_size_km))}


def _region_from(m: dict) -> Region:
    if "region_id" not in m:
        raise FormatError("manifest missing 'region_id'")
    try:
        return Region(m["region_id"], _get_int(m, "H"), _get_int(m, "W"), _get_float(m, "cell_km"))
    except ValidationError as exc:
        raise FormatError(f"bad region in manifest: {exc}") from None


def write_rainfall_stack(seq: RainfallSequence, path) -> None:
    if not isinstance(seq, RainfallSequence):
        seq = RainfallSequence.from_fields(seq)
    # Re-validate: arrays may have been swapped in via object.__setattr__.
    _check_rain(seq.values, (len(seq),) + seq.region.shape)
    manifest = {"kind": "rainfall_stack", **_region_entries(seq.region),
                "epoch": seq.t0, "dt_hours": 1, "T": len(seq),
                "provenance": ",".join(p.value for p in seq.provenance),
                "layout": "t,row,col"}
    write_array_pair(path, manifest, seq.values)


def read_rainfall_stack(path) -> RainfallSequence:
    m = _parse_manifest(path)
    if m.get("kind", "rainfall_stack") != "rainfall_stack":
        raise FormatError(f"{path} is not a rainfall stack")
    region = _region_from(m)
    T = _get_int(m, "T")
    if _get_int(m, "dt_hours") != 1:
        raise FormatError("only hourly stacks are supported")
    if T < 1:
        raise FormatError("T must be positive")
    try:
        prov = tuple(Provenance(p) for p in m["provenance"].split(","))
    except (KeyError, ValueError):
        raise FormatError("manifest provenance list missing or invalid") from None
    if len(prov) != T:
        raise FormatError("provenance list length does not match T")
    H, W = region.shape
    data = read_payload(path, T * H * W).reshape(T, H, W)
    try:
        return RainfallSequence(region, _get_int(m, "epoch"), data, prov)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_terrain(grid: TerrainGrid, path) -> None:
    manifest = {"kind": "terrain", **_region_entries(grid.region), "C": N_TERRAIN_CHANNELS,
                "channels": f"soil:{N_SOIL},vegetation:{N_VEG},slope:{N_SLOPE},elevation:1",
                "layout": "channel,row,col"}
    write_array_pair(path, manifest, grid.stored_channels())


def read_terrain(path) -> TerrainGrid:
    m = _parse_manifest(path)
    if m.get("kind", "terrain") != "terrain":
        raise FormatError(f"{path} is not a terrain grid")
    region = _region_from(m)
    if _get_int(m, "C") != N_TERRAIN_CHANNELS:
        raise FormatError(f"terrain must have {N_TERRAIN_CHANNELS} channels")
    H, W = region.shape
    data = read_payload(path, N_TERRAIN_CHANNELS * H * W).reshape(N_TERRAIN_CHANNELS, H, W)
    chw = np.moveaxis(data, 0, -1)
    a, b, c = N_SOIL, N_SOIL + N_VEG, N_SOIL + N_VEG + N_SLOPE
    return TerrainGrid(region, chw[..., :a], chw[..., a:b], chw[..., b:c], data[-1])


EVENT_HEADER = ["region_id", "t_index", "y", "x"]


def write_events(table: EventTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_HEADER)
        for e in table:
            w.writerow([e.region_id, e.t_index, e.y, e.x])


def read_events(path) -> EventTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVENT_HEADER:
            raise FormatError(f"event table header must be {','.join(EVENT_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                rid, t, y, x = rec
                rows.append(Event(rid, int(t), int(y), int(x)))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed event row") from None
    return EventTable(rows)

