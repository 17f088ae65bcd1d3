"""Anchored 48-hour samples, labels and the chronological split."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geogrid import EventTable, Provenance, RainfallSequence, TerrainGrid, ValidationError
from ..motion import FlowConfig, estimate_flow
from ..nowcast import forecast

N_OBSERVED = 40
N_FORECAST = 8
SEQ_LEN = N_OBSERVED + N_FORECAST
HISTORY = 48
RAINY_THRESHOLD = 0.5
RAINY_LOOKBACK = 24


class Setting(enum.Enum):
    OBSERVED = "observed"
    FORECASTED = "forecasted"


@dataclass(frozen=True, eq=False)
class Sample:
    rain: RainfallSequence
    terrain: TerrainGrid
    label: int
    anchor_t: int
    region_id: str
    setting: Setting = Setting.OBSERVED

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError("label must be 0 or 1")
        prov = self.rain.provenance
        if self.setting is Setting.FORECASTED:
            expected = (Provenance.OBSERVED,) * N_OBSERVED + (Provenance.FORECAST,) * N_FORECAST
            if len(prov) == SEQ_LEN and prov != expected and Provenance.AUGMENTED not in prov:
                raise ValidationError("forecasted-rainfall sample must be 40 observed + 8 forecast")
        elif Provenance.FORECAST in prov:
            raise ValidationError("observed-rainfall sample contains forecast steps")


def label_for(event_hours: np.ndarray, t: int, horizon: int = N_FORECAST) -> int:
    """1 iff some event hour lies in (t, t + horizon]."""
    lo = np.searchsorted(event_hours, t, side="right")
    return int(lo < len(event_hours) and event_hours[lo] <= t + horizon)


def rainy_anchors(rain: RainfallSequence, threshold: float = RAINY_THRESHOLD,
                  lookback: int = RAINY_LOOKBACK) -> np.ndarray:
    """Eligible anchor hours t whose window (t-24, t] rains above ``threshold`` somewhere."""
    T = len(rain)
    wet = (rain.values.reshape(T, -1).max(axis=1) > threshold).astype(np.int64)
    c = np.concatenate([[0], np.cumsum(wet)])
    local = np.arange(HISTORY - 1, T - N_FORECAST)
    recent = c[local + 1] - c[np.maximum(local + 1 - lookback, 0)]
    return local[recent > 0] + rain.t0


def build_samples(rain: RainfallSequence, terrain: TerrainGrid, events: EventTable,
                  setting: Setting = Setting.OBSERVED, flow_cfg: FlowConfig = FlowConfig(),
                  anchors: Sequence[int] | None = None) -> list[Sample]:
    """Samples for one region, one per anchor hour.

    Anchor ``t`` covers hours (t-40, t+8]. In the forecasted setting the last
    eight hours are replaced by an advection nowcast from the fields at
    t-2, t-1, t.
    """
    rid = rain.region.region_id
    if terrain.region != rain.region:
        raise ValidationError("terrain and rainfall belong to different regions")
    if anchors is None:
        anchors = rainy_anchors(rain)
    event_hours = events.hours(rid)
    out = []
    for t in map(int, anchors):
        if t - rain.t0 < HISTORY - 1:
            raise ValidationError(f"anchor {t} has fewer than {HISTORY} hours of history")
        if t + N_FORECAST >= rain.t0 + len(rain):
            raise ValidationError(f"anchor {t} lacks {N_FORECAST} hours after it")
        window = rain.window(t - N_OBSERVED + 1, t + N_FORECAST + 1)
        if setting is Setting.FORECASTED:
            f0, f1, f2 = (rain.field_at(t - k) for k in (2, 1, 0))
            fc = forecast(f2, estimate_flow(f0, f1, f2, flow_cfg), N_FORECAST)
            values = np.concatenate([window.values[:N_OBSERVED], np.stack([f.values for f in fc])])
            prov = (Provenance.OBSERVED,) * N_OBSERVED + (Provenance.FORECAST,) * N_FORECAST
            window = RainfallSequence(rain.region, window.t0, values, prov)
        out.append(Sample(window, terrain, label_for(event_hours, t), t, rid, setting))
    return out


def build_dataset_samples(dataset, setting: Setting = Setting.OBSERVED,
                          flow_cfg: FlowConfig = FlowConfig()) -> list[Sample]:
    """Samples over all regions of a :class:`SynthDataset`, anchors from observed rain."""
    out = []
    for region in dataset.regions:
        rid = region.region_id
        out += build_samples(dataset.rain[rid], dataset.terrain[rid], dataset.events, setting, flow_cfg)
    return out


def chrono_split(samples: Sequence[Sample], train_frac: float = 0.7) -> tuple[list[Sample], list[Sample]]:
    """Earliest ``train_frac`` of samples by anchor hour go to training.

    Ties are ordered by region id, then by input order. Only anchor order is
    enforced; windows of train and test samples may overlap.
    """
    if not samples:
        raise ValidationError("cannot split an empty sample list")
    if not 0 < train_frac < 1:
        raise ValidationError("train_frac must lie in (0, 1)")
    order = sorted(range(len(samples)), key=lambda i: (samples[i].anchor_t, samples[i].region_id, i))
    k = int(math.floor(train_frac * len(samples) + 0.5))
    return [samples[i] for i in order[:k]], [samples[i] for i in order[k:]]


def stack_batch(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rain (B, T, H, W), terrain (B, 30, H, W), labels (B,)) arrays."""
    rain = np.stack([s.rain.values for s in samples])
    terrain = np.stack([s.terrain.model_channels() for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return rain, terrain, labels
