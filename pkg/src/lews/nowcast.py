"""Semi-Lagrangian extrapolation nowcast."""
from __future__ import annotations

import numpy as np

from .geogrid import Provenance, RainfallField, ValidationError
from .interp import shift_sample
from .motion import MotionField


def advect_step(field: RainfallField, motion: MotionField, dt: float = 1.0) -> RainfallField:
    """One backward semi-Lagrangian step: ``out(x) = in(x - dt * w(x))``.

    Inflow across the domain boundary is zero.
    """
    if motion.region.shape != field.region.shape:
        raise ValidationError("motion field and rainfall field shapes differ")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    src = field.values
    out = shift_sample(src, dt * motion.v, dt * motion.u, fill=0.0)
    # bilinear weights are convex; the clip only removes rounding excursions
    out = np.clip(out.astype(np.float32), 0.0, src.max() if src.size else 0.0)
    return RainfallField(field.region, field.t_index + int(round(dt)), out, Provenance.FORECAST)


def forecast(latest: RainfallField, motion: MotionField, horizon: int = 8) -> list[RainfallField]:
    """Advect ``latest`` hour by hour with a motion field held constant."""
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    out, cur = [], latest
    for _ in range(horizon):
        cur = advect_step(cur, motion, 1.0)
        out.append(cur)
    return out
