"""Nowcasting a synthetic storm: optical flow, then semi-Lagrangian advection.

Run: python3 demos/01_nowcast.py
"""
import numpy as np

from lews.geogrid import RainfallField, Region
from lews.motion import estimate_flow
from lews.nowcast import forecast
from lews.pipeline import SynthConfig, synth_generate

# One 10x10 region, several hundred hours of rain cells drifting with the wind
ds = synth_generate(SynthConfig(n_regions=1, hours=800, seed=3))
rain = ds.rain[ds.regions[0].region_id]

# At every wet hour: flow from the last three observed hours, advect the latest
# field 8 hours ahead, and compare with what fell. Two naive references:
# persistence (nothing moves) and a zero-rain forecast.
errors = {"nowcast": np.zeros(8), "persistence": np.zeros(8), "zero": np.zeros(8)}
speeds, n = [], 0
for t in range(2, len(rain) - 8):
    if rain.values[t].max() < 1.0:
        continue
    f0, f1, f2 = (rain.field_at(t - k) for k in (2, 1, 0))
    motion = estimate_flow(f0, f1, f2)
    speeds.append(float(np.hypot(motion.u, motion.v).mean()))
    for k, f in enumerate(forecast(f2, motion, 8)):
        truth = rain.values[t + k + 1]
        errors["nowcast"][k] += np.abs(f.values - truth).mean()
        errors["persistence"][k] += np.abs(f2.values - truth).mean()
        errors["zero"][k] += truth.mean()
    n += 1
print(n, "wet hours, median estimated speed", round(float(np.median(speeds)), 2), "cells/h")
print("lead  nowcast  persistence   zero   (mean abs error, mm/h)")
for k in range(8):
    print(f"{k + 1:4d}  {errors['nowcast'][k] / n:7.3f}  {errors['persistence'][k] / n:11.3f}"
          f"  {errors['zero'][k] / n:6.3f}")

# A clean case: one Gaussian blob moving one cell east per hour
y, x = np.mgrid[0:12, 0:12]
region = Region("blob", 12, 12)
frames = [RainfallField(region, k, 10 * np.exp(-((y - 6) ** 2 + (x - 3 - k) ** 2) / 8)) for k in range(3)]
m = estimate_flow(*frames)
strong = frames[2].values > 1
print("blob: recovered u", round(float(m.u[strong].mean()), 3), "v", round(float(m.v[strong].mean()), 3),
      "(true 1, 0)")
