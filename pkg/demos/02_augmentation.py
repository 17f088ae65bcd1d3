"""Rainfall-motion augmentation: random-walk displacement of a rainfall sequence.

Run: python3 demos/02_augmentation.py
"""
import numpy as np

from lews.augment import AugmentConfig, augment_sample, derive_rng, sample_displacement_path
from lews.pipeline import SynthConfig, build_dataset_samples, synth_generate

# A displacement path is a cumulative sum of N(0, sigma^2) steps, one per hour,
# so the offset at the last of 48 hours has variance 48 sigma^2 per axis
cfg = AugmentConfig(sigma_disp=1.0)
paths = np.stack([sample_displacement_path(48, cfg, derive_rng(0, k)).offsets for k in range(5000)])
print("terminal offset variance (x, y):", np.round(paths[:, -1].var(axis=0), 1), "expected 48")
print("offset variance at hours 1, 12, 24:", np.round(paths[:, [0, 11, 23], 0].var(axis=0), 2))

# Augmenting a real sample: the rain moves, terrain categories and the label stay
ds = synth_generate(SynthConfig(n_regions=2, hours=300, seed=1))
samples = build_dataset_samples(ds)
s = max(samples, key=lambda s: s.rain.values.sum())
view = augment_sample(s, AugmentConfig(), derive_rng(7))
print("sample", s.region_id, "anchor", s.anchor_t, "label", s.label, "-> view label", view.label)
print("total rain before / after:", round(float(s.rain.values.sum()), 1), round(float(view.rain.values.sum()), 1))
print("soil/vegetation/slope unchanged:",
      np.array_equal(s.terrain.model_channels()[:29], view.terrain.model_channels()[:29]))
print("rain centroid shift over the last hour (cells):")
yy, xx = np.mgrid[0:10, 0:10]
for name, seq in (("original", s.rain.values), ("augmented", view.rain.values)):
    w = seq[-1] / max(seq[-1].sum(), 1e-9)
    print(f"  {name:9s} y={float((w * yy).sum()):.2f} x={float((w * xx).sum()):.2f}")
