"""The two training losses and the evaluation metric on toy numbers.

Run: python3 demos/03_losses_and_metric.py
"""
import numpy as np

from lews.evalkit import pr_curve, precision_at_recall
from lews.losses import focal_loss, rmcl_loss

# Supervised contrastive loss: embeddings sharing a label should point the same way
y = np.array([0, 0, 0, 1, 1, 1])
clustered = np.array([[1, 0]] * 3 + [[-1, 0]] * 3, dtype=float)
mixed = np.array([[1, 0], [-1, 0]] * 3, dtype=float)
rng = np.random.default_rng(0)
print("contrastive loss, clustered:", round(rmcl_loss(clustered, y, 0.1), 4))
print("contrastive loss, random   :", round(rmcl_loss(rng.normal(size=(6, 2)), y, 0.1), 4))
print("contrastive loss, mixed    :", round(rmcl_loss(mixed, y, 0.1), 4))

# Focal loss: confident correct predictions cost almost nothing when gamma > 0
print("p(landslide)  label  CE(alpha)  focal(gamma=2)")
for p, lab in [(0.9, 1), (0.6, 1), (0.1, 1), (0.1, 0), (0.6, 0)]:
    print(f"{p:12.1f}  {lab:5d}  {focal_loss(p, lab, 0.25, 0.0):9.4f}  {focal_loss(p, lab, 0.25, 2.0):14.4f}")

# Precision at 80% recall: the strictest threshold that still catches 80% of events
scores, labels = [0.9, 0.8, 0.7, 0.6, 0.1], [1, 1, 0, 1, 0]
curve = pr_curve(scores, labels)
for thr, p, r in zip(curve.thresholds, curve.precision, curve.recall):
    print(f"threshold {thr:.1f}: precision {p:.3f} recall {r:.3f}")
print("precision@80%recall =", precision_at_recall(curve, 0.8))
