"""Precision-recall sweeps, precision at a recall target, and the robustness ablation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .geogrid import ValidationError

REPORT_COLUMNS = ("mode", "setting", "precision_at_recall80", "recall_achieved",
                  "threshold", "tp", "fp", "fn")


@dataclass(frozen=True, eq=False)
class PRCurve:
    """Confusion counts for the rule ``score >= threshold``, thresholds ascending."""
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def n_pos(self) -> int:
        return int(self.tp[0] + self.fn[0])

    @property
    def precision(self) -> np.ndarray:
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> np.ndarray:
        return self.tp / (self.tp + self.fn)


def pr_curve(scores, labels) -> PRCurve:
    """Sweep a threshold over every distinct score; tied scores share one threshold."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if len(s) != len(y):
        raise ValidationError("scores and labels differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    if np.isnan(s).any():
        raise ValidationError("scores contain NaN")
    y = y.astype(np.int64)
    P = int(y.sum())
    if P == 0:
        raise ValidationError("precision-recall needs at least one positive")
    thr, inv = np.unique(s, return_inverse=True)
    pos_at = np.bincount(inv, weights=y, minlength=len(thr))
    all_at = np.bincount(inv, minlength=len(thr))
    # counts of samples with score >= thr[k]: reverse cumulative sums
    tp = np.cumsum(pos_at[::-1])[::-1].astype(np.int64)
    pred = np.cumsum(all_at[::-1])[::-1].astype(np.int64)
    fp = pred - tp
    fn = P - tp
    tn = (len(y) - P) - fp
    return PRCurve(thr, tp, fp, fn, tn)


@dataclass(frozen=True)
class OperatingPoint:
    precision: float
    recall: float
    threshold: float
    tp: int
    fp: int
    fn: int


def operating_point(curve: PRCurve, target: float = 0.8) -> OperatingPoint:
    """Highest threshold whose recall reaches ``target`` (fewest alarms), no interpolation."""
    if not 0 < target <= 1:
        raise ValidationError("target recall must lie in (0, 1]")
    # recall is non-increasing in the threshold, so take the last index that qualifies
    ok = np.flatnonzero(curve.tp >= target * curve.n_pos - 1e-12)
    k = int(ok[-1])
    return OperatingPoint(float(curve.precision[k]), float(curve.recall[k]),
                          float(curve.thresholds[k]), int(curve.tp[k]), int(curve.fp[k]),
                          int(curve.fn[k]))


def precision_at_recall(curve: PRCurve, target: float = 0.8) -> float:
    return operating_point(curve, target).precision


@dataclass
class AblationReport:
    # rows: (mode, setting, OperatingPoint), modes and settings in insertion order
    rows: list[tuple[str, str, OperatingPoint]]

    def cell(self, mode: str, setting: str) -> OperatingPoint:
        for m, s, op in self.rows:
            if m == mode and s == setting:
                return op
        raise KeyError((mode, setting))

    def modes(self) -> list[str]:
        return list(dict.fromkeys(m for m, _, _ in self.rows))

    def settings(self) -> list[str]:
        return list(dict.fromkeys(s for _, s, _ in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for m, s, op in self.rows:
            w.writerow([m, s, f"{op.precision:.6f}", f"{op.recall:.6f}", f"{op.threshold:.9g}",
                        op.tp, op.fp, op.fn])
        return buf.getvalue()

    def to_text(self) -> str:
        settings = self.settings()
        head = f"{'mode':<22}" + "".join(f"{s:>14}" for s in settings) + f"{'degradation':>14}"
        lines = ["precision at 80% recall", head, "-" * len(head)]
        for m in self.modes():
            cells = [self.cell(m, s).precision for s in settings]
            line = f"{m:<22}" + "".join(f"{c:>14.4f}" for c in cells)
            if len(cells) == 2:
                line += f"{relative_degradation(*cells):>14.4f}"
            lines.append(line)
        return "\n".join(lines) + "\n"


def relative_degradation(observed: float, forecasted: float) -> float:
    """(observed - forecasted) / observed; 0 when the observed precision is 0."""
    return (observed - forecasted) / observed if observed > 0 else 0.0


def robustness_ablation(scores: Mapping[str, Mapping[str, np.ndarray]],
                        labels: Mapping[str, np.ndarray], target: float = 0.8) -> AblationReport:
    """Grid of precision@recall from per-(mode, setting) scores.

    ``scores[mode][setting]`` are the model's probabilities on the test set
    for ``setting``; ``labels[setting]`` the matching ground truth.
    """
    rows = []
    for mode, per_setting in scores.items():
        if per_setting is None:
            raise ValidationError(f"missing model for mode {mode}")
        for setting in labels:
            if setting not in per_setting:
                raise ValidationError(f"mode {mode} has no scores for setting {setting}")
            op = operating_point(pr_curve(per_setting[setting], labels[setting]), target)
            rows.append((mode, setting, op))
    return AblationReport(rows)
