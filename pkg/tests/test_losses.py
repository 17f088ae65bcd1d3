import math
import warnings

import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from lews.losses import (ContrastiveBatch, focal_loss, focal_loss_with_logits, focal_terms,
                         rmcl_loss, rmcl_loss_and_grad)


def brute_rmcl(z, y, tau):
    """Pairwise loops over anchors, positives and the denominator set."""
    n = len(z)
    sim = lambda a, b: float(np.dot(z[a], z[b]) / (np.linalg.norm(z[a]) * np.linalg.norm(z[b])))
    total, count = 0.0, 0
    for i in range(n):
        pos = [p for p in range(n) if p != i and y[p] == y[i]]
        if not pos:
            continue
        denom = sum(math.exp(sim(i, a) / tau) for a in range(n) if a != i)
        total += -sum(math.log(math.exp(sim(i, p) / tau) / denom) for p in pos) / len(pos)
        count += 1
    return total / count


def random_batch(rng):
    n = int(rng.integers(2, 17))
    y = rng.integers(0, 2, n)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    if n == 2:
        y[:] = [0, 0]
    return rng.normal(size=(n, int(rng.integers(2, 9)))), y


def test_rmcl_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        z, y = random_batch(rng)
        tau = float(rng.uniform(0.05, 1.0))
        assert rmcl_loss(z, y, tau) == pytest.approx(brute_rmcl(z, y, tau), abs=1e-6)


def test_rmcl_gradient_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(5):
        z, y = random_batch(rng)
        _, dz, _ = rmcl_loss_and_grad(z, y, 0.3)
        num = numeric_grad(lambda: rmcl_loss(z, y, 0.3), z)
        assert rel_error(dz, num) < 1e-6


def test_rmcl_scale_invariant():
    rng = np.random.default_rng(2)
    z, y = rng.normal(size=(6, 4)), np.array([0, 0, 1, 1, 0, 1])
    assert rmcl_loss(z, y) == pytest.approx(rmcl_loss(3.7 * z, y), abs=1e-12)


def test_anchor_without_positive_is_skipped():
    z = np.random.default_rng(3).normal(size=(3, 4))
    y = np.array([0, 0, 1])
    assert rmcl_loss(z, y, 0.2) == pytest.approx(brute_rmcl(z, y, 0.2), abs=1e-12)
    _, dz, _ = rmcl_loss_and_grad(z, y, 0.2)
    num = numeric_grad(lambda: rmcl_loss(z, y, 0.2), z)
    assert rel_error(dz, num) < 1e-6


def test_all_anchors_skipped_warns():
    with pytest.warns(RuntimeWarning):
        loss, dz, skipped = rmcl_loss_and_grad(np.eye(3), [0, 1, 2])
    assert loss == 0.0 and skipped and np.all(dz == 0)


def test_perfect_clusters_beat_mixed():
    y = np.array([0, 0, 0, 1, 1, 1])
    clustered = np.array([[1, 0]] * 3 + [[-1, 0]] * 3, dtype=float)
    mixed = np.array([[1, 0], [-1, 0]] * 3, dtype=float)
    assert rmcl_loss(clustered, y) < rmcl_loss(mixed, y)


def test_contrastive_batch_checks():
    with pytest.raises(ValueError):
        ContrastiveBatch(np.zeros((1, 3)), [0])
    with pytest.raises(ValueError):
        ContrastiveBatch(np.zeros((2, 3)), [0, 1], temperature=0)
    b = ContrastiveBatch(np.eye(4), [0, 0, 1, 1], 0.5)
    assert b.loss() == pytest.approx(brute_rmcl(np.eye(4), [0, 0, 1, 1], 0.5), abs=1e-12)


def direct_focal(p, y, alpha, gamma):
    p = min(max(p, 1e-7), 1 - 1e-7)
    return (-alpha * (1 - p) ** gamma * y * math.log(p)
            - (1 - alpha) * p ** gamma * (1 - y) * math.log(1 - p))


def test_focal_matches_direct_evaluation():
    rng = np.random.default_rng(4)
    for _ in range(200):
        p, y = float(rng.random()), int(rng.integers(0, 2))
        alpha, gamma = float(rng.uniform(0.05, 0.95)), float(rng.uniform(0, 5))
        assert focal_loss(p, y, alpha, gamma) == pytest.approx(direct_focal(p, y, alpha, gamma), abs=1e-9)


def test_focal_gamma_zero_is_weighted_cross_entropy():
    rng = np.random.default_rng(5)
    p = np.clip(rng.random(500), 1e-7, 1 - 1e-7)
    y = rng.integers(0, 2, 500).astype(float)
    ce = -0.25 * y * np.log(p) - 0.75 * (1 - y) * np.log(1 - p)
    assert np.array_equal(focal_terms(p, y, 0.25, 0.0), ce)


def test_focal_clamps_extremes():
    assert np.isfinite(focal_loss(0.0, 1)) and np.isfinite(focal_loss(1.0, 0))
    assert focal_loss(0.0, 1) == pytest.approx(direct_focal(1e-7, 1, 0.25, 2.0), abs=1e-9)


def test_focal_logit_gradient():
    rng = np.random.default_rng(6)
    for gamma in (0.0, 0.5, 2.0):
        s = rng.normal(0, 2, 16)
        y = rng.integers(0, 2, 16)
        loss, ds = focal_loss_with_logits(s, y, 0.3, gamma)
        p = 1 / (1 + np.exp(-s))
        assert loss == pytest.approx(focal_loss(p, y, 0.3, gamma), abs=1e-12)
        num = numeric_grad(lambda: focal_loss_with_logits(s, y, 0.3, gamma)[0], s)
        assert rel_error(ds, num) < 1e-6


def test_focal_parameter_checks():
    with pytest.raises(ValueError):
        focal_loss(0.5, 1, alpha=0.0)
    with pytest.raises(ValueError):
        focal_loss(0.5, 1, gamma=-1.0)
