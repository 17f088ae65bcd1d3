"""Supervised contrastive (RMCL) loss and binary focal loss with gradients."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-7


@dataclass(frozen=True, eq=False)
class ContrastiveBatch:
    embeddings: np.ndarray
    labels: np.ndarray
    temperature: float = 0.1

    def __post_init__(self):
        z = np.asarray(self.embeddings, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64).ravel()
        _check_contrastive(z, y, self.temperature)
        object.__setattr__(self, "embeddings", z)
        object.__setattr__(self, "labels", y)

    def loss(self) -> float:
        return rmcl_loss(self.embeddings, self.labels, self.temperature)


def _check_contrastive(z, y, temperature):
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    if z.ndim != 2 or len(z) != len(y):
        raise ValueError("embeddings must be (N, D) with one label per row")
    if len(y) < 2:
        raise ValueError("contrastive batch needs at least 2 samples")


def rmcl_loss_and_grad(embeddings, labels, temperature: float = 0.1):
    """Mean per-anchor supervised contrastive loss and its gradient.

    Similarities are cosine similarities, so the inputs need not be
    normalized. Anchors without positives are skipped. Returns
    ``(loss, d_loss/d_embeddings, all_skipped)``.
    """
    z = np.asarray(embeddings)
    y = np.asarray(labels).astype(np.int64).ravel()
    _check_contrastive(z, y, temperature)
    dtype = z.dtype if np.issubdtype(z.dtype, np.floating) else np.float64
    z = z.astype(dtype)
    N = len(z)
    norm = np.sqrt((z * z).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, np.finfo(dtype).tiny)
    u = z / norm
    logits = (u @ u.T) / temperature
    eye = np.eye(N, dtype=bool)
    pos = (y[:, None] == y[None, :]) & ~eye
    n_pos = pos.sum(axis=1)
    valid = n_pos > 0
    if not valid.any():
        warnings.warn("no anchor in the contrastive batch has a positive; loss is 0", RuntimeWarning)
        return 0.0, np.zeros_like(z), True

    masked = np.where(eye, -np.inf, logits)
    lse = np.logaddexp.reduce(masked, axis=1)
    log_prob = logits - lse[:, None]
    per_anchor = -(np.where(pos, log_prob, 0.0)).sum(axis=1) / np.maximum(n_pos, 1)
    n_valid = valid.sum()
    loss = per_anchor[valid].sum() / n_valid

    # dL/dlogits[i, a] for valid anchors i: softmax over a != i minus positive indicator / |pos|
    soft = np.exp(masked - lse[:, None])
    dlog = (soft - pos / np.maximum(n_pos, 1)[:, None]) * valid[:, None] / n_valid
    dS = (dlog + dlog.T) / temperature
    du = dS @ u
    dz = (du - u * (du * u).sum(axis=1, keepdims=True)) / norm
    return float(loss), dz.astype(dtype), False


def rmcl_loss(embeddings, labels, temperature: float = 0.1) -> float:
    return rmcl_loss_and_grad(embeddings, labels, temperature)[0]


def _check_focal(alpha, gamma):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not gamma >= 0:
        raise ValueError("gamma must be >= 0")


def focal_terms(y_hat, y, alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """Per-sample focal loss; probabilities are clamped to [1e-7, 1 - 1e-7]."""
    _check_focal(alpha, gamma)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), PROB_EPS, 1 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return (-alpha * (1 - p) ** gamma * y * np.log(p)
            - (1 - alpha) * p ** gamma * (1 - y) * np.log(1 - p))


def focal_loss(y_hat, y, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean binary focal loss over a batch (or the single value for scalars)."""
    return float(np.mean(focal_terms(y_hat, y, alpha, gamma)))


def focal_loss_with_logits(logits, y, alpha: float = 0.25, gamma: float = 2.0):
    """Mean focal loss of ``sigmoid(logits)`` and its gradient w.r.t. the logits.

    The gradient is zero where the probability is clamped.
    """
    _check_focal(alpha, gamma)
    s = np.asarray(logits)
    dtype = s.dtype if np.issubdtype(s.dtype, np.floating) else np.float64
    s64 = s.astype(np.float64)
    y = np.asarray(y, dtype=np.float64)
    p_raw = 0.5 * (1.0 + np.tanh(0.5 * s64))
    p = np.clip(p_raw, PROB_EPS, 1 - PROB_EPS)
    q = 1 - p
    log_p, log_q = np.log(p), np.log(q)
    terms = -alpha * q ** gamma * y * log_p - (1 - alpha) * p ** gamma * (1 - y) * log_q
    # d/dp of each term, then chain through dp/ds = p q
    q_gm1 = q ** (gamma - 1) if gamma >= 1 else np.where(q > 0, q ** (gamma - 1), 0.0)
    p_gm1 = p ** (gamma - 1) if gamma >= 1 else np.where(p > 0, p ** (gamma - 1), 0.0)
    dpos = -alpha * y * (q ** gamma / p - gamma * q_gm1 * log_p)
    dneg = -(1 - alpha) * (1 - y) * (gamma * p_gm1 * log_q - p ** gamma / q)
    unclamped = (p_raw > PROB_EPS) & (p_raw < 1 - PROB_EPS)
    ds = (dpos + dneg) * p * q * unclamped / max(terms.size, 1)
    return float(terms.mean()), ds.astype(dtype)
