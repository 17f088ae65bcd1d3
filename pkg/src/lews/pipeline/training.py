"""RMCL pretraining, focal-loss finetuning and the end-to-end baselines."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..augment import AugmentConfig, augment_sample, derive_rng
from ..geogrid import ValidationError
from ..losses import focal_loss_with_logits, rmcl_loss_and_grad
from ..neural import AdamWState, EncoderConfig, LandslideNet, ModelParams, adamw_step
from .samples import Sample, Setting, stack_batch

# RNG stream tags, so each consumer of the master seed draws independently
_BATCHES, _VIEWS, _PROBE, _SHUFFLE = 1, 2, 3, 4


class Mode(enum.Enum):
    RMCL = "rmcl"
    END_TO_END = "end-to-end"
    END_TO_END_FORECAST = "end-to-end-forecast"


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.RMCL
    pretrain_epochs: int = 100
    finetune_epochs: int = 50
    batch_size: int = 32
    views_per_sample: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.01
    temperature: float = 0.1
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    probe_size: int = 64
    # "cosine" anneals lr to 0 over each stage, "constant" keeps it fixed
    lr_schedule: str = "cosine"
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    # parameter-name prefixes to update; empty means all
    trainable: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ValidationError("epoch counts must be >= 0")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")
        if self.views_per_sample < 1:
            raise ValidationError("views_per_sample must be >= 1")
        if not self.lr > 0:
            raise ValidationError("lr must be > 0")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValidationError("lr_schedule must be 'cosine' or 'constant'")


@dataclass
class TrainResult:
    params: ModelParams
    history: list[tuple[int, float]]
    probe: list[float]


def write_loss_csv(history: Sequence[tuple[int, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for epoch, loss in history:
            w.writerow([epoch, repr(float(loss))])


def _lr_at(cfg: TrainConfig, step: int, total: int) -> float:
    if cfg.lr_schedule == "constant" or total <= 1:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def _check_classes(samples: Sequence[Sample]) -> np.ndarray:
    labels = np.array([s.label for s in samples], dtype=np.int64)
    if len(labels) < 2:
        raise ValidationError("need at least 2 training samples")
    if labels.min() == labels.max():
        raise ValidationError("training set contains a single class")
    return labels


def _views(samples, indices, cfg: TrainConfig, *stream):
    """Original plus ``views_per_sample - 1`` augmented views per selected sample."""
    out = []
    for slot, i in enumerate(indices):
        s = samples[i]
        out.append(s)
        for v in range(1, cfg.views_per_sample):
            out.append(augment_sample(s, cfg.augment, derive_rng(cfg.seed, *stream, slot, int(i), v)))
    return out


def _trainable_names(params: ModelParams, cfg: TrainConfig) -> set[str] | None:
    if not cfg.trainable:
        return None
    names = {k for k in params.arrays if any(k.startswith(p) for p in cfg.trainable)}
    if not names:
        raise ValidationError(f"no parameters match trainable prefixes {cfg.trainable}")
    return names


def _rmcl_eval(net, params, batch, cfg):
    rain, terrain, labels = stack_batch(batch)
    z = net.encode(params, rain, terrain, normalize=True)
    net.clear()
    return rmcl_loss_and_grad(z, labels, cfg.temperature)[0]


def pretrain_rmcl(train: Sequence[Sample], cfg: TrainConfig = TrainConfig(),
                  params: ModelParams | None = None, on_epoch=None) -> TrainResult:
    """Supervised contrastive pretraining on original + displaced views.

    Mini-batches are class balanced: half positives (resampled when scarce),
    half negatives drawn without replacement. ``on_epoch(epoch, params)`` is
    called after every epoch if given.
    """
    labels = _check_classes(train)
    net = LandslideNet(cfg.encoder)
    params = net.init_params(cfg.seed, with_head=False) if params is None else params.copy()
    only = _trainable_names(params, cfg)
    state = AdamWState()
    pos_idx, neg_idx = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
    n_pos = cfg.batch_size // 2
    n_neg = cfg.batch_size - n_pos
    n_batches = max(1, math.ceil(len(train) / cfg.batch_size))

    probe_rng = derive_rng(cfg.seed, _PROBE)
    half = max(1, cfg.probe_size // 2)
    probe_idx = np.concatenate([probe_rng.permutation(pos_idx)[:half],
                                probe_rng.permutation(neg_idx)[:half]])
    probe = _views(train, probe_idx, cfg, _PROBE)
    probe_hist = [_rmcl_eval(net, params, probe, cfg)]
    history = [(0, probe_hist[0])]

    for epoch in range(1, cfg.pretrain_epochs + 1):
        rng = derive_rng(cfg.seed, _BATCHES, epoch)
        neg_order = rng.permutation(neg_idx)
        losses = []
        for b in range(n_batches):
            pos = rng.choice(pos_idx, n_pos, replace=len(pos_idx) < n_pos)
            neg = np.take(neg_order, np.arange(b * n_neg, (b + 1) * n_neg), mode="wrap")
            idx = np.concatenate([pos, neg])
            batch = _views(train, idx, cfg, _VIEWS, epoch, b)
            rain, terrain, y = stack_batch(batch)
            z = net.encode(params, rain, terrain, normalize=True)
            loss, dz, _ = rmcl_loss_and_grad(z, y, cfg.temperature)
            grads = net.backward(params, dz=dz)
            lr = _lr_at(cfg, (epoch - 1) * n_batches + b, cfg.pretrain_epochs * n_batches)
            adamw_step(params, grads, state, lr, weight_decay=cfg.weight_decay, only=only)
            losses.append(loss)
        history.append((epoch, float(np.mean(losses))))
        probe_hist.append(_rmcl_eval(net, params, probe, cfg))
        if on_epoch is not None:
            on_epoch(epoch, params)
    return TrainResult(params, history, probe_hist)


def _focal_eval(net, params, samples, cfg, batch=256):
    total, n = 0.0, 0
    for i in range(0, len(samples), batch):
        rain, terrain, y = stack_batch(samples[i:i + batch])
        z = net.encode(params, rain, terrain, normalize=True)
        loss, _ = focal_loss_with_logits(net.logits(params, z), y, cfg.focal_alpha, cfg.focal_gamma)
        total += loss * len(y)
        n += len(y)
    net.clear()
    return total / n


def finetune(train: Sequence[Sample], encoder_params: ModelParams,
             cfg: TrainConfig = TrainConfig(), on_epoch=None) -> TrainResult:
    """Attach the MLP head and minimize mean focal loss over all parameters."""
    _check_classes(train)
    net = LandslideNet(encoder_params.config)
    params = encoder_params.copy() if encoder_params.has_head() \
        else net.init_head(encoder_params, cfg.seed)
    only = _trainable_names(params, cfg)
    encoder_frozen = only is not None and all(k.startswith("head.") for k in only)
    state = AdamWState()

    probe_rng = derive_rng(cfg.seed, _PROBE)
    probe = [train[i] for i in sorted(probe_rng.permutation(len(train))[:max(cfg.probe_size, 1)])]
    probe_hist = [_focal_eval(net, params, probe, cfg)]
    history = [(0, probe_hist[0])]

    cached_z = None
    if encoder_frozen:
        cached_z = np.concatenate([net.encode(params, *stack_batch(train[i:i + 256])[:2], normalize=True)
                                   for i in range(0, len(train), 256)])
        net.clear()
    labels_all = np.array([s.label for s in train])
    n_batches = math.ceil(len(train) / cfg.batch_size)

    for epoch in range(1, cfg.finetune_epochs + 1):
        order = derive_rng(cfg.seed, _SHUFFLE, epoch).permutation(len(train))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            if cached_z is not None:
                z, y = cached_z[idx], labels_all[idx]
            else:
                rain, terrain, y = stack_batch([train[i] for i in idx])
                z = net.encode(params, rain, terrain, normalize=True)
            loss, dlogits = focal_loss_with_logits(net.logits(params, z), y,
                                                   cfg.focal_alpha, cfg.focal_gamma)
            if cached_z is not None:
                grads: dict = {}
                net.backward_head(params, dlogits, grads)
            else:
                grads = net.backward(params, dlogits=dlogits)
            lr = _lr_at(cfg, (epoch - 1) * n_batches + b // cfg.batch_size,
                        cfg.finetune_epochs * n_batches)
            adamw_step(params, grads, state, lr, weight_decay=cfg.weight_decay, only=only)
            losses.append(loss)
        history.append((epoch, float(np.mean(losses))))
        probe_hist.append(_focal_eval(net, params, probe, cfg))
        if on_epoch is not None:
            on_epoch(epoch, params)
    return TrainResult(params, history, probe_hist)


def train_baseline(train: Sequence[Sample], cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Focal-loss training from a random initialization, no contrastive stage."""
    expected = {Mode.END_TO_END: Setting.OBSERVED,
                Mode.END_TO_END_FORECAST: Setting.FORECASTED}.get(cfg.mode)
    if expected is None:
        raise ValidationError(f"train_baseline does not handle mode {cfg.mode.value}")
    if any(s.setting is not expected for s in train):
        raise ValidationError(f"mode {cfg.mode.value} trains on {expected.value}-rainfall samples")
    params = LandslideNet(cfg.encoder).init_params(cfg.seed, with_head=True)
    return finetune(train, params, cfg, on_epoch)


def train_rmcl(train: Sequence[Sample], cfg: TrainConfig) -> tuple[TrainResult, TrainResult]:
    pre = pretrain_rmcl(train, cfg)
    return pre, finetune(train, pre.params, cfg)


def predict_scores(params: ModelParams, samples: Sequence[Sample], batch: int = 256) -> np.ndarray:
    net = LandslideNet(params.config)
    out = []
    for i in range(0, len(samples), batch):
        rain, terrain, _ = stack_batch(samples[i:i + batch])
        z = net.encode(params, rain, terrain, normalize=True)
        out.append(net.predict(params, z))
    return np.concatenate(out) if out else np.zeros(0)


def with_mode(cfg: TrainConfig, mode: Mode) -> TrainConfig:
    return replace(cfg, mode=mode)
