"""End-to-end ablation: one dataset, three training modes, two test settings."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..evalkit import AblationReport, robustness_ablation
from ..geogrid import ValidationError
from ..motion import FlowConfig
from .samples import Setting, build_dataset_samples, chrono_split
from .training import (Mode, TrainConfig, TrainResult, finetune, predict_scores, pretrain_rmcl,
                       train_baseline)


@dataclass
class AblationRun:
    report: AblationReport
    results: dict[str, TrainResult]
    pretrain: TrainResult
    n_train: int
    n_test: int
    positive_rate: float


def split_settings(dataset, flow_cfg: FlowConfig = FlowConfig(), train_frac: float = 0.7):
    """Train/test splits for both settings, built on the same anchors."""
    obs = build_dataset_samples(dataset, Setting.OBSERVED, flow_cfg)
    fc = build_dataset_samples(dataset, Setting.FORECASTED, flow_cfg)
    keys_o = [(s.region_id, s.anchor_t) for s in obs]
    if keys_o != [(s.region_id, s.anchor_t) for s in fc]:
        raise ValidationError("observed and forecasted samples do not share anchors")
    return {Setting.OBSERVED: chrono_split(obs, train_frac),
            Setting.FORECASTED: chrono_split(fc, train_frac)}


def run_ablation(dataset, cfg: TrainConfig = TrainConfig(), flow_cfg: FlowConfig = FlowConfig(),
                 train_frac: float = 0.7, splits=None, log=None, target: float = 0.8) -> AblationRun:
    """Train RMCL, EndToEnd and EndToEndForecast, score each on both test sets."""
    splits = split_settings(dataset, flow_cfg, train_frac) if splits is None else splits
    obs_train, obs_test = splits[Setting.OBSERVED]
    fc_train, fc_test = splits[Setting.FORECASTED]
    say = log or (lambda msg: None)

    say(f"pretraining RMCL on {len(obs_train)} samples")
    pre = pretrain_rmcl(obs_train, replace(cfg, mode=Mode.RMCL))
    results = {Mode.RMCL.value: finetune(obs_train, pre.params, replace(cfg, mode=Mode.RMCL))}
    say("training EndToEnd")
    results[Mode.END_TO_END.value] = train_baseline(obs_train, replace(cfg, mode=Mode.END_TO_END))
    say("training EndToEndForecast")
    results[Mode.END_TO_END_FORECAST.value] = train_baseline(
        fc_train, replace(cfg, mode=Mode.END_TO_END_FORECAST))

    tests = {Setting.OBSERVED.value: obs_test, Setting.FORECASTED.value: fc_test}
    labels = {k: np.array([s.label for s in v]) for k, v in tests.items()}
    scores = {mode: {k: predict_scores(r.params, v) for k, v in tests.items()}
              for mode, r in results.items()}
    all_labels = np.array([s.label for s in obs_train + obs_test])
    return AblationRun(robustness_ablation(scores, labels, target), results, pre,
                       len(obs_train), len(obs_test), float(all_labels.mean()))
