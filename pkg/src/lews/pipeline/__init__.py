from .experiment import AblationRun, run_ablation, split_settings
from .samples import (Sample, Setting, build_dataset_samples, build_samples, chrono_split,
                      label_for, rainy_anchors, stack_batch)
from .synth import (SynthConfig, SynthDataset, antecedent_index, load_dataset, save_dataset,
                    synth_generate, trigger_events)
from .training import (Mode, TrainConfig, TrainResult, finetune, predict_scores, pretrain_rmcl,
                       train_baseline, train_rmcl, write_loss_csv)

__all__ = ["AblationRun", "run_ablation", "split_settings",
           "Sample", "Setting", "build_dataset_samples", "build_samples", "chrono_split",
           "label_for", "rainy_anchors", "stack_batch",
           "SynthConfig", "SynthDataset", "antecedent_index", "load_dataset", "save_dataset",
           "synth_generate", "trigger_events",
           "Mode", "TrainConfig", "TrainResult", "finetune", "predict_scores", "pretrain_rmcl",
           "train_baseline", "train_rmcl", "write_loss_csv"]
