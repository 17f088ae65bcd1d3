"""A small version of the robustness ablation, a couple of minutes on one CPU.

Three training modes (RMCL, EndToEnd, EndToEndForecast) are each scored on
test inputs built from observed rain and from nowcast rain. The full-size run
lives in tests/test_acceptance.py.

Run: python3 demos/04_small_ablation.py
"""
from lews.neural import EncoderConfig
from lews.pipeline import SynthConfig, TrainConfig, run_ablation, synth_generate

ds = synth_generate(SynthConfig(n_regions=6, hours=600, wet_start_prob=0.006, seed=0))
print(len(ds.regions), "regions,", len(ds.events), "trigger events")

small = EncoderConfig(terrain_channels=(30, 8, 8), rain_channels=(1, 4, 8), token_dim=16,
                      n_layers=1, ff_dim=32, head_hidden=16)
cfg = TrainConfig(pretrain_epochs=4, finetune_epochs=4, encoder=small, seed=0)
run = run_ablation(ds, cfg, log=print)
print(f"{run.n_train} train / {run.n_test} test samples, positive rate {run.positive_rate:.3f}")
print(run.report.to_text())
