import numpy as np
import pytest

from lews.cli import cli_main
from lews.config import RunConfig, format_config, load_config, parse_config
from lews.geogrid import RainfallSequence, Region, ValidationError, read_rainfall_stack, write_rainfall_stack

# small enough for a test run, wet enough to give positives in both splits
TINY_CONFIG = """
synth.n_regions = 3
synth.hours = 300
synth.wet_start_prob = 0.03
synth.trigger_threshold = 40
train.pretrain_epochs = 1
train.finetune_epochs = 1
train.probe_size = 16
encoder.terrain_channels = 30,4,4
encoder.rain_channels = 1,4,4
encoder.token_dim = 8
encoder.n_layers = 1
encoder.ff_dim = 16
encoder.head_hidden = 8
"""


def run(*argv):
    return cli_main([str(a) for a in argv])


def dir_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.txt"
    cfg.write_text(TINY_CONFIG)
    assert run("synth", "--config", cfg, "--seed", 1, "--out", root / "data") == 0
    return root, cfg


def test_synth_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--seed", 7, "--out", tmp_path / name, "--hours", 120, "--regions", 2) == 0
    assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")
    assert (tmp_path / "a" / "config.txt").exists()


def test_seed_before_or_after_subcommand(tmp_path):
    run("--seed", 4, "synth", "--out", tmp_path / "a", "--hours", 60, "--regions", 1)
    run("synth", "--seed", 4, "--out", tmp_path / "b", "--hours", 60, "--regions", 1)
    assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")
    assert load_config(tmp_path / "a" / "config.txt").run.seed == 4


def test_zero_motion_forecast_repeats_last_frame(tmp_path):
    region = Region("Z", 12, 12)
    frame = np.random.default_rng(0).gamma(1.0, 2.0, (12, 12))
    write_rainfall_stack(RainfallSequence(region, 10, np.stack([frame] * 3)), tmp_path / "in.stack")
    assert run("forecast", tmp_path / "in.stack", "--out", tmp_path / "o") == 0
    fc = read_rainfall_stack(tmp_path / "o" / "forecast.stack")
    assert fc.t0 == 13 and len(fc) == 8
    assert np.array_equal(fc.values, np.stack([frame.astype(np.float32)] * 8))


def test_forecast_does_not_touch_input(tmp_path):
    region = Region("Z")
    vals = np.random.default_rng(1).gamma(1.0, 2.0, (4, 10, 10))
    write_rainfall_stack(RainfallSequence(region, 0, vals), tmp_path / "in.stack")
    before = dir_bytes(tmp_path)
    assert run("forecast", tmp_path / "in.stack", "--out", tmp_path / "o") == 0
    assert dir_bytes(tmp_path) == before


def test_ablate_report_has_six_rows(tiny, tmp_path):
    root, cfg = tiny
    assert run("ablate", "--config", cfg, "--seed", 1, "--data", root / "data", "--out", tmp_path / "a") == 0
    rows = (tmp_path / "a" / "ablation.csv").read_text().strip().splitlines()
    assert len(rows) == 7
    cells = {tuple(r.split(",")[:2]) for r in rows[1:]}
    assert cells == {(m, s) for m in ("rmcl", "end-to-end", "end-to-end-forecast")
                     for s in ("observed", "forecasted")}
    assert run("ablate", "--config", cfg, "--seed", 1, "--data", root / "data", "--out", tmp_path / "b") == 0
    assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")


def test_stagewise_commands(tiny, tmp_path):
    root, cfg = tiny
    common = ("--config", cfg, "--seed", 2, "--data", root / "data")
    data_before = dir_bytes(root / "data")
    assert run("pretrain", *common, "--out", tmp_path / "pre") == 0
    assert run("pretrain", *common, "--out", tmp_path / "pre2") == 0
    assert dir_bytes(tmp_path / "pre") == dir_bytes(tmp_path / "pre2")
    enc = tmp_path / "pre" / "encoder.ckpt"
    assert run("finetune", *common, "--encoder", enc, "--out", tmp_path / "ft") == 0
    assert run("finetune", *common, "--encoder", enc, "--out", tmp_path / "ft2") == 0
    assert dir_bytes(tmp_path / "ft") == dir_bytes(tmp_path / "ft2")
    assert run("train-baseline", *common, "--setting", "forecasted", "--out", tmp_path / "bl") == 0
    assert (tmp_path / "bl" / "train_loss.csv").exists()
    assert run("evaluate", *common, "--model", tmp_path / "ft" / "model.ckpt",
               "--out", tmp_path / "ev") == 0
    lines = (tmp_path / "ev" / "evaluation.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in lines[1:]] == ["observed", "forecasted"]
    # an encoder without a head cannot be evaluated
    assert run("evaluate", *common, "--model", enc, "--out", tmp_path / "ev2") == 1
    assert dir_bytes(root / "data") == data_before


def test_augment_writes_views_and_paths(tiny, tmp_path):
    root, cfg = tiny
    stack = root / "data" / "rain_R00.stack"
    args = ("augment", stack, "--terrain", root / "data" / "terrain_R00.grid", "--views", 2, "--config", cfg)
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")
    src = read_rainfall_stack(stack)
    view = read_rainfall_stack(tmp_path / "a" / "view_1.stack")
    assert view.values.shape == src.values.shape and not np.array_equal(view.values, src.values)
    lines = (tmp_path / "a" / "path_1.csv").read_text().splitlines()
    assert lines[0] == "t,dx,dy,eps_x,eps_y" and len(lines) == len(src) + 1
    assert (tmp_path / "a" / "terrain_2.grid").exists()


def test_exit_codes(tmp_path, capsys):
    assert run("frobnicate") == 1
    assert "usage" in capsys.readouterr().err
    assert run("synth", "--no-such-flag") == 1
    assert run() == 1
    assert run("pretrain", "--data", tmp_path / "missing", "--out", tmp_path / "o") == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("train.lr = -1\n")
    assert run("synth", "--config", bad, "--out", tmp_path / "o") == 1
    bad.write_text("nosuch.key = 1\n")
    assert run("synth", "--config", bad, "--out", tmp_path / "o") == 1
    assert run("forecast", tmp_path / "nothing.stack", "--out", tmp_path / "o") == 2


def test_config_round_trip():
    cfg = parse_config("run.seed = 9\nsynth.cell_speed = 0.1, 0.4\ntrain.lr_schedule = constant\n")
    assert cfg.run.seed == 9 and cfg.synth.cell_speed == (0.1, 0.4)
    assert parse_config(format_config(cfg)) == cfg
    assert format_config(RunConfig()) == format_config(parse_config(format_config(RunConfig())))
    with pytest.raises(ValidationError):
        parse_config("run.seed = 1.5")
    with pytest.raises(ValidationError):
        parse_config("just text")


def test_resolved_seed_reaches_modules():
    cfg = RunConfig().with_overrides(seed=11).resolved()
    assert cfg.synth.seed == cfg.train.seed == cfg.augment.seed == cfg.train.augment.seed == 11
