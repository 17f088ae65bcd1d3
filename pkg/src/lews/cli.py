"""Command-line entry point.

Every subcommand writes its outputs plus the resolved ``config.txt`` into the
output directory. Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augment import augment_rain, derive_rng, perturb_terrain
from .config import RunConfig, load_config, save_config
from .evalkit import operating_point, pr_curve
from .geogrid import (FormatError, RainfallSequence, ValidationError, read_rainfall_stack, read_terrain,
                      write_rainfall_stack, write_terrain)
from .motion import estimate_flow
from .neural import load_checkpoint, save_checkpoint
from .nowcast import forecast
from .pipeline import (Mode, Setting, build_dataset_samples, chrono_split, finetune, load_dataset,
                       predict_scores, pretrain_rmcl, run_ablation, save_dataset, synth_generate,
                       train_baseline, write_loss_csv)
from .pipeline.samples import N_FORECAST

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it to our exit code 1 instead
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from resetting flags given before it
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="config file of 'section.key = value' lines")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed, overrides run.seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory, overrides run.out_dir")

    p = _Parser(prog="lews", description="Landslide early-warning pipeline", parents=[common])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--hours", type=int, help="overrides synth.hours")
    s.add_argument("--regions", type=int, help="overrides synth.n_regions")

    s = sub.add_parser("forecast", parents=[common], help="nowcast the next hours of a rainfall stack")
    s.add_argument("stack", help="rainfall stack manifest with at least 3 hours")
    s.add_argument("--horizon", type=int, default=N_FORECAST)

    s = sub.add_parser("augment", parents=[common], help="write displaced views of a rainfall stack")
    s.add_argument("stack", help="rainfall stack manifest")
    s.add_argument("--terrain", help="terrain grid to perturb alongside (elevation noise only)")
    s.add_argument("--views", type=int, default=1)

    for name, text in (("pretrain", "RMCL contrastive pretraining"),
                       ("finetune", "focal-loss finetuning of a pretrained encoder"),
                       ("train-baseline", "end-to-end focal-loss training")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--data", help="dataset directory, overrides run.data_dir")
        if name == "finetune":
            s.add_argument("--encoder", required=True, help="encoder checkpoint from pretrain")
        if name == "train-baseline":
            s.add_argument("--setting", choices=[x.value for x in Setting], default="observed",
                           help="training rainfall: observed (EndToEnd) or forecasted (EndToEndForecast)")

    s = sub.add_parser("evaluate", parents=[common], help="precision at the target recall on both test settings")
    s.add_argument("--data", help="dataset directory, overrides run.data_dir")
    s.add_argument("--model", required=True, help="checkpoint with a risk head")

    s = sub.add_parser("ablate", parents=[common], help="3 modes x 2 test settings robustness ablation")
    s.add_argument("--data", help="dataset directory; generated from the synth section when absent")
    return p


def resolve_config(args) -> RunConfig:
    path = getattr(args, "config", None)
    cfg = load_config(path) if path else RunConfig()
    cfg = cfg.with_overrides(seed=getattr(args, "seed", None), out_dir=getattr(args, "out", None))
    synth = cfg.synth
    if getattr(args, "hours", None) is not None:
        synth = replace(synth, hours=args.hours)
    if getattr(args, "regions", None) is not None:
        synth = replace(synth, n_regions=args.regions)
    run = cfg.run
    if getattr(args, "data", None):
        run = replace(run, data_dir=args.data)
    return replace(cfg, synth=synth, run=run).resolved()


def _split(cfg: RunConfig, setting: Setting):
    """(train, test) samples of the dataset at ``run.data_dir`` for one setting."""
    ds = load_dataset(cfg.run.data_dir)
    return chrono_split(build_dataset_samples(ds, setting, cfg.flow), cfg.run.train_frac)


def write_pgm(path, grid: np.ndarray) -> None:
    """8-bit binary PGM of values in [0, 1]."""
    g = np.clip(np.nan_to_num(np.asarray(grid, dtype=np.float64)), 0.0, 1.0)
    pix = np.round(g * 255).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def risk_grid(samples, scores) -> np.ndarray:
    """Regions x anchor hours; cells without a sample are 0."""
    regions = sorted({s.region_id for s in samples})
    hours = sorted({s.anchor_t for s in samples})
    row = {r: i for i, r in enumerate(regions)}
    col = {t: j for j, t in enumerate(hours)}
    grid = np.zeros((len(regions), len(hours)))
    for s, p in zip(samples, scores):
        grid[row[s.region_id], col[s.anchor_t]] = p
    return grid


# ------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig, args, out: Path, log) -> None:
    ds = synth_generate(cfg.synth)
    save_dataset(ds, out)
    log(f"wrote {len(ds.regions)} regions x {ds.hours} h, {len(ds.events)} events to {out}")


def cmd_forecast(cfg: RunConfig, args, out: Path, log) -> None:
    seq = read_rainfall_stack(args.stack)
    if len(seq) < 3:
        raise ValidationError("forecast needs at least 3 hours of rainfall")
    f0, f1, f2 = seq.fields[-3:]
    motion = estimate_flow(f0, f1, f2, cfg.flow)
    fc = RainfallSequence.from_fields(forecast(f2, motion, args.horizon))
    write_rainfall_stack(fc, out / "forecast.stack")
    np.savetxt(out / "motion_u.txt", motion.u, fmt="%.6f")
    np.savetxt(out / "motion_v.txt", motion.v, fmt="%.6f")
    log(f"forecast hours {fc.t0}..{fc.t0 + len(fc) - 1} written to {out / 'forecast.stack'}")


def cmd_augment(cfg: RunConfig, args, out: Path, log) -> None:
    if args.views < 1:
        raise ValidationError("--views must be >= 1")
    seq = read_rainfall_stack(args.stack)
    terrain = read_terrain(args.terrain) if args.terrain else None
    if terrain is not None and terrain.region != seq.region:
        raise ValidationError("terrain and rainfall belong to different regions")
    for v in range(1, args.views + 1):
        rng = derive_rng(cfg.augment.seed, v)
        rain, path = augment_rain(seq, cfg.augment, rng)
        write_rainfall_stack(rain, out / f"view_{v}.stack")
        (out / f"path_{v}.csv").write_text(path.to_text(), encoding="utf-8")
        if terrain is not None:
            write_terrain(perturb_terrain(terrain, cfg.augment.sigma_terrain_noise, rng), out / f"terrain_{v}.grid")
    log(f"wrote {args.views} augmented views of {args.stack}")


def cmd_pretrain(cfg: RunConfig, args, out: Path, log) -> None:
    train = _split(cfg, Setting.OBSERVED)[0]
    res = pretrain_rmcl(train, replace(cfg.train, mode=Mode.RMCL))
    save_checkpoint(res.params, out / "encoder.ckpt")
    write_loss_csv(res.history, out / "pretrain_loss.csv")
    write_loss_csv(list(enumerate(res.probe)), out / "probe_loss.csv")
    log(f"pretrained on {len(train)} samples, final loss {res.history[-1][1]:.4f}"
        if res.history else "no pretraining epochs")


def cmd_finetune(cfg: RunConfig, args, out: Path, log) -> None:
    train = _split(cfg, Setting.OBSERVED)[0]
    encoder = load_checkpoint(args.encoder)
    res = finetune(train, encoder, replace(cfg.train, mode=Mode.RMCL, encoder=encoder.config))
    save_checkpoint(res.params, out / "model.ckpt")
    write_loss_csv(res.history, out / "finetune_loss.csv")
    log(f"finetuned on {len(train)} samples")


def cmd_train_baseline(cfg: RunConfig, args, out: Path, log) -> None:
    setting = Setting(args.setting)
    mode = Mode.END_TO_END if setting is Setting.OBSERVED else Mode.END_TO_END_FORECAST
    train = _split(cfg, setting)[0]
    res = train_baseline(train, replace(cfg.train, mode=mode))
    save_checkpoint(res.params, out / "model.ckpt")
    write_loss_csv(res.history, out / "train_loss.csv")
    log(f"trained {mode.value} on {len(train)} samples")


def cmd_evaluate(cfg: RunConfig, args, out: Path, log) -> None:
    params = load_checkpoint(args.model)
    if not params.has_head():
        raise ValidationError(f"{args.model} has no risk head")
    tests = {st.value: _split(cfg, st)[1] for st in Setting}
    scores = {k: predict_scores(params, v) for k, v in tests.items()}
    labels = {k: np.array([s.label for s in v]) for k, v in tests.items()}
    lines = ["setting,precision,recall,threshold,tp,fp,fn"]
    for k in tests:
        op = operating_point(pr_curve(scores[k], labels[k]), cfg.run.target_recall)
        lines.append(f"{k},{op.precision:.6f},{op.recall:.6f},{op.threshold:.6f},{op.tp},{op.fp},{op.fn}")
        log(f"{k}: precision {op.precision:.4f} at recall {op.recall:.4f}")
        with open(out / f"scores_{k}.csv", "w", encoding="utf-8") as fh:
            fh.write("region,anchor_t,label,score\n")
            for s, p in zip(tests[k], scores[k]):
                fh.write(f"{s.region_id},{s.anchor_t},{s.label},{float(p):.6f}\n")
        if cfg.run.dump_pgm:
            write_pgm(out / f"risk_{k}.pgm", risk_grid(tests[k], scores[k]))
    (out / "evaluation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_ablate(cfg: RunConfig, args, out: Path, log) -> None:
    if getattr(args, "data", None):
        ds = load_dataset(cfg.run.data_dir)
    else:
        ds = synth_generate(cfg.synth)
        log(f"generated {len(ds.regions)} regions x {ds.hours} h")
    run = run_ablation(ds, cfg.train, cfg.flow, cfg.run.train_frac, log=log,
                       target=cfg.run.target_recall)
    (out / "ablation.csv").write_text(run.report.to_csv(), encoding="utf-8")
    (out / "ablation.txt").write_text(
        f"train samples {run.n_train}, test samples {run.n_test}, "
        f"positive rate {run.positive_rate:.4f}\n\n" + run.report.to_text(), encoding="utf-8")
    save_checkpoint(run.pretrain.params, out / "encoder.ckpt")
    write_loss_csv(run.pretrain.history, out / "loss_pretrain.csv")
    for mode, res in run.results.items():
        save_checkpoint(res.params, out / f"model_{mode}.ckpt")
        write_loss_csv(res.history, out / f"loss_{mode}.csv")
    log(run.report.to_text())


COMMANDS = {"synth": cmd_synth, "forecast": cmd_forecast, "augment": cmd_augment,
            "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "train-baseline": cmd_train_baseline, "evaluate": cmd_evaluate, "ablate": cmd_ablate}


def cli_main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=stderr)
        return EXIT_INVALID
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_INVALID

    def log(msg):
        print(msg, file=stdout)

    try:
        cfg = resolve_config(args)
        out = Path(cfg.run.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out / "config.txt")
        COMMANDS[args.command](cfg, args, out, log)
    except (ValidationError, FormatError, ValueError) as e:
        print(f"error: {e}", file=stderr)
        return EXIT_INVALID if not isinstance(e, FormatError) else EXIT_IO
    except OSError as e:
        print(f"I/O error: {e}", file=stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())
