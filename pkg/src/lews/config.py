"""Run configuration: every tunable of a run in one auditable text file.

The file format is one ``section.key = value`` per line; ``#`` starts a comment.
Sections are ``run``, ``synth``, ``flow``, ``augment``, ``train`` and ``encoder``.
Keys that are absent keep their defaults, unknown keys are an error.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .geogrid import ValidationError
from .motion import FlowConfig
from .neural import EncoderConfig
from .pipeline import SynthConfig, TrainConfig


@dataclass(frozen=True)
class RunSettings:
    data_dir: str = "data"
    out_dir: str = "out"
    seed: int = 0
    train_frac: float = 0.7
    target_recall: float = 0.8
    # write per-sample risk grids as PGM images next to evaluation outputs
    dump_pgm: bool = False


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    synth: SynthConfig = field(default_factory=SynthConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def resolved(self) -> "RunConfig":
        """Push the master seed into every module and the shared sub-configs into ``train``."""
        seed = self.run.seed
        augment = replace(self.augment, seed=seed)
        return replace(self, synth=replace(self.synth, seed=seed), augment=augment,
                       train=replace(self.train, seed=seed, augment=augment, encoder=self.encoder))

    def with_overrides(self, seed=None, out_dir=None) -> "RunConfig":
        run = self.run
        if seed is not None:
            run = replace(run, seed=int(seed))
        if out_dir is not None:
            run = replace(run, out_dir=str(out_dir))
        return replace(self, run=run)


SECTIONS = tuple(f.name for f in fields(RunConfig))
# TrainConfig fields filled from their own sections, or chosen by the subcommand (mode)
_NESTED = {"augment", "encoder", "mode"}


def _format(v) -> str:
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, enum.Enum):
            return type(default)(raw)
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(float(x)) if kind is int else kind(x) for x in items)
        if isinstance(default, int):
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ValidationError(f"bad value {raw!r} for {key}") from None


def _section_items(cfg: RunConfig, section: str):
    obj = getattr(cfg, section)
    for f in fields(obj):
        # module seeds all derive from run.seed
        if (section == "train" and f.name in _NESTED) or (section != "run" and f.name == "seed"):
            continue
        yield f.name, getattr(obj, f.name)


def format_config(cfg: RunConfig) -> str:
    """All settings except ``run.out_dir``: a saved config sits in its output
    directory, and leaving the path out keeps runs in different directories
    byte-identical."""
    lines = []
    for section in SECTIONS:
        lines.append(f"# {section}")
        lines += [f"{section}.{k} = {_format(v)}" for k, v in _section_items(cfg, section)
                  if (section, k) != ("run", "out_dir")]
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    updates: dict[str, dict] = {s: {} for s in SECTIONS}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {n}: expected 'section.key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in updates:
            raise ValidationError(f"line {n}: unknown section {section!r}")
        defaults = dict(_section_items(cfg, section))
        if name not in defaults:
            raise ValidationError(f"line {n}: unknown key {key!r}")
        updates[section][name] = _convert(raw, defaults[name], key)
    try:
        parts = {s: replace(getattr(cfg, s), **updates[s]) for s in SECTIONS}
    except (TypeError, ValueError) as e:
        raise ValidationError(str(e)) from None
    return RunConfig(**parts)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")
