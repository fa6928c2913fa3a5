"""Flat ``key = value`` run configuration with per-field validation."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path


def _f(default, help: str):
    return field(default=default, metadata={"help": help})


@dataclass
class RunConfig:
    # model
    width_factor: float = _f(1.0, "channel multiplier in (0, 1]; 1.0 gives the full-size network")
    sequence_length: int = _f(20, "frames per clip fed to the ConvLSTMs")
    hidden_channels: int = _f(256, "ConvLSTM hidden channels (before width scaling)")
    fc1_width: int = _f(1000, "width of the first fully connected layer")
    num_classes: int = _f(2, "number of classes (fixed at 2)")
    crop_size: int = _f(224, "square crop fed to both backbones")
    # optimizer
    lr: float = _f(1e-4, "RMSprop learning rate")
    alpha: float = _f(0.99, "RMSprop smoothing constant")
    eps: float = _f(1e-8, "RMSprop denominator epsilon")
    weight_decay: float = _f(0.05, "coupled L2 weight decay")
    # schedule
    batch_size: int = _f(8, "clips per optimizer step")
    epochs: int = _f(40, "training epochs")
    validation_period: int = _f(5, "validate every N epochs (and after the last one)")
    # data
    threshold: str = _f("auto", "keyframe threshold T in bytes, or 'auto' for 1% of the frame byte count")
    train_ratio: float = _f(0.6, "fraction of each class used for training")
    val_ratio: float = _f(0.2, "fraction of each class used for validation")
    test_ratio: float = _f(0.2, "fraction of each class used for testing")
    manifest: str = _f("", "manifest file (clip_dir<TAB>label[<TAB>split])")
    checkpoint: str = _f("", "checkpoint file for eval/predict")
    out: str = _f("run", "output directory")
    seed: int = _f(0, "master seed; every random draw derives from it")

    def problems(self) -> list[str]:
        errs = []
        if not 0 < self.width_factor <= 1:
            errs.append(f"width_factor: must be in (0, 1], got {self.width_factor}")
        for name in ("sequence_length", "hidden_channels", "fc1_width", "batch_size", "epochs",
                     "validation_period"):
            if getattr(self, name) < 1:
                errs.append(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.num_classes != 2:
            errs.append(f"num_classes: fixed at 2, got {self.num_classes}")
        if self.crop_size < 11:
            errs.append(f"crop_size: must be >= 11, got {self.crop_size}")
        else:
            from .model import spatial_chain
            try:
                spatial_chain(self.crop_size)
            except ValueError as e:
                errs.append(f"crop_size: {e}")
        if self.lr < 0:
            errs.append(f"lr: must be >= 0, got {self.lr}")
        if not 0 <= self.alpha < 1:
            errs.append(f"alpha: must be in [0, 1), got {self.alpha}")
        if self.eps <= 0:
            errs.append(f"eps: must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            errs.append(f"weight_decay: must be >= 0, got {self.weight_decay}")
        if self.threshold != "auto":
            try:
                if int(self.threshold) < 0:
                    raise ValueError
            except ValueError:
                errs.append(f"threshold: must be 'auto' or a nonnegative integer, got {self.threshold!r}")
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if min(ratios) < 0 or abs(sum(ratios) - 1) > 1e-9:
            errs.append(f"train_ratio/val_ratio/test_ratio: must be nonnegative and sum to 1, got {ratios}")
        return errs

    @property
    def threshold_value(self) -> int | None:
        return None if self.threshold == "auto" else int(self.threshold)

    @property
    def ratios(self) -> tuple[float, float, float]:
        return self.train_ratio, self.val_ratio, self.test_ratio

    def model_config(self):
        from .model import ModelConfig
        return ModelConfig(self.width_factor, self.sequence_length, self.hidden_channels,
                           self.fc1_width, self.num_classes, self.crop_size)

    def pipeline_config(self):
        from .video import PipelineConfig
        return PipelineConfig(self.sequence_length, self.crop_size, self.threshold_value)

    def optimizer_hyper(self) -> dict:
        return {"lr": self.lr, "alpha": self.alpha, "eps": self.eps, "weight_decay": self.weight_decay}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


FIELDS = {f.name: f for f in fields(RunConfig)}


def field_help() -> list[tuple[str, object, str]]:
    return [(f.name, f.default, f.metadata["help"]) for f in fields(RunConfig)]


def _coerce(name: str, raw: str):
    kind = FIELDS[name].type
    text = raw.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def parse_pairs(pairs, source: str) -> tuple[dict, list[str]]:
    """``[(lineno, key, value)]`` -> typed values plus one problem string per bad entry."""
    values, errs = {}, []
    for where, key, raw in pairs:
        key = key.strip()
        if key not in FIELDS:
            errs.append(f"{source}{where}: unknown key {key!r}")
            continue
        try:
            values[key] = _coerce(key, raw)
        except ValueError:
            errs.append(f"{key}: cannot parse {raw.strip()!r} as {FIELDS[key].type} ({source}{where})")
    return values, errs


def read_config_file(path) -> tuple[dict, list[str]]:
    pairs, errs = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            errs.append(f"{path}:{lineno}: expected key=value, got {line.strip()!r}")
            continue
        key, value = text.split("=", 1)
        pairs.append((lineno, key, value))
    values, more = parse_pairs(pairs, f"{path}:")
    return values, errs + more


def build_config(path=None, overrides=(), base: dict | None = None, **explicit) -> RunConfig:
    """Layered: ``base``, config file, ``key=value`` overrides, explicit keywords (later wins).

    Every problem across all layers is collected and raised together.
    """
    values, errs = {}, []
    if base:
        v, e = parse_pairs([("", k, str(val)) for k, val in base.items()], "stored config")
        values.update(v)
        errs += e
    if path:
        try:
            v, e = read_config_file(path)
        except OSError as ex:
            raise ConfigError([f"cannot read config file {path}: {ex}"]) from None
        values.update(v)
        errs += e
    pairs = []
    for k, item in enumerate(overrides, start=1):
        if "=" not in item:
            errs.append(f"--set #{k}: expected key=value, got {item!r}")
            continue
        key, value = item.split("=", 1)
        pairs.append((k, key, value))
    v, e = parse_pairs(pairs, "--set #")
    values.update(v)
    errs += e
    values.update({k: v for k, v in explicit.items() if v is not None})
    cfg = RunConfig(**values)
    errs += cfg.problems()
    if errs:
        raise ConfigError(errs)
    return cfg
