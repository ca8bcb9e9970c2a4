"""Run configuration: an INI file with fixed sections.

Example::

    [run]
    seed = 0
    bits = 32
    out = runs/demo

    [model]
    stage_channels = 8, 16, 32, 32, 32
    convs_per_stage = 2
    dilation_rates = 1, 2, 4
    head_channels = 16
    cascade = true

    [pigm]
    mode = sc_cc          ; off | sc | cc | sc_cc

    [uafm]
    case = 4              ; 1 | 2 | 3 | 4

    [ura]
    formula = prose       ; prose | floor

    [optim]
    lr = 0.005
    weight_decay = 0.0001
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8
    steps = 400
    batch_size = 8
    augment = true        ; random flips

    [data]
    train_scenes = 64
    val_scenes = 32
    extent = 64
    ...
"""

from __future__ import annotations

import configparser
import dataclasses
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import EncoderConfig
from .data import SceneSpec
from .model import ModelConfig
from .pigm import PigmMode
from .uafm import FusionCase, UraFormula


class ConfigError(ValueError):
    """Bad key or value in a run configuration; names the offending key."""


@dataclass
class OptimConfig:
    lr: float = 5e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 400
    batch_size: int = 8
    # random horizontal/vertical flips of each training sample
    augment: bool = True


@dataclass
class DataConfig:
    train_scenes: int = 64
    val_scenes: int = 32
    extent: int = 64
    building_min: int = 2
    building_max: int = 6
    size_min: float = 6.0
    size_max: float = 18.0
    rotation: bool = True
    noise: float = 0.04
    shadow_prob: float = 0.5
    distractor_prob: float = 0.5

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(
            extent=self.extent,
            building_count=(self.building_min, self.building_max),
            size_range=(self.size_min, self.size_max),
            rotation=self.rotation,
            noise=self.noise,
            shadow_prob=self.shadow_prob,
            distractor_prob=self.distractor_prob,
        )


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    bits: int = 32
    out: str = "runs/default"

    def sub_seed(self, name: str) -> int:
        """Independent seed for a named consumer (data, init, augment, ...)."""
        ss = np.random.SeedSequence([self.seed, zlib.crc32(name.encode())])
        return int(ss.generate_state(1)[0])

    def validate(self) -> "RunConfig":
        try:
            self.model.validate()
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None
        if self.bits not in (32, 64):
            raise ConfigError(f"run.bits: expected 32 or 64, got {self.bits}")
        if self.optim.steps < 1:
            raise ConfigError("optim.steps must be >= 1")
        if self.optim.batch_size < 1:
            raise ConfigError("optim.batch_size must be >= 1")
        if self.optim.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        try:
            self.data.scene_spec().validate()
        except ValueError as exc:
            raise ConfigError(f"data: {exc}") from None
        return self

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"uafm.case": "1"})``."""
        text = to_ini(self)
        cfg = from_ini(text)
        for key, value in changes.items():
            set_key(cfg, key, value)
        return cfg


def _ints(text: str) -> list:
    return [int(v) for v in str(text).replace(",", " ").split()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section.key -> (attribute path, attribute, parser)
_KEYS = {
    "run.seed": (("",), "seed", int),
    "run.bits": (("",), "bits", int),
    "run.out": (("",), "out", str),
    "model.stage_channels": (("model", "encoder"), "stage_channels", _ints),
    "model.convs_per_stage": (("model", "encoder"), "convs_per_stage", int),
    "model.dilation_rates": (("model", "encoder"), "dilation_rates", _ints),
    "model.head_channels": (("model", "encoder"), "head_channels", int),
    "model.cascade": (("model",), "cascade", _bool),
    "pigm.mode": (("model",), "pigm_mode", PigmMode),
    "uafm.case": (("model",), "uafm_case", lambda v: FusionCase(str(v))),
    "ura.formula": (("model",), "ura_formula", UraFormula),
}
_FIELD_TYPES = {"int": int, "float": float, "bool": _bool}
for _section, _cls in (("optim", OptimConfig), ("data", DataConfig)):
    for _f in dataclasses.fields(_cls):
        _KEYS[f"{_section}.{_f.name}"] = ((_section,), _f.name, _FIELD_TYPES[_f.type])


def _target(cfg: RunConfig, path: tuple):
    obj = cfg
    for attr in path:
        if attr:
            obj = getattr(obj, attr)
    return obj


def set_key(cfg: RunConfig, key: str, value) -> None:
    if key not in _KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    path, attr, parse = _KEYS[key]
    try:
        parsed = parse(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: {exc}") from None
    setattr(_target(cfg, path), attr, parsed)


def get_key(cfg: RunConfig, key: str):
    path, attr, _ = _KEYS[key]
    return getattr(_target(cfg, path), attr)


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "value"):
        return str(value.value)
    return repr(value) if isinstance(value, float) else str(value)


def to_ini(cfg: RunConfig) -> str:
    sections: dict = {}
    for key in _KEYS:
        section, name = key.split(".", 1)
        sections.setdefault(section, []).append(f"{name} = {_format(get_key(cfg, key))}")
    return "\n\n".join(f"[{s}]\n" + "\n".join(lines) for s, lines in sections.items()) + "\n"


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    cfg = base if base is not None else RunConfig(model=ModelConfig(encoder=EncoderConfig()))
    for section in parser.sections():
        for name, value in parser.items(section):
            set_key(cfg, f"{section}.{name}", value)
    return cfg


def load_config(path) -> RunConfig:
    return from_ini(Path(path).read_text()).validate()


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(to_ini(cfg))
