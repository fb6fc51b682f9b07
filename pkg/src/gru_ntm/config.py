"""Run configuration: flat ``key = value`` files merged with command-line flags.

Precedence, lowest first: built-in defaults, ``GNTM_SEED`` (seed only), the
config file, explicit command-line flags. Unknown keys are rejected.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .model import ModelConfig
from .ntm import NtmConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # synth
    per_class: int = 2000
    features: int = 12
    # data pipeline
    data: str = ""
    schema: str = ""
    window: int = 10
    stride: int = 1
    chunk_size: int = 80_000
    test_fraction: float = 0.2
    pure_windows: bool = False
    # training
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 20
    patience: int = 4
    val_fraction: float = 0.2
    reduce_fraction: float = 0.2
    min_delta: float = 1e-6
    record_time: bool = False
    # architecture
    gru1_units: int = 64
    gru2_units: int = 32
    memory_rows: int = 32
    memory_width: int = 20
    controller_units: int = 32
    dense_units: int = 16
    additive_write: bool = False
    learned_memory: bool = True
    # io
    out: str = ""
    checkpoint: str = ""
    input: str = "-"
    min_confidence: float = 0.0
    # gradcheck
    tolerance: float = 1e-4
    coords: int = 240

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon,
                           batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, val_fraction=self.val_fraction,
                           reduce_fraction=self.reduce_fraction, seed=self.seed,
                           min_delta=self.min_delta, record_time=self.record_time)

    def model_config(self, input_features: int) -> ModelConfig:
        ntm = NtmConfig(self.memory_rows, self.memory_width, self.controller_units,
                        self.additive_write, self.learned_memory)
        return ModelConfig(input_features, self.window, self.gru1_units, self.gru2_units, ntm,
                           self.dense_units)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


KEYS = {f.name: f for f in fields(RunConfig)}


def _format(v) -> str:
    return ("true" if v else "false") if isinstance(v, bool) else str(v)


def _convert(key: str, value):
    kind = KEYS[key].type
    if not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return value.strip()


def parse_config_text(text: str, source: str = "config") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def resolve(config_path: str | None = None, overrides: dict | None = None,
            env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    values: dict = {}
    if env.get("GNTM_SEED"):
        values["seed"] = _convert("seed", env["GNTM_SEED"])
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        values.update(parse_config_text(path.read_text(), str(path)))
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown option {key!r}")
        if value is not None:
            values[key] = _convert(key, value)
    return replace(RunConfig(), **values)
