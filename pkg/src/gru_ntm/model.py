"""GRU(64) -> GRU(32) -> NTM -> Dense(16, ReLU) -> Dense(3, softmax).

Both GRU layers return full sequences; the NTM consumes the second layer's
sequence and hands only its final ``[h, r]`` output to the dense head.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    DenseParams,
    GruParams,
    dense_backward,
    dense_forward,
    gru_sequence,
    gru_sequence_backward,
    softmax,
)
from .ntm import NtmConfig, NtmParams, ntm_sequence, ntm_sequence_backward
from .tensor import Rng, ShapeError, Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_features: int
    window: int = 10
    gru1_units: int = 64
    gru2_units: int = 32
    ntm: NtmConfig = field(default_factory=NtmConfig)
    dense_units: int = 16
    classes: int = 3

    def __post_init__(self):
        counts = (self.input_features, self.window, self.gru1_units, self.gru2_units,
                  self.dense_units, self.classes)
        if min(counts) < 1:
            raise ValueError("all ModelConfig counts must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["ntm"] = NtmConfig(**d.get("ntm", {}))
        return cls(**d)


@dataclass
class ModelParams:
    config: ModelConfig
    gru1: GruParams
    gru2: GruParams
    ntm: NtmParams
    dense1: DenseParams
    out: DenseParams

    @classmethod
    def init(cls, config: ModelConfig, rng: Rng) -> "ModelParams":
        return cls(
            config=config,
            gru1=GruParams.init(config.gru1_units, config.input_features, rng),
            gru2=GruParams.init(config.gru2_units, config.gru1_units, rng),
            ntm=NtmParams.init(config.ntm, config.gru2_units, rng),
            dense1=DenseParams.init(config.dense_units,
                                    config.ntm.controller_units + config.ntm.memory_width, rng),
            out=DenseParams.init(config.classes, config.dense_units, rng),
        )

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for part in ("gru1", "gru2", "ntm", "dense1", "out"):
            out.update(getattr(self, part).named_tensors(part + "."))
        return out

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.config, self.gru1.zeros_like(), self.gru2.zeros_like(),
                           self.ntm.zeros_like(), self.dense1.zeros_like(), self.out.zeros_like())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.gru1.copy(), self.gru2.copy(),
                           self.ntm.copy(), self.dense1.copy(), self.out.copy())

    @classmethod
    def from_named(cls, config: ModelConfig, tensors: dict[str, Tensor]) -> "ModelParams":
        """Build params for ``config`` from a name -> array mapping, checking every shape."""
        params = cls.init(config, Rng(0)).zeros_like()
        expected = params.named_tensors()
        missing = sorted(set(expected) - set(tensors))
        if missing:
            raise ShapeError(f"missing tensors: {', '.join(missing)}")
        extra = sorted(set(tensors) - set(expected))
        if extra:
            raise ShapeError(f"unexpected tensors: {', '.join(extra)}")
        for name, dst in expected.items():
            src = np.asarray(tensors[name], dtype=np.float64)
            if src.shape != dst.shape:
                raise ShapeError(f"tensor {name}: expected shape {dst.shape}, found {src.shape}")
            dst[...] = src
        return params


@dataclass
class ForwardCache:
    gru1: list
    gru2: list
    ntm: object
    dense1: tuple
    out: tuple
    probs: Tensor
    single: bool


def forward(params: ModelParams, window) -> tuple[Tensor, ForwardCache]:
    """Class probabilities for one ``(T, F)`` window or a ``(B, T, F)`` batch."""
    cfg = params.config
    x = np.asarray(window, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.window, cfg.input_features):
        raise ShapeError(
            f"window shape {np.shape(window)} does not match ({cfg.window}, {cfg.input_features})"
        )
    h1, c1 = gru_sequence(params.gru1, x, return_sequences=True)
    h2, c2 = gru_sequence(params.gru2, h1, return_sequences=True)
    mem_out, cn = ntm_sequence(params.ntm, h2, additive_write=cfg.ntm.additive_write)
    d1, cd1 = dense_forward(params.dense1, mem_out, activation="relu")
    logits, cd2 = dense_forward(params.out, d1)
    probs = softmax(logits)
    cache = ForwardCache(c1, c2, cn, cd1, cd2, probs, single)
    return (probs[0] if single else probs), cache


def backward(params: ModelParams, cache: ForwardCache, y, return_input_grad: bool = False):
    """Gradients of the batch-mean cross-entropy against one-hot targets ``y``."""
    y = np.asarray(y, dtype=np.float64)
    if cache.single:
        y = y[None]
    B = cache.probs.shape[0]
    d_logits = (cache.probs - y) / B

    g_out, d_d1 = dense_backward(params.out, cache.out, d_logits)
    g_d1, d_mem_out = dense_backward(params.dense1, cache.dense1, d_d1)
    g_ntm, d_h2 = ntm_sequence_backward(params.ntm, cache.ntm, d_mem_out)
    if not params.config.ntm.learned_memory:
        g_ntm.memory0[...] = 0.0
    g2, d_h1 = gru_sequence_backward(params.gru2, cache.gru2, d_h2, return_sequences=True)
    g1, d_x = gru_sequence_backward(params.gru1, cache.gru1, d_h1, return_sequences=True)

    grads = ModelParams(params.config, g1, g2, g_ntm, g_d1, g_out)
    if return_input_grad:
        return grads, (d_x[0] if cache.single else d_x)
    return grads


def predict(params: ModelParams, window) -> tuple:
    """``(class_index, probs)``; ties go to the lowest class index."""
    probs, _ = forward(params, window)
    return np.argmax(probs, axis=-1), probs


def predict_proba(params: ModelParams, windows, chunk: int = 256) -> Tensor:
    """Probabilities for many windows, evaluated in fixed-size chunks to bound memory."""
    windows = np.asarray(windows, dtype=np.float64)
    parts = [forward(params, windows[i:i + chunk])[0] for i in range(0, len(windows), chunk)]
    if not parts:
        return np.zeros((0, params.config.classes))
    return np.concatenate(parts, axis=0)
