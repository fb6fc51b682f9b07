"""Cross-entropy, Adam, early stopping, the epoch loop and checkpoint files."""
from __future__ import annotations

import csv
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import NormStats, WindowSet
from .model import ModelConfig, ModelParams, backward, forward
from .storage import FormatError, Reader, Writer
from .tensor import NonFiniteError, Rng, Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
INIT_STREAM = 5
SHUFFLE_STREAM = 6


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 20
    patience: int = 4
    val_fraction: float = 0.2
    reduce_fraction: float = 0.2
    seed: int = 0
    min_delta: float = 1e-6
    record_time: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")


def cross_entropy(probs, y):
    """``-sum(y * log(p))`` with probabilities floored at 1e-12.

    A single vector gives a float; a batch gives one loss per row.
    """
    p = np.maximum(np.asarray(probs, dtype=np.float64), PROB_FLOOR)
    y = np.asarray(y, dtype=np.float64)
    loss = -np.sum(y * np.log(p), axis=-1)
    return float(loss) if loss.ndim == 0 else loss


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, Tensor]
    v: dict[str, Tensor]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams | dict) -> "AdamState":
        named = params if isinstance(params, dict) else params.named_tensors()
        return cls({k: np.zeros_like(a) for k, a in named.items()},
                   {k: np.zeros_like(a) for k, a in named.items()})


def adam_step(state: AdamState, params, grads, cfg: TrainConfig):
    """One in-place Adam update of every named tensor. Returns ``(params, state)``."""
    named = params if isinstance(params, dict) else params.named_tensors()
    gnamed = grads if isinstance(grads, dict) else grads.named_tensors()
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for k, theta in named.items():
        g = gnamed[k]
        m, v = state.m[k], state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        theta -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
    return params, state


# -- early stopping ----------------------------------------------------------

class EarlyStopping:
    """Tracks the best validation loss and a copy of the weights that produced it.

    An epoch counts as an improvement only if it beats the best loss by more
    than ``min_delta``; ``patience`` non-improving epochs in a row stop training.
    """

    def __init__(self, patience: int = 4, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = float("inf")
        self.best_epoch = 0
        self.best_params = None
        self.wait = 0

    def update(self, epoch: int, val_loss: float, params=None) -> bool:
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_params = params.copy() if params is not None else None
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.wait == 0


# -- logs --------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    seconds: float | None = None


LOG_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds")


def write_epoch_log(logs: Sequence[EpochLog], path) -> None:
    """CSV with one row per epoch. ``seconds`` is blank unless timing was recorded,
    so untimed runs produce byte-identical files."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in logs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.val_loss),
                        repr(e.val_acc), "" if e.seconds is None else f"{e.seconds:.3f}"])


def read_epoch_log(path) -> list[EpochLog]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochLog(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                     float(r["val_loss"]), float(r["val_acc"]),
                     float(r["seconds"]) if r["seconds"] else None) for r in rows]


# -- checkpoints -------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    norm: NormStats | None = None
    metadata: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    w = Writer(b"CKPT")
    w.blob(json.dumps(ckpt.config.to_dict(), sort_keys=True).encode())
    w.blob(json.dumps(ckpt.metadata, sort_keys=True).encode())
    tensors = ckpt.params.named_tensors()
    w.pack("I", len(tensors))
    for name, arr in tensors.items():
        payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        w.blob(name.encode())
        w.pack("B", arr.ndim)
        w.pack(f"{arr.ndim}I", *arr.shape)
        w.raw(payload)
        w.pack("I", zlib.crc32(payload))
    if ckpt.norm is None:
        w.blob(b"")
        w.pack("I", 0)
    else:
        meta = {"feature_names": list(ckpt.norm.feature_names),
                "categorical_mode": ckpt.norm.categorical_mode}
        w.blob(json.dumps(meta, sort_keys=True).encode())
        w.pack("I", len(ckpt.norm.min))
        w.raw(np.asarray(ckpt.norm.min, dtype="<f8").tobytes())
        w.raw(np.asarray(ckpt.norm.max, dtype="<f8").tobytes())
    w.save(path)


def load_checkpoint(path, config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint. Passing ``config`` loads the tensors onto that
    configuration instead of the stored one (shape mismatches name the tensor)."""
    r = Reader(path, b"CKPT")
    stored = ModelConfig.from_dict(json.loads(r.blob()))
    metadata = json.loads(r.blob())
    (count,) = r.unpack("I")
    tensors = {}
    for _ in range(count):
        name = r.blob().decode()
        (ndim,) = r.unpack("B")
        shape = r.unpack(f"{ndim}I")
        payload = r.take(8 * int(np.prod(shape, dtype=np.int64)))
        (crc,) = r.unpack("I")
        if zlib.crc32(payload) != crc:
            raise FormatError(f"{path}: checksum mismatch in tensor {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    norm_meta = r.blob()
    (F,) = r.unpack("I")
    norm = None
    if norm_meta:
        meta = json.loads(norm_meta)
        lo = np.frombuffer(r.take(8 * F), dtype="<f8").astype(np.float64)
        hi = np.frombuffer(r.take(8 * F), dtype="<f8").astype(np.float64)
        norm = NormStats(lo, hi, tuple(meta["feature_names"]), meta["categorical_mode"])
    r.done()
    cfg = config or stored
    return Checkpoint(cfg, ModelParams.from_named(cfg, tensors), norm, metadata)


# -- training loop -----------------------------------------------------------

def evaluate(params: ModelParams, windows: WindowSet, chunk: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a full pass."""
    total, correct = 0.0, 0
    for i in range(0, len(windows), chunk):
        X = windows.X[i:i + chunk]
        y = windows.y[i:i + chunk]
        probs, _ = forward(params, X)
        total += float(np.sum(cross_entropy(probs, np.eye(params.config.classes)[y])))
        correct += int(np.sum(np.argmax(probs, axis=1) == y))
    n = len(windows)
    return total / n, correct / n


def train(config: ModelConfig, train_set: WindowSet, val_set: WindowSet, cfg: TrainConfig,
          norm: NormStats | None = None, callbacks: Sequence[Callable] = (),
          checkpoint_path=None) -> tuple[Checkpoint, list[EpochLog]]:
    """Mini-batch Adam with per-epoch validation, early stopping and best-weight restore.

    Each callback is called as ``cb(epoch_log, params)`` after every epoch.
    When ``checkpoint_path`` is given the best checkpoint so far is rewritten
    there whenever validation loss improves.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    params = ModelParams.init(config, Rng(cfg.seed, INIT_STREAM))
    shuffle_rng = Rng(cfg.seed, SHUFFLE_STREAM)
    adam = AdamState.zeros(params)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    Y = train_set.onehot
    logs: list[EpochLog] = []

    def snapshot(epoch: int, val_loss: float, p: ModelParams) -> Checkpoint:
        meta = {"epoch": epoch, "val_loss": val_loss, "seed": cfg.seed, "train_config": asdict(cfg)}
        return Checkpoint(config, p, norm, meta)

    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        order = np.asarray(shuffle_rng.permutation(len(train_set)))
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            where = f"epoch {epoch}, batch {b // cfg.batch_size}"
            try:
                probs, cache = forward(params, train_set.X[idx])
                batch_loss = float(np.mean(cross_entropy(probs, Y[idx])))
                if not np.isfinite(batch_loss):
                    raise DivergenceError(f"non-finite loss in {where}")
                grads = backward(params, cache, Y[idx])
            except NonFiniteError as exc:
                raise DivergenceError(f"{exc} in {where}") from None
            adam_step(adam, params, grads, cfg)

        train_loss, train_acc = evaluate(params, train_set)
        val_loss, val_acc = evaluate(params, val_set)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(f"non-finite loss after epoch {epoch}")
        seconds = time.perf_counter() - start if cfg.record_time else None
        entry = EpochLog(epoch, train_loss, train_acc, val_loss, val_acc, seconds)
        logs.append(entry)
        log.info("epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                 epoch, train_loss, train_acc, val_loss, val_acc)

        stop = stopper.update(epoch, val_loss, params)
        if stopper.improved_last and checkpoint_path is not None:
            save_checkpoint(snapshot(epoch, val_loss, stopper.best_params), checkpoint_path)
        for cb in callbacks:
            cb(entry, params)
        if stop:
            break

    return snapshot(stopper.best_epoch, stopper.best_loss, stopper.best_params), logs
