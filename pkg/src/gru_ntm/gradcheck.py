"""Central finite-difference check of the model's analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import ModelConfig, ModelParams, backward, forward
from .ntm import NtmConfig
from .tensor import Rng
from .training import cross_entropy

TINY_CONFIG = ModelConfig(
    input_features=4,
    window=3,
    gru1_units=5,
    gru2_units=4,
    ntm=NtmConfig(memory_rows=4, memory_width=3, controller_units=4),
    dense_units=6,
)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    coords_checked: int
    tensors_covered: int
    tensors_total: int
    tolerance: float
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance and self.tensors_covered == self.tensors_total


def grad_check(config: ModelConfig = TINY_CONFIG, seed: int = 0, tolerance: float = 1e-4,
               coords: int = 240, eps: float = 1e-5, batch: int = 2,
               corrupt: Callable[[ModelParams], None] | None = None) -> GradCheckReport:
    """Compare backprop against central differences on sampled coordinates.

    Every parameter tensor contributes at least one coordinate; the rest are
    drawn uniformly over all parameters. The loss is the batch-mean
    cross-entropy of ``batch`` random windows against random labels.
    ``corrupt`` may tamper with the analytic gradients (negative control).

    The check runs at a generic point: every tensor, biases included, is drawn
    from U(-1, 1). At the training initialisation (zero biases) the NTM keys
    have near-zero norm, where cosine addressing is so curved that the
    O(eps^2) truncation error of the difference quotient alone reaches 1e-4.
    """
    rng = Rng(seed, 11)
    params = ModelParams.init(config, rng)
    for t in params.named_tensors().values():
        t[...] = rng.uniform(t.shape, -1.0, 1.0)
    X = rng.uniform((batch, config.window, config.input_features), -1.0, 1.0)
    labels = [rng.below(config.classes) for _ in range(batch)]
    Y = np.eye(config.classes)[labels]

    def loss() -> float:
        probs, _ = forward(params, X)
        return float(np.mean(cross_entropy(probs, Y)))

    _, cache = forward(params, X)
    grads = backward(params, cache, Y)
    if corrupt is not None:
        corrupt(grads)

    named = params.named_tensors()
    gnamed = grads.named_tensors()
    names = list(named)
    if not config.ntm.learned_memory:
        names.remove("ntm.memory0")
    if config.ntm.additive_write:
        names = [n for n in names if n not in ("ntm.W_e", "ntm.b_e")]

    picks = [(n, rng.below(named[n].size)) for n in names]
    sizes = np.array([named[n].size for n in names])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    while len(picks) < coords:
        flat = rng.below(total)
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        picks.append((names[k], flat - int(offsets[k])))

    per_tensor: dict[str, float] = {}
    worst, worst_err = "", 0.0
    for name, i in picks:
        arr = named[name].reshape(-1)
        orig = arr[i]
        arr[i] = orig + eps
        up = loss()
        arr[i] = orig - eps
        down = loss()
        arr[i] = orig
        numeric = (up - down) / (2 * eps)
        analytic = float(gnamed[name].reshape(-1)[i])
        err = relative_error(analytic, numeric)
        per_tensor[name] = max(per_tensor.get(name, 0.0), err)
        if err >= worst_err:
            worst, worst_err = f"{name}[{i}]", err
    return GradCheckReport(worst_err, worst, len(picks), len(per_tensor), len(names),
                           tolerance, per_tensor)
