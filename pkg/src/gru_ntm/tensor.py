"""Dense float64 kernel and the seeded random source used across the package.

Arrays are plain ``numpy.ndarray`` values of dtype float64. The helpers here add
the shape and finiteness checks the hand-written backward passes rely on:
no broadcasting except against scalars, and NaN/Inf raise instead of leaking.

Random numbers come from PCG64 (numpy's bit generator, whose raw output stream
is stable across platforms and releases). Only the raw 64-bit words are used;
uniforms, normals, bounded integers and permutations are derived here so that
the sample stream never depends on numpy's distribution code.
"""
from __future__ import annotations

import numpy as np

Tensor = np.ndarray

_TWO_POW_53 = float(2**53)


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def as_tensor(x) -> Tensor:
    return np.asarray(x, dtype=np.float64)


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul result")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def _log(x: Tensor) -> Tensor:
    if np.any(x <= 0):
        raise ValueError("log of non-positive value")
    return np.log(x)


_UNARY = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "relu": relu,
    "exp": np.exp,
    "log": _log,
}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op: str, a, b=None) -> Tensor:
    """Apply ``op`` per element. Binary ops need equal shapes or a scalar ``b``."""
    a = as_tensor(a)
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} is unary")
        with np.errstate(over="ignore"):
            out = _UNARY[op](a)
    elif op in _BINARY:
        if b is None:
            raise TypeError(f"{op} needs two operands")
        b = as_tensor(b)
        if b.ndim != 0 and a.ndim != 0 and a.shape != b.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
        out = _BINARY[op](a, b)
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return check_finite(np.asarray(out, dtype=np.float64), f"{op} result")


def concat(a, b, axis: int = -1) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim:
        raise ShapeError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    ax = axis % a.ndim
    for i, (p, q) in enumerate(zip(a.shape, b.shape)):
        if i != ax and p != q:
            raise ShapeError(f"concat: non-concat dims differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=ax)


class Rng:
    """Deterministic sample stream keyed by ``(seed, stream)``.

    Distinct ``stream`` values give independent generators for the same seed,
    which is how the pipeline keeps shuffling, splitting and weight init from
    perturbing each other when one of them changes.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self.stream = int(stream)
        self._bits = np.random.PCG64(np.random.SeedSequence([self.seed, self.stream]))

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n).astype(np.uint64)

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> Tensor:
        n = int(np.prod(size, dtype=np.int64))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) / _TWO_POW_53
        return (low + (high - low) * u).reshape(size)

    def normal(self, size, mean: float = 0.0, std: float = 1.0) -> Tensor:
        # Box-Muller on (0,1] x [0,1) uniforms
        n = int(np.prod(size, dtype=np.int64))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)
        u2 = self.uniform(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])
        return (mean + std * z[:n]).reshape(size)

    def below(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` by rejection on 64-bit words."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = 2**64 - (2**64 % n)
        while True:
            x = int(self.raw(1)[0])
            if x < limit:
                return x % n

    def permutation(self, n: int) -> list[int]:
        return rng_permutation(self, n)


def rng_permutation(rng: Rng, n: int) -> list[int]:
    """Fisher-Yates shuffle of ``0..n-1`` (Durstenfeld, swapping from the end)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    idx = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def glorot_uniform(rng: Rng, fan_out: int, fan_in: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform((fan_out, fan_in), -limit, limit)
