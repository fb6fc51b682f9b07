"""GRU cell, dense layer and softmax with hand-derived backward passes.

Every function accepts either a single vector or a batch with a leading axis;
batched inputs are an independent map over rows. Weight matrices are stored
``(out, in)`` so a forward product is ``x @ W.T``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .tensor import Rng, ShapeError, Tensor, check_finite, glorot_uniform, sigmoid


class ParamGroup:
    """Mixin for dataclasses whose fields are all named arrays."""

    def named_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}

    def zeros_like(self):
        return type(self)(**{f.name: np.zeros_like(getattr(self, f.name)) for f in fields(self)})

    def copy(self):
        return type(self)(**{f.name: getattr(self, f.name).copy() for f in fields(self)})


@dataclass
class GruParams(ParamGroup):
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def units(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1] - self.W_z.shape[0]

    @classmethod
    def init(cls, units: int, input_dim: int, rng: Rng) -> "GruParams":
        fan_in = units + input_dim
        return cls(
            W_z=glorot_uniform(rng, units, fan_in),
            W_r=glorot_uniform(rng, units, fan_in),
            W_h=glorot_uniform(rng, units, fan_in),
            b_z=np.zeros(units),
            b_r=np.zeros(units),
            b_h=np.zeros(units),
        )


@dataclass
class DenseParams(ParamGroup):
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, out_dim: int, in_dim: int, rng: Rng) -> "DenseParams":
        return cls(W=glorot_uniform(rng, out_dim, in_dim), b=np.zeros(out_dim))


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


@dataclass
class GruCache:
    h_prev: Tensor
    hx: Tensor
    rhx: Tensor
    z: Tensor
    r: Tensor
    h_cand: Tensor
    single: bool


def gru_step(p: GruParams, h_prev, x) -> tuple[Tensor, GruCache]:
    h_prev, single = _batched(h_prev)
    x, _ = _batched(x)
    units = p.units
    if h_prev.shape[1] != units or x.shape[1] != p.input_dim or h_prev.shape[0] != x.shape[0]:
        raise ShapeError(
            f"gru_step: state {h_prev.shape} / input {x.shape} do not fit "
            f"units={units}, input_dim={p.input_dim}"
        )
    hx = np.concatenate([h_prev, x], axis=1)
    z = sigmoid(hx @ p.W_z.T + p.b_z)
    r = sigmoid(hx @ p.W_r.T + p.b_r)
    rhx = np.concatenate([r * h_prev, x], axis=1)
    h_cand = np.tanh(rhx @ p.W_h.T + p.b_h)
    h = (1.0 - z) * h_prev + z * h_cand
    check_finite(h, "GRU state")
    cache = GruCache(h_prev, hx, rhx, z, r, h_cand, single)
    return (h[0] if single else h), cache


def gru_step_backward(p: GruParams, cache: GruCache, d_h) -> tuple[GruParams, Tensor, Tensor]:
    """Returns ``(grads, d_h_prev, d_x)``; grads are summed over the batch."""
    d_h, _ = _batched(d_h)
    units = p.units
    z, r, h_cand, h_prev = cache.z, cache.r, cache.h_cand, cache.h_prev

    d_z = d_h * (h_cand - h_prev)
    d_h_prev = d_h * (1.0 - z)
    d_a_h = d_h * z * (1.0 - h_cand**2)

    d_rhx = d_a_h @ p.W_h
    d_rh = d_rhx[:, :units]
    d_x = d_rhx[:, units:].copy()
    d_r = d_rh * h_prev
    d_h_prev += d_rh * r

    d_a_z = d_z * z * (1.0 - z)
    d_a_r = d_r * r * (1.0 - r)
    d_hx = d_a_z @ p.W_z + d_a_r @ p.W_r
    d_h_prev += d_hx[:, :units]
    d_x += d_hx[:, units:]

    grads = GruParams(
        W_z=d_a_z.T @ cache.hx,
        W_r=d_a_r.T @ cache.hx,
        W_h=d_a_h.T @ cache.rhx,
        b_z=d_a_z.sum(axis=0),
        b_r=d_a_r.sum(axis=0),
        b_h=d_a_h.sum(axis=0),
    )
    if cache.single:
        return grads, d_h_prev[0], d_x[0]
    return grads, d_h_prev, d_x


def gru_sequence(p: GruParams, xs, return_sequences: bool = True):
    """Run the cell over ``xs`` of shape ``(T, d)`` or ``(B, T, d)`` from a zero state.

    Returns ``(outputs, caches)``; outputs are every hidden state when
    ``return_sequences`` is set, otherwise only the last one.
    """
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 2
    if single:
        xs = xs[None]
    if xs.shape[1] < 1:
        raise ValueError("gru_sequence needs at least one time step")
    h = np.zeros((xs.shape[0], p.units))
    hs, caches = [], []
    for t in range(xs.shape[1]):
        h, c = gru_step(p, h, xs[:, t])
        hs.append(h)
        caches.append(c)
    out = np.stack(hs, axis=1) if return_sequences else h
    return (out[0] if single else out), caches


def gru_sequence_backward(p: GruParams, caches: list[GruCache], d_out, return_sequences: bool = True):
    """Backprop through time. ``d_out`` matches the forward output's shape.

    Returns ``(grads, d_xs)`` with ``d_xs`` shaped like the forward input.
    """
    d_out = np.asarray(d_out, dtype=np.float64)
    T = len(caches)
    single = d_out.ndim == (1 if not return_sequences else 2)
    if single:
        d_out = d_out[None]
    grads = p.zeros_like()
    d_h = np.zeros((d_out.shape[0], p.units))
    d_xs = [None] * T
    for t in range(T - 1, -1, -1):
        if return_sequences:
            d_h = d_h + d_out[:, t]
        elif t == T - 1:
            d_h = d_h + d_out
        g, d_h, d_xs[t] = gru_step_backward(p, caches[t], d_h)
        accumulate(grads, g)
    d_xs = np.stack(d_xs, axis=1)
    return grads, (d_xs[0] if single else d_xs)


def accumulate(total: ParamGroup, part: ParamGroup) -> None:
    for f in fields(total):
        getattr(total, f.name)[...] += getattr(part, f.name)


def dense_forward(p: DenseParams, x, activation: str | None = None):
    x, single = _batched(x)
    if x.shape[1] != p.W.shape[1]:
        raise ShapeError(f"dense: input width {x.shape[1]} != {p.W.shape[1]}")
    a = x @ p.W.T + p.b
    if activation == "relu":
        y = np.maximum(a, 0.0)
    elif activation is None:
        y = a
    else:
        raise ValueError(f"unsupported activation {activation!r}")
    cache = (x, a, activation, single)
    return (y[0] if single else y), cache


def dense_backward(p: DenseParams, cache, d_y) -> tuple[DenseParams, Tensor]:
    x, a, activation, single = cache
    d_y, _ = _batched(d_y)
    d_a = d_y * (a > 0) if activation == "relu" else d_y
    grads = DenseParams(W=d_a.T @ x, b=d_a.sum(axis=0))
    d_x = d_a @ p.W
    return grads, (d_x[0] if single else d_x)


def softmax(x) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
