"""Neural Turing Machine layer with content addressing and one read / one write head.

A GRU controller reads ``[x_t, r_{t-1}]``. Its hidden state is projected to a
read key, a write key, a write vector and (unless ``additive_write``) a
sigmoid erase vector. Each step reads from the previous memory, then writes:

    w_r = softmax(cos(M_i, k_r))        r_t = sum_i w_r[i] M_i
    w_w = softmax(cos(M_i, k_w))        M_i <- M_i * (1 - w_w[i] e) + w_w[i] v

The step output is ``[h_t, r_t]``. All arrays carry a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import GruCache, GruParams, ParamGroup, _batched, gru_step, gru_step_backward
from .tensor import Rng, ShapeError, Tensor, check_finite, glorot_uniform, sigmoid

COSINE_EPS = 1e-8
CONSTANT_MEMORY_INIT = 1e-6


@dataclass(frozen=True)
class NtmConfig:
    memory_rows: int = 32
    memory_width: int = 20
    controller_units: int = 32
    additive_write: bool = False
    learned_memory: bool = True

    def __post_init__(self):
        if self.memory_rows < 1 or self.memory_width < 1 or self.controller_units < 1:
            raise ValueError("NTM sizes must be >= 1")


@dataclass
class NtmParams(ParamGroup):
    controller: GruParams
    W_kr: Tensor
    b_kr: Tensor
    W_kw: Tensor
    b_kw: Tensor
    W_v: Tensor
    b_v: Tensor
    W_e: Tensor
    b_e: Tensor
    memory0: Tensor

    @classmethod
    def init(cls, cfg: NtmConfig, input_dim: int, rng: Rng) -> "NtmParams":
        C, N, M = cfg.controller_units, cfg.memory_rows, cfg.memory_width
        controller = GruParams.init(C, input_dim + M, rng)

        def proj():
            return glorot_uniform(rng, M, C), np.zeros(M)

        W_kr, b_kr = proj()
        W_kw, b_kw = proj()
        W_v, b_v = proj()
        W_e, b_e = proj()
        if cfg.learned_memory:
            memory0 = rng.uniform((N, M), -0.1, 0.1)
        else:
            memory0 = np.full((N, M), CONSTANT_MEMORY_INIT)
        return cls(controller, W_kr, b_kr, W_kw, b_kw, W_v, b_v, W_e, b_e, memory0)

    def named_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        out = self.controller.named_tensors(prefix + "controller.")
        for name in ("W_kr", "b_kr", "W_kw", "b_kw", "W_v", "b_v", "W_e", "b_e", "memory0"):
            out[prefix + name] = getattr(self, name)
        return out

    def zeros_like(self) -> "NtmParams":
        return NtmParams(self.controller.zeros_like(),
                         *(np.zeros_like(t) for t in self._own()))

    def copy(self) -> "NtmParams":
        return NtmParams(self.controller.copy(), *(t.copy() for t in self._own()))

    def _own(self):
        return (self.W_kr, self.b_kr, self.W_kw, self.b_kw, self.W_v, self.b_v,
                self.W_e, self.b_e, self.memory0)

    @property
    def input_dim(self) -> int:
        return self.controller.input_dim - self.memory0.shape[1]

    @property
    def output_dim(self) -> int:
        return self.controller.units + self.memory0.shape[1]


@dataclass
class NtmState:
    memory: Tensor          # (B, N, M)
    read: Tensor            # (B, M)
    h: Tensor               # (B, C)
    w_read: Tensor | None = None
    w_write: Tensor | None = None

    @classmethod
    def initial(cls, params: NtmParams, batch: int) -> "NtmState":
        N, M = params.memory0.shape
        return cls(
            memory=np.broadcast_to(params.memory0, (batch, N, M)).copy(),
            read=np.zeros((batch, M)),
            h=np.zeros((batch, params.controller.units)),
        )


# -- content addressing ------------------------------------------------------

def address(memory, key):
    """Softmax over rows of cosine(memory row, key). Works on ``(N, M)`` or ``(B, N, M)``."""
    memory = np.asarray(memory, dtype=np.float64)
    key = np.asarray(key, dtype=np.float64)
    single = memory.ndim == 2
    if single:
        memory, key = memory[None], key[None]
    if memory.shape[-1] != key.shape[-1]:
        raise ShapeError(f"address: memory width {memory.shape[-1]} != key {key.shape[-1]}")
    dots = np.einsum("bnm,bm->bn", memory, key)
    row_norm = np.sqrt(np.einsum("bnm,bnm->bn", memory, memory))
    key_norm = np.sqrt(np.einsum("bm,bm->b", key, key))
    raw = row_norm * key_norm[:, None]
    denom = np.maximum(raw, COSINE_EPS)
    sim = dots / denom
    e = np.exp(sim - sim.max(axis=1, keepdims=True))
    w = e / e.sum(axis=1, keepdims=True)
    cache = (memory, key, dots, row_norm, key_norm, raw, denom, w, single)
    return (w[0] if single else w), cache


def address_backward(cache, d_w):
    memory, key, dots, row_norm, key_norm, raw, denom, w, single = cache
    d_w = np.asarray(d_w, dtype=np.float64)
    if single:
        d_w = d_w[None]
    d_sim = w * (d_w - np.sum(w * d_w, axis=1, keepdims=True))
    d_dots = d_sim / denom
    d_denom = -d_sim * dots / denom**2
    d_raw = np.where(raw > COSINE_EPS, d_denom, 0.0)
    d_row_norm = d_raw * key_norm[:, None]
    d_key_norm = np.sum(d_raw * row_norm, axis=1)

    safe_row = np.where(row_norm > 0, row_norm, 1.0)
    safe_key = np.where(key_norm > 0, key_norm, 1.0)
    d_memory = d_dots[:, :, None] * key[:, None, :] + (d_row_norm / safe_row)[:, :, None] * memory
    d_key = np.einsum("bn,bnm->bm", d_dots, memory) + (d_key_norm / safe_key)[:, None] * key
    if single:
        return d_memory[0], d_key[0]
    return d_memory, d_key


def read(memory, w) -> Tensor:
    memory = np.asarray(memory, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if memory.shape[:-1] != w.shape:
        raise ShapeError(f"read: weighting {w.shape} does not match memory {memory.shape}")
    return np.einsum("...n,...nm->...m", w, memory)


def read_backward(memory, w, d_r):
    d_w = np.einsum("...nm,...m->...n", memory, d_r)
    d_memory = w[..., :, None] * d_r[..., None, :]
    return d_memory, d_w


def write(memory, w, v, e) -> Tensor:
    """Erase then add: ``M_i * (1 - w_i e) + w_i v``. With ``e = 0`` this is purely additive."""
    memory = np.asarray(memory, dtype=np.float64)
    w, v, e = (np.asarray(a, dtype=np.float64) for a in (w, v, e))
    if memory.shape[:-1] != w.shape or v.shape[-1] != memory.shape[-1] or e.shape != v.shape:
        raise ShapeError(
            f"write: memory {memory.shape}, weighting {w.shape}, v {v.shape}, e {e.shape}"
        )
    we = w[..., :, None] * e[..., None, :]
    return memory * (1.0 - we) + w[..., :, None] * v[..., None, :]


def write_backward(memory, w, v, e, d_new):
    we = w[..., :, None] * e[..., None, :]
    d_memory = d_new * (1.0 - we)
    d_w = np.sum(d_new * (v[..., None, :] - memory * e[..., None, :]), axis=-1)
    d_v = np.einsum("...nm,...n->...m", d_new, w)
    d_e = -np.einsum("...nm,...nm,...n->...m", d_new, memory, w)
    return d_memory, d_w, d_v, d_e


# -- one step and a whole sequence -------------------------------------------

@dataclass
class NtmStepCache:
    gru: GruCache
    memory: Tensor
    h: Tensor
    e: Tensor
    v: Tensor
    w_read: Tensor
    w_write: Tensor
    addr_read: tuple
    addr_write: tuple
    additive: bool


def ntm_step(params: NtmParams, state: NtmState, x, additive_write: bool = False):
    """Advance one time step. Returns ``(output, new_state, cache)``.

    ``output`` is ``[h_t, r_t]`` with shape ``(B, C + M)`` (or unbatched if
    ``x`` is a single vector and the state has batch size 1).
    """
    x, single = _batched(x)
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"ntm_step: input width {x.shape[1]} != {params.input_dim}")
    ctrl_in = np.concatenate([x, state.read], axis=1)
    h, gcache = gru_step(params.controller, state.h, ctrl_in)

    k_r = h @ params.W_kr.T + params.b_kr
    k_w = h @ params.W_kw.T + params.b_kw
    v = h @ params.W_v.T + params.b_v
    if additive_write:
        e = np.zeros_like(v)
    else:
        e = sigmoid(h @ params.W_e.T + params.b_e)

    w_r, addr_r = address(state.memory, k_r)
    r = read(state.memory, w_r)
    w_w, addr_w = address(state.memory, k_w)
    memory = check_finite(write(state.memory, w_w, v, e), "NTM memory")

    out = np.concatenate([h, r], axis=1)
    new_state = NtmState(memory, r, h, w_r, w_w)
    cache = NtmStepCache(gcache, state.memory, h, e, v, w_r, w_w, addr_r, addr_w, additive_write)
    return (out[0] if single else out), new_state, cache


def ntm_step_backward(params: NtmParams, cache: NtmStepCache, d_out, d_memory_next, d_read_next, d_h_next):
    """Backprop one step. Upstream gradients arrive from this step's output and
    from the next step's use of memory, read vector and controller state.

    Returns ``(grads, d_x, d_memory_prev, d_read_prev, d_h_prev)``.
    """
    C = params.controller.units
    d_h = d_out[:, :C] + d_h_next
    d_r = d_out[:, C:] + d_read_next
    mem = cache.memory

    d_mem, d_ww, d_v, d_e = write_backward(mem, cache.w_write, cache.v, cache.e, d_memory_next)
    dm, d_kw = address_backward(cache.addr_write, d_ww)
    d_mem = d_mem + dm
    dm, d_wr = read_backward(mem, cache.w_read, d_r)
    d_mem = d_mem + dm
    dm, d_kr = address_backward(cache.addr_read, d_wr)
    d_mem = d_mem + dm

    h = cache.h
    grads = params.zeros_like()
    grads.W_kr[...] = d_kr.T @ h
    grads.b_kr[...] = d_kr.sum(axis=0)
    grads.W_kw[...] = d_kw.T @ h
    grads.b_kw[...] = d_kw.sum(axis=0)
    grads.W_v[...] = d_v.T @ h
    grads.b_v[...] = d_v.sum(axis=0)
    d_h = d_h + d_kr @ params.W_kr + d_kw @ params.W_kw + d_v @ params.W_v
    if not cache.additive:
        d_e_pre = d_e * cache.e * (1.0 - cache.e)
        grads.W_e[...] = d_e_pre.T @ h
        grads.b_e[...] = d_e_pre.sum(axis=0)
        d_h = d_h + d_e_pre @ params.W_e

    g_ctrl, d_h_prev, d_ctrl_in = gru_step_backward(params.controller, cache.gru, d_h)
    grads.controller = g_ctrl
    d_x = d_ctrl_in[:, : params.input_dim]
    d_read_prev = d_ctrl_in[:, params.input_dim:]
    return grads, d_x, d_mem, d_read_prev, d_h_prev


@dataclass
class NtmSequenceCache:
    steps: list = field(default_factory=list)
    batch: int = 0
    single: bool = False


def ntm_sequence(params: NtmParams, xs, additive_write: bool = False, state: NtmState | None = None):
    """Run over ``xs`` (``(T, d)`` or ``(B, T, d)``) and return the last step's output."""
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 2
    if single:
        xs = xs[None]
    if xs.shape[1] < 1:
        raise ValueError("ntm_sequence needs at least one time step")
    if state is None:
        state = NtmState.initial(params, xs.shape[0])
    cache = NtmSequenceCache(batch=xs.shape[0], single=single)
    out = None
    for t in range(xs.shape[1]):
        out, state, c = ntm_step(params, state, xs[:, t], additive_write)
        cache.steps.append(c)
    return (out[0] if single else out), cache


def ntm_sequence_backward(params: NtmParams, cache: NtmSequenceCache, d_out):
    """Gradients for every parameter (``memory0`` included) and for the inputs."""
    d_out = np.asarray(d_out, dtype=np.float64)
    if cache.single:
        d_out = d_out[None]
    B = cache.batch
    N, M = params.memory0.shape
    C = params.controller.units
    grads = params.zeros_like()
    d_mem = np.zeros((B, N, M))
    d_read = np.zeros((B, M))
    d_h = np.zeros((B, C))
    zero_out = np.zeros_like(d_out)
    d_xs = []
    T = len(cache.steps)
    for t in range(T - 1, -1, -1):
        upstream = d_out if t == T - 1 else zero_out
        g, d_x, d_mem, d_read, d_h = ntm_step_backward(params, cache.steps[t], upstream, d_mem, d_read, d_h)
        _add_ntm(grads, g)
        d_xs.append(d_x)
    grads.memory0 += d_mem.sum(axis=0)
    d_xs = np.stack(d_xs[::-1], axis=1)
    return grads, (d_xs[0] if cache.single else d_xs)


def _add_ntm(total: NtmParams, part: NtmParams) -> None:
    dst = total.named_tensors()
    for name, t in part.named_tensors().items():
        dst[name][...] += t
