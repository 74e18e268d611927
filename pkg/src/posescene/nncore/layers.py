"""Neural building blocks: dense, layer norm, multi-head attention,
transformer blocks, and sinusoidal embeddings."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from . import tensor as T
from .params import ParamStore
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sinusoidal_embed(value, dim: int) -> np.ndarray:
    """Interleaved sin/cos features over base-10000 geometric frequencies.

    value may be a scalar or a 1-D array; output gains a trailing `dim` axis.
    Pair i uses angular frequency 10000**(-2i/dim), so the first pair has
    period 2*pi and later pairs are geometrically slower.
    """
    if dim % 2 != 0:
        raise ConfigError(f"sinusoidal embedding dim must be even, got {dim}")
    v = np.asarray(value, dtype=np.float64)
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    angles = v[..., None] * freqs
    out = np.empty(v.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def dense_forward(x, weights, bias):
    """y = x @ W + b with shape validation."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    wd = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if xd.shape[-1] != wd.shape[0]:
        raise ConfigError(
            f"dense shape mismatch: input {xd.shape} vs weights {wd.shape}"
        )
    return T.matmul(x, weights) + bias


class Dense:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = uniform_init(rng, d_in, (d_in, d_out))
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(d_out))

    def __call__(self, x):
        return dense_forward(x, self.w, self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(dim))
        self.beta = store.add(f"{name}.beta", np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / T.tsqrt(var + self.eps)
        return normed * self.gamma + self.beta


def _causal_bias(length: int) -> np.ndarray:
    # large negative, not -inf, so softmax backward stays finite
    return np.triu(np.full((length, length), -1e9), k=1)


class MultiHeadAttention:
    """Self- or cross-attention over [B, L, d] sequences."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator):
        if dim % heads != 0:
            raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Dense(store, f"{name}.q", dim, dim, rng)
        self.wk = Dense(store, f"{name}.k", dim, dim, rng)
        self.wv = Dense(store, f"{name}.v", dim, dim, rng)
        self.wo = Dense(store, f"{name}.o", dim, dim, rng)

    def _split(self, x, B: int, L: int):
        return x.reshape((B, L, self.heads, self.head_dim)).transpose((0, 2, 1, 3))

    def __call__(self, x, causal: bool = False, context=None):
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape((1,) + tuple(x.shape))
        B, L, _ = x.shape
        kv_src = x if context is None else context
        Lk = kv_src.shape[1]
        q = self._split(self.wq(x), B, L)
        k = self._split(self.wk(kv_src), B, Lk)
        v = self._split(self.wv(kv_src), B, Lk)
        scores = T.matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        if causal:
            if context is not None:
                raise ConfigError("causal masking only applies to self-attention")
            scores = scores + Tensor(_causal_bias(L))
        attn = T.softmax(scores, axis=-1)
        mixed = T.matmul(attn, v)
        merged = mixed.transpose((0, 2, 1, 3)).reshape((B, L, self.dim))
        out = self.wo(merged)
        if squeeze:
            out = out.reshape((L, self.dim))
        return out


class TransformerBlock:
    """Pre-norm attention + MLP block with residual connections."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int,
                 rng: np.random.Generator, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.fc1 = Dense(store, f"{name}.fc1", dim, dim * mlp_ratio, rng)
        self.fc2 = Dense(store, f"{name}.fc2", dim * mlp_ratio, dim, rng)

    def __call__(self, x, causal: bool = False, context=None):
        x = x + self.attn(self.ln1(x), causal=causal, context=context)
        return x + self.fc2(T.leaky_relu(self.fc1(self.ln2(x)), 0.01))
