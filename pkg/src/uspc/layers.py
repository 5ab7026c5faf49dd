"""Network building blocks on top of the autodiff core.

Layers register their parameters in a shared ParamStore under dotted names
and are pure functions of (input, parameters) apart from dropout, which
draws its mask from a named counter-based stream so training is replayable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParamStore
from .rng import NamedRng


@dataclass
class Ctx:
    """Per-forward context: training mode plus the dropout stream identity."""

    training: bool = False
    step: int = 0
    uid: str = ""
    rng: NamedRng | None = None

    @classmethod
    def eval(cls) -> "Ctx":
        return cls(training=False)


def _init_linear(rng: NamedRng, name: str, d_in: int, d_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (d_in + d_out))
    return rng.normal(f"init/{name}", (d_in, d_out), std)


class Linear:
    def __init__(self, store: ParamStore, rng: NamedRng, name: str,
                 d_in: int, d_out: int, bias: bool = True, zero_init: bool = False):
        w0 = np.zeros((d_in, d_out)) if zero_init else _init_linear(rng, name, d_in, d_out)
        self.w = store.param(f"{name}.w", w0)
        self.b = store.param(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.w)
        return out if self.b is None else ad.add(out, self.b)


class Conv1d:
    """Temporal conv, kernel (K, Cin, Cout), zero same-padding."""

    def __init__(self, store: ParamStore, rng: NamedRng, name: str,
                 c_in: int, c_out: int, kernel_size: int = 3):
        std = np.sqrt(2.0 / (kernel_size * c_in + c_out))
        self.w = store.param(f"{name}.w",
                             rng.normal(f"init/{name}", (kernel_size, c_in, c_out), std))
        self.b = store.param(f"{name}.b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.w, self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-6):
        self.gain = store.param(f"{name}.gain", np.ones(dim))
        self.bias = store.param(f"{name}.bias", np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class StyleLayerNorm:
    """Layer norm whose gain/bias come from a style vector.

    The projections start at zero so an untrained style path reduces to a
    plain normalization (gain 1, bias 0).
    """

    def __init__(self, store: ParamStore, rng: NamedRng, name: str,
                 dim: int, style_dim: int, eps: float = 1e-6):
        self.w_gain = store.param(f"{name}.w_gain", np.zeros((style_dim, dim)))
        self.w_bias = store.param(f"{name}.w_bias", np.zeros((style_dim, dim)))
        self.eps = eps

    def __call__(self, x: Tensor, style: Tensor) -> Tensor:
        xhat = ad.normalize_rows(x, self.eps)
        row = ad.matmul(_as_row(style), self.w_gain)
        gain = ad.add(row, Tensor(np.ones(self.w_gain.data.shape[1])))
        bias = ad.matmul(_as_row(style), self.w_bias)
        return ad.add(ad.mul(xhat, gain), bias)


def _as_row(v: Tensor) -> Tensor:
    return ad.reshape(v, (1, v.data.shape[0])) if v.data.ndim == 1 else v


class Dropout:
    def __init__(self, name: str, rate: float):
        self.name = name
        self.rate = rate

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        if not ctx.training or self.rate == 0.0:
            return x
        gen = ctx.rng.generator(f"dropout/{self.name}/{ctx.uid}", step=ctx.step)
        return ad.dropout(x, self.rate, gen, training=True)


class Embedding:
    def __init__(self, store: ParamStore, rng: NamedRng, name: str,
                 n_entries: int, dim: int, std: float = 0.3):
        self.table = store.param(f"{name}.table",
                                 rng.normal(f"init/{name}", (n_entries, dim), std))
        self.n_entries = n_entries

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_entries):
            bad = ids[(ids < 0) | (ids >= self.n_entries)][0]
            raise IndexError(f"id {bad} outside vocabulary of {self.n_entries}")
        return ad.gather_rows(self.table, ids)


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def positional_encoding(n_rows: int, dim: int) -> Tensor:
    """Sinusoidal position table (constant, shared across call sites)."""
    key = (n_rows, dim)
    table = _PE_CACHE.get(key)
    if table is None:
        pos = np.arange(n_rows)[:, None]
        i = np.arange(dim)[None, :]
        angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
        table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
        _PE_CACHE[key] = table
    return Tensor(table)


class MultiHeadAttention:
    def __init__(self, store: ParamStore, rng: NamedRng, name: str,
                 dim: int, n_heads: int):
        self.wq = Linear(store, rng, f"{name}.q", dim, dim)
        self.wk = Linear(store, rng, f"{name}.k", dim, dim)
        self.wv = Linear(store, rng, f"{name}.v", dim, dim)
        self.wo = Linear(store, rng, f"{name}.out", dim, dim)
        self.n_heads = n_heads

    def __call__(self, x: Tensor) -> Tensor:
        mixed = ad.attention_core(self.wq(x), self.wk(x), self.wv(x), self.n_heads)
        return self.wo(mixed)


class FFTBlock:
    """Self-attention + two temporal convolutions, each with residual + norm."""

    def __init__(self, store: ParamStore, rng: NamedRng, name: str, dim: int,
                 n_heads: int, kernel_size: int, dropout_rate: float,
                 style_dim: int | None = None):
        self.attn = MultiHeadAttention(store, rng, f"{name}.attn", dim, n_heads)
        self.conv1 = Conv1d(store, rng, f"{name}.conv1", dim, dim, kernel_size)
        self.conv2 = Conv1d(store, rng, f"{name}.conv2", dim, dim, kernel_size)
        self.styled = style_dim is not None
        if self.styled:
            self.norm1 = StyleLayerNorm(store, rng, f"{name}.norm1", dim, style_dim)
            self.norm2 = StyleLayerNorm(store, rng, f"{name}.norm2", dim, style_dim)
        else:
            self.norm1 = LayerNorm(store, f"{name}.norm1", dim)
            self.norm2 = LayerNorm(store, f"{name}.norm2", dim)
        self.drop1 = Dropout(f"{name}.drop1", dropout_rate)
        self.drop2 = Dropout(f"{name}.drop2", dropout_rate)

    def __call__(self, x: Tensor, ctx: Ctx, style: Tensor | None = None) -> Tensor:
        a = self.drop1(self.attn(x), ctx)
        h = ad.add(x, a)
        h = self.norm1(h, style) if self.styled else self.norm1(h)
        c = self.conv2(ad.relu(self.conv1(h)))
        h2 = ad.add(h, self.drop2(c, ctx))
        return self.norm2(h2, style) if self.styled else self.norm2(h2)


class ConvPredictorStack:
    """Two conv layers with relu/norm/dropout, then a linear head.

    The structure used by both the duration predictor and the pitch
    predictor; only the head width differs.
    """

    def __init__(self, store: ParamStore, rng: NamedRng, name: str, dim: int,
                 out_dim: int, kernel_size: int, dropout_rate: float):
        self.conv1 = Conv1d(store, rng, f"{name}.conv1", dim, dim, kernel_size)
        self.norm1 = LayerNorm(store, f"{name}.norm1", dim)
        self.conv2 = Conv1d(store, rng, f"{name}.conv2", dim, dim, kernel_size)
        self.norm2 = LayerNorm(store, f"{name}.norm2", dim)
        self.head = Linear(store, rng, f"{name}.head", dim, out_dim)
        self.drop1 = Dropout(f"{name}.drop1", dropout_rate)
        self.drop2 = Dropout(f"{name}.drop2", dropout_rate)

    def __call__(self, x: Tensor, ctx: Ctx) -> Tensor:
        h = self.drop1(self.norm1(ad.relu(self.conv1(x))), ctx)
        h = self.drop2(self.norm2(ad.relu(self.conv2(h))), ctx)
        return self.head(h)
