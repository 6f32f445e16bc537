"""Layer parameter containers, initializers, and forward functions.

Weights are stored as (in, out) and applied by right-multiplication. All
initializers draw uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) from the run's
generator, in a fixed creation order, so a seed fully determines the model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def uniform_param(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype, name: str
) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True, name=name)


def const_param(value: np.ndarray, name: str) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


@dataclass
class MlpParams:
    """Two-layer perceptron: linear, relu, linear."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named_tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


@dataclass
class SageParams:
    """Graph aggregation layer: relu(x @ w_self + neighbor_mean(x) @ w_nbr)."""

    w_self: Tensor
    w_nbr: Tensor

    def named_tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.w_self", self.w_self), (f"{prefix}.w_nbr", self.w_nbr)]


@dataclass
class TransformerLayerParams:
    """One encoder layer: multi-head self-attention and a small feedforward,
    each followed by residual add and layer norm."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    def named_tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.{f}", getattr(self, f)) for f in (
            "wq", "wk", "wv", "wo", "ln1_g", "ln1_b",
            "ff_w1", "ff_b1", "ff_w2", "ff_b2", "ln2_g", "ln2_b")]


def make_mlp(rng, d_in: int, d_hidden: int, d_out: int, dtype, prefix: str) -> MlpParams:
    return MlpParams(
        w1=uniform_param(rng, (d_in, d_hidden), d_in, dtype, f"{prefix}.w1"),
        b1=uniform_param(rng, (d_hidden,), d_in, dtype, f"{prefix}.b1"),
        w2=uniform_param(rng, (d_hidden, d_out), d_hidden, dtype, f"{prefix}.w2"),
        b2=uniform_param(rng, (d_out,), d_hidden, dtype, f"{prefix}.b2"),
    )


def make_sage(rng, d: int, dtype, prefix: str) -> SageParams:
    return SageParams(
        w_self=uniform_param(rng, (d, d), d, dtype, f"{prefix}.w_self"),
        w_nbr=uniform_param(rng, (d, d), d, dtype, f"{prefix}.w_nbr"),
    )


def make_transformer_layer(
    rng, d: int, ff_width: int, dtype, prefix: str
) -> TransformerLayerParams:
    ones = np.ones(d, dtype=dtype)
    zeros = np.zeros(d, dtype=dtype)
    return TransformerLayerParams(
        wq=uniform_param(rng, (d, d), d, dtype, f"{prefix}.wq"),
        wk=uniform_param(rng, (d, d), d, dtype, f"{prefix}.wk"),
        wv=uniform_param(rng, (d, d), d, dtype, f"{prefix}.wv"),
        wo=uniform_param(rng, (d, d), d, dtype, f"{prefix}.wo"),
        ln1_g=const_param(ones.copy(), f"{prefix}.ln1_g"),
        ln1_b=const_param(zeros.copy(), f"{prefix}.ln1_b"),
        ff_w1=uniform_param(rng, (d, ff_width), d, dtype, f"{prefix}.ff_w1"),
        ff_b1=uniform_param(rng, (ff_width,), d, dtype, f"{prefix}.ff_b1"),
        ff_w2=uniform_param(rng, (ff_width, d), ff_width, dtype, f"{prefix}.ff_w2"),
        ff_b2=uniform_param(rng, (d,), ff_width, dtype, f"{prefix}.ff_b2"),
        ln2_g=const_param(ones.copy(), f"{prefix}.ln2_g"),
        ln2_b=const_param(zeros.copy(), f"{prefix}.ln2_b"),
    )


def linear(x, w: Tensor, b: Tensor | None = None):
    out = ad.matmul(x, w)
    return out if b is None else ad.add(out, b)


def mlp_forward(x, params: MlpParams):
    """linear -> relu -> linear, batched over leading rows."""
    return linear(ad.relu(linear(x, params.w1, params.b1)), params.w2, params.b2)


def mean_agg_matrix(edges, n: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic neighbor-mean operator for one graph snapshot.

    Row i averages the features of i's neighbors; isolated rows are zero.
    With dtype=object the entries are exact Fractions, so compositions of
    these matrices can be checked in rational arithmetic.
    """
    exact = np.dtype(dtype) == np.dtype(object)
    M = np.zeros((n, n), dtype=dtype)
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    for i, js in enumerate(nbrs):
        if not js:
            continue
        w = Fraction(1, len(js)) if exact else 1.0 / len(js)
        for j in js:
            M[i, j] = w
    return M


def sage_forward(x, agg_matrix, params: SageParams):
    """Aggregation layer applied to node features under one snapshot.

    ``agg_matrix`` is the (possibly batched) neighbor-mean operator; an empty
    neighborhood contributes a zero mean.
    """
    return ad.relu(
        ad.add(ad.matmul(x, params.w_self),
               ad.matmul(ad.matmul(agg_matrix, x), params.w_nbr))
    )


def graph_agg_forward(h, edges, params: SageParams):
    """Spec-level entry point: build the mean operator from an edge list."""
    h = ad.as_tensor(h)
    n = h.data.shape[-2]
    dt = h.data.dtype if h.data.dtype in (np.float32, np.float64) else np.float64
    M = Tensor(mean_agg_matrix(edges, n, dtype=dt))
    return sage_forward(h, M, params)


def softmax_rows(x):
    """Row-wise softmax of a matrix (stable, max-subtracted)."""
    return ad.softmax_last(x)


def attention_forward(x, params: TransformerLayerParams, n_heads: int):
    """Multi-head self-attention over (S, T, d) token sequences."""
    s, t, d = x.data.shape if isinstance(x, Tensor) else np.asarray(x).shape
    if d % n_heads != 0:
        raise ValueError(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def split_heads(y):
        return ad.transpose(ad.reshape(y, (s, t, n_heads, dh)), (0, 2, 1, 3))

    q = split_heads(ad.matmul(x, params.wq))
    k = split_heads(ad.matmul(x, params.wk))
    v = split_heads(ad.matmul(x, params.wv))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = ad.softmax_last(scores)
    ctx = ad.matmul(weights, v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (s, t, d))
    return ad.matmul(ctx, params.wo)


def transformer_layer_forward(x, params: TransformerLayerParams, n_heads: int):
    x = ad.as_tensor(x)
    attn = attention_forward(x, params, n_heads)
    x = ad.layer_norm_last(ad.add(x, attn), params.ln1_g, params.ln1_b)
    ff = linear(ad.relu(linear(x, params.ff_w1, params.ff_b1)),
                params.ff_w2, params.ff_b2)
    return ad.layer_norm_last(ad.add(x, ff), params.ln2_g, params.ln2_b)


def transformer_encoder_forward(seq, layers: list[TransformerLayerParams],
                                n_heads: int = 4):
    """Stack of encoder layers; accepts (T, d) or batched (S, T, d) input."""
    x = ad.as_tensor(seq)
    squeeze = x.data.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.data.shape)
    for layer in layers:
        x = transformer_layer_forward(x, layer, n_heads)
    if squeeze:
        x = ad.reshape(x, x.data.shape[1:])
    return x
