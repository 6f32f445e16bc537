"""Finite-difference verification of every layer's reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import layers as L


def numeric_gradient(loss_fn, tensors: list[Tensor], eps: float = 1e-5):
    """Central differences of a scalar loss w.r.t. each tensor, in place."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = loss_fn()
            flat[k] = orig - eps
            f_minus = loss_fn()
            flat[k] = orig
            gflat[k] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / scale).max())


def check_gradients(forward, tensors: list[Tensor], eps: float = 1e-5) -> float:
    """Compare backward() grads against central differences.

    ``forward`` must rebuild the same graph from the (mutated-in-place)
    tensors and return the scalar loss Tensor. Returns the worst relative
    error across all checked tensors.
    """
    loss = forward()
    for t in tensors:
        t.zero_grad()
    loss.backward()
    analytic = [np.array(t.grad, dtype=float) for t in tensors]

    def loss_value():
        with ad.no_grad():
            return float(forward().data)

    numeric = numeric_gradient(loss_value, tensors, eps=eps)
    return max(max_relative_error(a, n) for a, n in zip(analytic, numeric))


def _t(rng, shape, dtype):
    return Tensor(rng.standard_normal(shape).astype(dtype), requires_grad=True)


def _projector(rng, shape):
    """A fixed random projection turning any output into a scalar loss."""
    r = Tensor(rng.standard_normal(shape))
    return lambda out: ad.sum_all(ad.mul(out, r))


def _check_dense(rng, dtype, eps):
    mlp = L.make_mlp(rng, 5, 7, 3, dtype, "mlp")
    x = _t(rng, (4, 5), dtype)
    project = _projector(rng, (4, 3))
    tensors = [x] + [t for _, t in mlp.named_tensors("mlp")]
    return check_gradients(lambda: project(L.mlp_forward(x, mlp)), tensors, eps=eps)


def _check_graph_agg(rng, dtype, eps):
    n, d = 5, 4
    sage = L.make_sage(rng, d, dtype, "sage")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    k = int(rng.integers(0, len(pairs) + 1))
    edges = [pairs[i] for i in rng.permutation(len(pairs))[:k]]
    x = _t(rng, (n, d), dtype)
    project = _projector(rng, (n, d))
    tensors = [x, sage.w_self, sage.w_nbr]
    return check_gradients(
        lambda: project(L.graph_agg_forward(x, edges, sage)), tensors, eps=eps
    )


def _check_softmax(rng, dtype, eps):
    x = _t(rng, (4, 6), dtype)
    project = _projector(rng, (4, 6))
    return check_gradients(lambda: project(L.softmax_rows(x)), [x], eps=eps)


def _check_layer_norm(rng, dtype, eps):
    d = 6
    x = _t(rng, (3, d), dtype)
    g = Tensor(rng.standard_normal(d).astype(dtype), requires_grad=True)
    b = Tensor(rng.standard_normal(d).astype(dtype), requires_grad=True)
    project = _projector(rng, (3, d))
    return check_gradients(
        lambda: project(ad.layer_norm_last(x, g, b)), [x, g, b], eps=eps
    )


def _check_attention(rng, dtype, eps):
    d, heads = 8, 2
    layer = L.make_transformer_layer(rng, d, 4, dtype, "tr")
    x = _t(rng, (2, 3, d), dtype)
    project = _projector(rng, (2, 3, d))
    tensors = [x, layer.wq, layer.wk, layer.wv, layer.wo]
    return check_gradients(
        lambda: project(L.attention_forward(x, layer, heads)), tensors, eps=eps
    )


def _check_feedforward(rng, dtype, eps):
    d, ff = 6, 4
    layer = L.make_transformer_layer(rng, d, ff, dtype, "tr")
    x = _t(rng, (5, d), dtype)
    project = _projector(rng, (5, d))
    tensors = [x, layer.ff_w1, layer.ff_b1, layer.ff_w2, layer.ff_b2]

    def fwd():
        h = L.linear(ad.relu(L.linear(x, layer.ff_w1, layer.ff_b1)),
                     layer.ff_w2, layer.ff_b2)
        return project(h)

    return check_gradients(fwd, tensors, eps=eps)


def _check_transformer_layer(rng, dtype, eps):
    d, heads = 8, 2
    layer = L.make_transformer_layer(rng, d, 4, dtype, "tr")
    x = _t(rng, (2, 3, d), dtype)
    project = _projector(rng, (2, 3, d))
    tensors = [x] + [t for _, t in layer.named_tensors("tr")]
    return check_gradients(
        lambda: project(L.transformer_layer_forward(x, layer, heads)), tensors
    )


LAYER_CHECKS = {
    "dense": _check_dense,
    "graph_agg": _check_graph_agg,
    "softmax": _check_softmax,
    "layer_norm": _check_layer_norm,
    "attention": _check_attention,
    "feedforward": _check_feedforward,
    "transformer_layer": _check_transformer_layer,
}

# Individual layer types; the composite transformer_layer check is too deep
# for float32 finite differences and runs in the 64-bit suite only.
CORE_LAYER_TYPES = ("dense", "graph_agg", "softmax", "layer_norm",
                    "attention", "feedforward")


def run_gradient_checks(
    instances: int = 20, dtype=np.float64, seed: int = 0,
    eps: float | None = None, layer_names: tuple[str, ...] | None = None,
) -> dict[str, float]:
    """Worst finite-difference relative error per layer type.

    The step defaults to 1e-5 in float64 and 1e-3 in float32, where smaller
    steps would drown in rounding noise.
    """
    if eps is None:
        eps = 1e-5 if np.dtype(dtype) == np.float64 else 1e-3
    if layer_names is None:
        layer_names = tuple(LAYER_CHECKS)
    results = {}
    for idx, (name, fn) in enumerate(sorted(LAYER_CHECKS.items())):
        if name not in layer_names:
            continue
        worst = 0.0
        for k in range(instances):
            rng = np.random.default_rng(np.random.SeedSequence((seed, idx, k)))
            worst = max(worst, fn(rng, dtype, eps))
        results[name] = worst
    return results
