import math
from fractions import Fraction

import numpy as np
import pytest

from flockwork.nn import autodiff as ad
from flockwork.nn.adam import Adam
from flockwork.nn.autodiff import Tensor
from flockwork.nn import layers as L
from flockwork.nn.gradcheck import CORE_LAYER_TYPES, run_gradient_checks


def np_transformer_layer(x, p, n_heads):
    """Independent numpy re-implementation used as an oracle."""
    s, t, d = x.shape
    dh = d // n_heads

    def split(y):
        return y.reshape(s, t, n_heads, dh).transpose(0, 2, 1, 3)

    q, k, v = (split(x @ w.data) for w in (p.wq, p.wk, p.wv))
    scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
    e = np.exp(scores - scores.max(-1, keepdims=True))
    w = e / e.sum(-1, keepdims=True)
    ctx = (w @ v).transpose(0, 2, 1, 3).reshape(s, t, d)
    h = x + ctx @ p.wo.data

    def layernorm(y, g, b):
        mu = y.mean(-1, keepdims=True)
        var = y.var(-1, keepdims=True)
        return (y - mu) / np.sqrt(var + 1e-5) * g.data + b.data

    h = layernorm(h, p.ln1_g, p.ln1_b)
    ff = np.maximum(h @ p.ff_w1.data + p.ff_b1.data, 0.0) @ p.ff_w2.data + p.ff_b2.data
    return layernorm(h + ff, p.ln2_g, p.ln2_b), w


class TestAutodiffBasics:
    def test_sum_of_params_grads_are_one(self):
        xs = [Tensor(np.random.default_rng(i).standard_normal(3),
                     requires_grad=True) for i in range(3)]
        loss = ad.sum_all(ad.concat(xs, axis=0))
        loss.backward()
        for x in xs:
            assert (x.grad == 1.0).all()

    def test_double_backward_doubles_leaf_grads(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = ad.sum_all(ad.mul(x, x))
        loss.backward()
        g1 = x.grad.copy()
        loss.backward()
        np.testing.assert_allclose(x.grad, 2 * g1)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, 2.0).backward()

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = ad.mul(x, 2.0)
        assert not y.requires_grad

    def test_dtype_preserved_through_ops(self):
        x = Tensor(np.ones((2, 3), dtype=np.float32), requires_grad=True)
        w = Tensor(np.ones((3, 4), dtype=np.float32), requires_grad=True)
        out = ad.relu(ad.mul(ad.matmul(x, w), 0.5))
        assert out.data.dtype == np.float32
        ad.sum_all(out).backward()
        assert x.grad.dtype == np.float32
        assert w.grad.dtype == np.float32


class TestMlp:
    def test_zero_weights_yield_bias(self):
        p = L.MlpParams(
            w1=Tensor(np.zeros((4, 8)), requires_grad=True),
            b1=Tensor(np.full(8, 0.3), requires_grad=True),
            w2=Tensor(np.zeros((8, 2)), requires_grad=True),
            b2=Tensor(np.array([5.0, -1.0]), requires_grad=True),
        )
        out = L.mlp_forward(Tensor(np.random.default_rng(0).standard_normal((6, 4))), p)
        np.testing.assert_allclose(out.data, np.tile([5.0, -1.0], (6, 1)))

    def test_encoder_shape_18_to_128(self):
        rng = np.random.default_rng(0)
        p = L.make_mlp(rng, 18, 128, 128, np.float32, "enc")
        out = L.mlp_forward(Tensor(rng.standard_normal((5, 18)).astype(np.float32)), p)
        assert out.data.shape == (5, 128)

    def test_scalar_chain(self):
        p = L.MlpParams(
            w1=Tensor(np.array([[2.0]]), requires_grad=True),
            b1=Tensor(np.zeros(1), requires_grad=True),
            w2=Tensor(np.array([[3.0]]), requires_grad=True),
            b2=Tensor(np.zeros(1), requires_grad=True),
        )
        out = L.mlp_forward(Tensor(np.array([[1.0]])), p)
        assert out.data[0, 0] == pytest.approx(6.0)

    def test_init_bounds(self):
        rng = np.random.default_rng(0)
        p = L.make_mlp(rng, 32, 16, 8, np.float64, "m")
        assert np.abs(p.w1.data).max() <= 1 / math.sqrt(32)
        assert np.abs(p.w2.data).max() <= 1 / math.sqrt(16)


class TestGraphAgg:
    def test_isolated_identity_self_weight(self):
        n, d = 4, 3
        p = L.SageParams(
            w_self=Tensor(np.eye(d), requires_grad=True),
            w_nbr=Tensor(np.random.default_rng(0).standard_normal((d, d)),
                         requires_grad=True),
        )
        h = np.abs(np.random.default_rng(1).standard_normal((n, d)))
        out = L.graph_agg_forward(Tensor(h), (), p)
        np.testing.assert_allclose(out.data, h, atol=1e-15)

    def test_two_node_swap(self):
        p = L.SageParams(
            w_self=Tensor(np.zeros((1, 1)), requires_grad=True),
            w_nbr=Tensor(np.ones((1, 1)), requires_grad=True),
        )
        out = L.graph_agg_forward(Tensor(np.array([[2.0], [4.0]])), ((0, 1),), p)
        np.testing.assert_allclose(out.data, [[4.0], [2.0]], atol=1e-15)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        n, d = 6, 8
        p = L.make_sage(rng, d, np.float64, "s")
        for _ in range(20):
            h = rng.standard_normal((n, d))
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
            sel = rng.permutation(len(pairs))[: rng.integers(0, len(pairs))]
            edges = [pairs[k] for k in sel]
            perm = rng.permutation(n)
            out = L.graph_agg_forward(Tensor(h), edges, p).data
            edges_p = [tuple(sorted((int(perm[i]), int(perm[j])))) for i, j in edges]
            h_p = np.empty_like(h)
            h_p[perm] = h
            out_p = L.graph_agg_forward(Tensor(h_p), edges_p, p).data
            np.testing.assert_allclose(out_p[perm], out, atol=1e-12)

    def test_mean_agg_matrix_exact_fractions(self):
        M = L.mean_agg_matrix([(0, 1), (0, 2)], 3, dtype=object)
        assert M[0, 1] == Fraction(1, 2)
        assert M[1, 0] == Fraction(1, 1)
        assert M[2, 2] == 0


class TestSoftmax:
    def test_log2_row(self):
        out = L.softmax_rows(Tensor(np.array([[0.0, math.log(2.0)]])))
        np.testing.assert_allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-12)

    def test_constant_row_uniform(self):
        out = L.softmax_rows(Tensor(np.full((2, 5), 3.7)))
        np.testing.assert_allclose(out.data, 0.2, atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 6))
        a = L.softmax_rows(Tensor(x)).data
        b = L.softmax_rows(Tensor(x + 123.456)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_large_entries_finite(self):
        x = np.array([[1e4, 0.0, -1e4], [5e3, 5e3, 5e3]])
        out = L.softmax_rows(Tensor(x)).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


class TestTransformer:
    def make(self, seed=0, d=128, ff=16):
        rng = np.random.default_rng(seed)
        layers = [L.make_transformer_layer(rng, d, ff, np.float64, f"tr{i}")
                  for i in range(2)]
        return rng, layers

    def test_single_token(self):
        rng, layers = self.make()
        x = rng.standard_normal((1, 128))
        out = L.transformer_encoder_forward(Tensor(x), layers)
        assert out.data.shape == (1, 128)
        out2 = L.transformer_encoder_forward(Tensor(x.copy()), layers)
        assert (out.data == out2.data).all()

    @pytest.mark.parametrize("t", [1, 2, 3, 4])
    def test_shape_preserved(self, t):
        rng, layers = self.make()
        x = rng.standard_normal((3, t, 128))
        out = L.transformer_encoder_forward(Tensor(x), layers)
        assert out.data.shape == (3, t, 128)

    def test_matches_numpy_oracle_and_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        layer = L.make_transformer_layer(rng, 16, 8, np.float64, "tr")
        for _ in range(10):
            x = rng.standard_normal((2, 3, 16))
            got = L.transformer_layer_forward(Tensor(x), layer, n_heads=4).data
            want, attn = np_transformer_layer(x, layer, n_heads=4)
            np.testing.assert_allclose(got, want, atol=1e-12)
            np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-12)


class TestBackwardChecks:
    def test_every_layer_passes_finite_differences(self):
        results = run_gradient_checks(instances=5, dtype=np.float64, seed=1)
        for name, err in results.items():
            assert err < 1e-6, f"{name}: {err}"

    def test_float32_mode(self):
        results = run_gradient_checks(instances=2, dtype=np.float32, seed=2,
                                      layer_names=CORE_LAYER_TYPES)
        for name, err in results.items():
            assert err < 1e-3, f"{name}: {err}"


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        opt = Adam([p], lr=1e-3)
        p.grad = np.zeros(2, dtype=np.float32)
        before = p.data.copy()
        opt.step()
        assert (p.data == before).all()

    def test_first_step_is_signed_lr(self):
        rng = np.random.default_rng(0)
        p = Tensor(rng.standard_normal(8).astype(np.float32), requires_grad=True)
        g = rng.standard_normal(8).astype(np.float32) * 10
        opt = Adam([p], lr=1e-3)
        before = p.data.copy()
        p.grad = g
        opt.step()
        np.testing.assert_allclose(p.data - before, -1e-3 * np.sign(g), rtol=1e-3)

    def test_zero_lr_no_change(self):
        p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        opt = Adam([p])
        p.grad = np.array([3.0, -4.0], dtype=np.float32)
        before = p.data.copy()
        opt.step(lr=0.0)
        assert (p.data == before).all()

    def test_moments_decay(self):
        p = Tensor(np.array([0.0], dtype=np.float32), requires_grad=True)
        opt = Adam([p], lr=0.0)
        p.grad = np.array([1.0], dtype=np.float32)
        opt.step()
        m1 = opt.m[0].copy()
        p.grad = np.array([0.0], dtype=np.float32)
        opt.step()
        assert abs(opt.m[0][0]) < abs(m1[0])
