import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import finite_difference_check
from ctpnet.block import Block, Linear, efficient_attention, prl_forward, trl_forward
from ctpnet.errors import ConfigInvalid, ShapeMismatch
from ctpnet.tensor import Parameter, Tensor


def block_oracle(block, z):
    return np.array([oracles.block(tok.tolist(), oracles.block_weights(block), block.heads) for tok in z])


class TestEfficientAttention:
    def test_scalar(self):
        assert efficient_attention(Tensor([[2.0]]), Tensor([[3.0]]), Tensor([[4.0]])).data.tolist() == [[24.0]]

    def test_zero_values(self, rng):
        q, k = rng.normal(size=(2, 6, 4))
        assert np.all(efficient_attention(q, k, np.zeros((6, 4))).data == 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_associativity(self, n, d, seed):
        q, k, v = np.random.default_rng(seed).normal(size=(3, n, d))
        left = np.array(oracles.efficient_attention_left(q.tolist(), k.tolist(), v.tolist()))
        assert np.max(np.abs(efficient_attention(q, k, v).data - left)) < 1e-9

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            efficient_attention(rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=(3, 4)))


class TestBlock:
    def test_shape(self, rng):
        assert Block(16, 4, rng=rng)(rng.normal(size=(7, 24, 16))).shape == (7, 24, 16)

    def test_degenerate_weights(self, rng):
        block = Block(4, 2, rng=rng)
        for p in (block.w_q, block.w_k, block.w_v, block.w_o, block.ffn_w1, block.ffn_b1, block.ffn_w2, block.ffn_b2):
            p.data[:] = 0
        block.ln1_scale.data[:] = rng.normal(size=4)
        block.ln1_shift.data[:] = rng.normal(size=4)
        z = rng.normal(size=(5, 4))

        def ln(x, scale, shift):
            mu = x.mean(-1, keepdims=True)
            return (x - mu) / np.sqrt(x.var(-1, keepdims=True) + 1e-5) * scale + shift

        expected = ln(ln(z, block.ln1_scale.data, block.ln1_shift.data), 1.0, 0.0)
        np.testing.assert_allclose(block(z).data, expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_straight_line_oracle(self, seed):
        gen = np.random.default_rng(seed)
        block = Block(4, 2, rng=gen)
        block.ln1_scale.data[:] = gen.normal(size=4)
        block.ln2_shift.data[:] = gen.normal(size=4)
        z = gen.normal(size=(3, 2, 4))
        np.testing.assert_allclose(block(z).data, block_oracle(block, z), rtol=0, atol=1e-10)

    def test_token_permutation_equivariance(self, rng):
        block = Block(8, 2, rng=rng)
        z = rng.normal(size=(6, 8))
        perm = rng.permutation(6)
        np.testing.assert_allclose(block(z[perm]).data, block(z).data[perm], atol=1e-12)

    def test_heads_must_divide(self):
        with pytest.raises(ConfigInvalid):
            Block(6, 4)

    def test_width_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            Block(4, 2, rng=rng)(rng.normal(size=(3, 5)))

    def test_hidden_default(self, rng):
        assert Block(6, 3, rng=rng).ffn_w1.shape == (6, 12)


class TestTrlPrl:
    def test_trl_is_block(self, rng):
        block = Block(32, 4, rng=rng)
        z = rng.normal(size=(14, 24, 32))
        out = trl_forward(block, z)
        assert out.shape == (14, 24, 32)
        assert np.array_equal(out.data, block(z).data)

    def test_single_token(self, rng):
        out = trl_forward(Block(8, 2, rng=rng), rng.normal(size=(3, 1, 8)))
        assert out.shape == (3, 1, 8) and np.all(np.isfinite(out.data))

    def test_prl_shape_and_width(self, rng):
        block = Block(24, 4, rng=rng)
        assert block.w_q.shape == (24, 24)
        assert prl_forward(block, rng.normal(size=(14, 24, 32))).shape == (14, 24, 32)

    def test_prl_oracle(self, rng):
        block = Block(2, 2, rng=rng)
        u = rng.normal(size=(2, 2, 4))
        expected = np.swapaxes(block_oracle(block, np.swapaxes(u, -1, -2)), -1, -2)
        np.testing.assert_allclose(prl_forward(block, u).data, expected, rtol=0, atol=1e-10)

    def test_stacked(self, rng):
        blocks = [Block(4, 2, rng=rng), Block(4, 2, rng=rng)]
        z = rng.normal(size=(2, 3, 4))
        np.testing.assert_array_equal(trl_forward(blocks, z).data, blocks[1](blocks[0](z)).data)


class TestLinear:
    def test_identity(self):
        enc = Linear(2, 2)
        enc.weight.data[:] = np.eye(2)
        enc.bias.data[:] = 0
        x = np.array([[1.0, -2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(enc(x).data, x)

    def test_shape(self, rng):
        assert Linear(4, 16, rng=rng)(rng.normal(size=(7, 24, 4))).shape == (7, 24, 16)

    def test_commutes_with_subsequence_permutation(self, rng):
        enc = Linear(4, 6, rng=rng)
        x = rng.normal(size=(3, 8, 4))
        perm = rng.permutation(8)
        np.testing.assert_array_equal(enc(x[:, perm]).data, enc(x).data[:, perm])

    def test_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            Linear(4, 2, rng=rng)(np.zeros((2, 3)))


@pytest.mark.parametrize("orientation", ["trl", "prl"])
def test_gradients(orientation):
    gen = np.random.default_rng(11)
    block = Block(4, 2, rng=gen)
    z = Parameter(gen.normal(size=(2, 3, 4) if orientation == "trl" else (2, 4, 3)), "z")
    target = gen.normal(size=z.shape)
    fn = trl_forward if orientation == "trl" else prl_forward
    errors = finite_difference_check(lambda: (fn(block, z) - target).abs().sum(), block.parameters() + [z])
    assert max(errors.values()) < 1e-4, errors


def test_linear_gradients(rng):
    lin = Linear(3, 2, rng=rng)
    x = Parameter(rng.normal(size=(4, 3)), "x")
    errors = finite_difference_check(lambda: (lin(x) ** 2).sum(), lin.parameters() + [x])
    assert max(errors.values()) < 1e-4, errors
