"""Efficient-attention transformer block and the linear encoder/decoder.

The same :class:`Block` serves two roles. Over tokens = subsequences and
features = hidden width it learns intra-subsequence (trend) structure; fed the
transposed representation, tokens = hidden units and features = subsequences,
it learns inter-subsequence (periodic) structure.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .crl import merge_heads, split_heads
from .errors import ConfigInvalid, ShapeMismatch
from .module import Module, uniform_weight
from .tensor import (
    Parameter,
    Tensor,
    as_tensor,
    gelu,
    layer_norm_last,
    matmul,
    transpose_last_two,
)


def efficient_attention(q, k, v) -> Tensor:
    """Softmax-free attention ``(q / sqrt(d)) @ ((k^T / sqrt(n)) @ v)``.

    The ``d x d`` context ``k^T v`` is formed first, so the cost is linear in
    the token count ``n``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim < 2 or q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise ShapeMismatch(f"efficient attention shapes q{q.shape} k{k.shape} v{v.shape}")
    n, d = q.shape[-2:]
    context = matmul(transpose_last_two(k) * (1.0 / np.sqrt(n)), v)
    return matmul(q * (1.0 / np.sqrt(d)), context)


class Linear(Module):
    """Affine map on the last axis, shared by every leading position."""

    def __init__(self, n_in: int, n_out: int, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.weight = Parameter(uniform_weight(rng, (n_in, n_out), n_in))
        self.bias = Parameter(uniform_weight(rng, (n_out,), n_in))

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeMismatch(f"linear expects last axis {self.weight.shape[0]}, got {x.shape}")
        return matmul(x, self.weight) + self.bias

    __call__ = forward


class Block(Module):
    """Transformer block with multi-head efficient attention.

    ``LN2(I' + FFN(I'))`` with ``I' = LN1(z + MHA(z))``; heads split the
    feature axis after the Q/K/V projections.
    """

    def __init__(self, width: int, heads: int = 4, hidden: int | None = None, rng=None, eps: float = 1e-5):
        if width < 1 or heads < 1:
            raise ConfigInvalid("block width and heads must be positive")
        if width % heads:
            raise ConfigInvalid(f"block heads {heads} must divide feature width {width}")
        rng = np.random.default_rng() if rng is None else rng
        hidden = 2 * width if hidden is None else hidden
        self.width = width
        self.heads = heads
        self.eps = eps
        self.w_q = Parameter(uniform_weight(rng, (width, width), width))
        self.w_k = Parameter(uniform_weight(rng, (width, width), width))
        self.w_v = Parameter(uniform_weight(rng, (width, width), width))
        self.w_o = Parameter(uniform_weight(rng, (width, width), width))
        self.ffn_w1 = Parameter(uniform_weight(rng, (width, hidden), width))
        self.ffn_b1 = Parameter(uniform_weight(rng, (hidden,), width))
        self.ffn_w2 = Parameter(uniform_weight(rng, (hidden, width), hidden))
        self.ffn_b2 = Parameter(uniform_weight(rng, (width,), hidden))
        self.ln1_scale = Parameter(np.ones(width))
        self.ln1_shift = Parameter(np.zeros(width))
        self.ln2_scale = Parameter(np.ones(width))
        self.ln2_shift = Parameter(np.zeros(width))

    def attention(self, z: Tensor) -> Tensor:
        q = split_heads(matmul(z, self.w_q), self.heads)
        k = split_heads(matmul(z, self.w_k), self.heads)
        v = split_heads(matmul(z, self.w_v), self.heads)
        return matmul(merge_heads(efficient_attention(q, k, v)), self.w_o)

    def forward(self, z) -> Tensor:
        z = as_tensor(z)
        if z.ndim < 2 or z.shape[-1] != self.width:
            raise ShapeMismatch(f"block expects (..., tokens, {self.width}), got {z.shape}")
        mid = layer_norm_last(z + self.attention(z), self.ln1_scale, self.ln1_shift, self.eps)
        ffn = matmul(gelu(matmul(mid, self.ffn_w1) + self.ffn_b1), self.ffn_w2) + self.ffn_b2
        return layer_norm_last(mid + ffn, self.ln2_scale, self.ln2_shift, self.eps)

    __call__ = forward


def trl_forward(blocks: Block | Sequence[Block], z) -> Tensor:
    """Intra-subsequence pass: tokens along the subsequence axis ``P``, features ``D``."""
    blocks = [blocks] if isinstance(blocks, Block) else blocks
    out = as_tensor(z)
    for block in blocks:
        out = block(out)
    return out


def prl_forward(blocks: Block | Sequence[Block], u) -> Tensor:
    """Inter-subsequence pass: transpose ``(..., P, D)``, run blocks of width ``P``, transpose back."""
    u = as_tensor(u)
    if u.ndim < 2:
        raise ShapeMismatch(f"PRL input needs (..., P, D), got {u.shape}")
    return transpose_last_two(trl_forward(blocks, transpose_last_two(u)))
