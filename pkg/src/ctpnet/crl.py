"""Channel-wise representation learning.

Multi-head attention across channels whose queries come from a learnable
temporal-query bank ``theta_tq`` of width ``W``. The bank is indexed by the
absolute window start ``t`` modulo ``W``, so windows one period apart share
the same queries. Keys and values are linear projections of the look-back.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigInvalid, ShapeMismatch
from .module import Module, uniform_weight
from .tensor import Parameter, Tensor, as_tensor, matmul, permute, reshape, softmax_last, transpose_last_two


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``(..., n, F) -> (..., heads, n, F // heads)``, heads cut from the feature axis."""
    *lead, n, F = x.shape
    r = len(lead)
    y = reshape(x, (*lead, n, heads, F // heads))
    return permute(y, list(range(r)) + [r + 1, r, r + 2])


def merge_heads(x: Tensor) -> Tensor:
    """Inverse of :func:`split_heads`."""
    *lead, heads, n, d = x.shape
    r = len(lead)
    y = permute(x, list(range(r)) + [r + 1, r, r + 2])
    return reshape(y, (*lead, n, heads * d))


def query_indices(t, L_in: int, W: int) -> np.ndarray:
    """Column indices into the query bank: ``(t + j) mod W`` for ``j < L_in``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    return (t[:, None] + np.arange(L_in)[None, :]) % W


class CRL(Module):
    def __init__(self, n_channels: int, L_in: int, W: int, heads: int = 4, rng=None):
        if min(n_channels, L_in, W, heads) < 1:
            raise ConfigInvalid("CRL sizes must be positive")
        if L_in % heads:
            raise ConfigInvalid(f"CRL heads {heads} must divide L_in {L_in}")
        rng = np.random.default_rng() if rng is None else rng
        self.n_channels = n_channels
        self.L_in = L_in
        self.W = W
        self.heads = heads
        self.theta_tq = Parameter(rng.normal(0.0, 0.02, size=(n_channels, W)))
        self.w_k1 = Parameter(uniform_weight(rng, (L_in, L_in), L_in))
        self.w_v1 = Parameter(uniform_weight(rng, (L_in, L_in), L_in))
        self.w_o = Parameter(uniform_weight(rng, (L_in, L_in), L_in))

    def select_query(self, t) -> Tensor:
        """Query block ``Q[:, j] = theta_tq[:, (t + j) mod W]``.

        Scalar ``t`` gives ``(N_c, L_in)``; a sequence of ``B`` starts gives
        ``(B, N_c, L_in)``.
        """
        idx = query_indices(t, self.L_in, self.W)
        q = permute(self.theta_tq[:, idx], (1, 0, 2))
        if np.ndim(t) == 0:
            return reshape(q, (self.n_channels, self.L_in))
        return q

    def forward(self, x, t) -> Tensor:
        """Inter-channel representation, same shape as ``x``.

        ``x`` is ``(N_c, L_in)`` with scalar ``t`` or ``(B, N_c, L_in)`` with
        one start index per batch element.
        """
        x = as_tensor(x)
        single = x.ndim == 2
        if single:
            x = reshape(x, (1,) + x.shape)
            t = [t]
        if x.shape[1:] != (self.n_channels, self.L_in):
            raise ShapeMismatch(
                f"CRL expects (B, {self.n_channels}, {self.L_in}), got {x.shape}"
            )
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        if t.size != x.shape[0]:
            raise ShapeMismatch(f"{t.size} start indices for a batch of {x.shape[0]}")
        B = x.shape[0]

        q = split_heads(self.select_query(t), self.heads)
        k = split_heads(matmul(x, self.w_k1), self.heads)
        v = split_heads(matmul(x, self.w_v1), self.heads)
        # scaled by the full look-back length, not the head width
        scores = matmul(q, transpose_last_two(k)) * (1.0 / np.sqrt(self.L_in))
        heads = matmul(softmax_last(scores), v)
        out = matmul(merge_heads(heads), self.w_o)
        if single:
            return reshape(out, (self.n_channels, self.L_in))
        return reshape(out, (B, self.n_channels, self.L_in))

    __call__ = forward
