"""The full forecaster.

Pipeline per window: instance normalisation, channel attention residual,
period downsampling, linear encoder, trend block with residual, periodic block
on the transposed representation, linear decoder, de-downsampling and
de-normalisation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .block import Block, Linear, prl_forward, trl_forward
from .crl import CRL
from .data import de_downsample, downsample, valid_periods
from .errors import ConfigInvalid, ShapeMismatch
from .module import Module
from .tensor import Tensor, as_tensor, no_grad, reshape


@dataclass
class CTPNetConfig:
    L_in: int = 96
    L_out: int = 96
    P: int = 24
    W: int = 168
    D: int = 128
    H_c: int = 4
    H_b: int = 4
    # heads of the periodic block (feature width P); None -> gcd(H_b, P)
    H_p: int | None = None
    n_channels: int = 7
    ablate_i1: bool = False
    ablate_i2: bool = False
    ablate_i3: bool = False
    blocks: int = 1

    @property
    def N_pin(self) -> int:
        return self.L_in // self.P

    @property
    def N_pout(self) -> int:
        return self.L_out // self.P

    @property
    def prl_heads(self) -> int:
        return self.H_p if self.H_p is not None else math.gcd(self.H_b, self.P)

    def validate(self) -> "CTPNetConfig":
        for name in ("L_in", "L_out", "P", "W", "D", "H_c", "H_b", "n_channels", "blocks"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigInvalid(f"{name} must be a positive integer, got {value!r}")
        if self.H_p is not None and self.H_p < 1:
            raise ConfigInvalid(f"H_p must be a positive integer, got {self.H_p!r}")
        if self.L_in % self.P or self.L_out % self.P:
            near = valid_periods(self.L_in, self.L_out, near=self.P)[:3]
            raise ConfigInvalid(
                f"P={self.P} must divide L_in={self.L_in} and L_out={self.L_out}; "
                f"nearest valid P: {', '.join(map(str, near))}"
            )
        if self.L_in % self.H_c:
            raise ConfigInvalid(f"H_c={self.H_c} must divide L_in={self.L_in}")
        if self.D % self.H_b:
            raise ConfigInvalid(f"H_b={self.H_b} must divide D={self.D}")
        if self.P % self.prl_heads:
            raise ConfigInvalid(f"periodic-block heads {self.prl_heads} must divide P={self.P}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "CTPNetConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


class InstanceStats(NamedTuple):
    mean: np.ndarray
    std: np.ndarray


def instance_norm(x: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, InstanceStats]:
    """Standardise every (instance, channel) slice over the time axis.

    The std is floored at ``eps`` rather than smoothed by it, which keeps the
    transform exactly equivariant to ``a * x + b`` for non-degenerate slices
    and maps constant slices to zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = np.maximum(x.std(axis=-1, keepdims=True), eps)
    return (x - mean) / std, InstanceStats(mean, std)


def instance_denorm(y, stats: InstanceStats):
    return y * stats.std + stats.mean


class CTPNet(Module):
    def __init__(self, config: CTPNetConfig, seed: int | None = 0):
        self.config = config.validate()
        c = config
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
        self.crl = None if c.ablate_i1 else CRL(c.n_channels, c.L_in, c.W, c.H_c, rng=rngs[0])
        self.encoder = Linear(c.N_pin, c.D, rng=rngs[1])
        self.trl = [] if c.ablate_i2 else [Block(c.D, c.H_b, rng=rngs[2]) for _ in range(c.blocks)]
        self.prl = [] if c.ablate_i3 else [Block(c.P, c.prl_heads, rng=rngs[3]) for _ in range(c.blocks)]
        self.decoder = Linear(c.D, c.N_pout, rng=rngs[4])
        list(self.named_parameters())  # stamp dotted names on parameters

    def forward(self, x, t) -> Tensor:
        """Forecast ``(B, N_c, L_out)`` from look-back ``(B, N_c, L_in)``.

        ``t`` holds each window's absolute start index (used by the temporal
        queries). A single ``(N_c, L_in)`` window with scalar ``t`` is accepted.
        """
        c = self.config
        x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
            t = [t]
        if x.ndim != 3 or x.shape[1:] != (c.n_channels, c.L_in):
            raise ShapeMismatch(f"model expects (B, {c.n_channels}, {c.L_in}), got {x.shape}")
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        if t.size != x.shape[0]:
            raise ShapeMismatch(f"{t.size} start indices for a batch of {x.shape[0]}")

        xn, stats = instance_norm(x)
        out = instance_denorm(self.core(xn, t), stats)
        return reshape(out, (c.n_channels, c.L_out)) if single else out

    __call__ = forward

    def core(self, xn, t) -> Tensor:
        """The network between instance normalisation and its inverse.

        Maps normalised look-backs ``(B, N_c, L_in)`` to normalised forecasts
        ``(B, N_c, L_out)``.
        """
        c = self.config
        h = as_tensor(xn)
        B = h.shape[0]
        if self.crl is not None:
            h = h + self.crl(h, t)
        z = self.encoder(downsample(h, c.P))
        z = reshape(z, (B * c.n_channels, c.P, c.D))
        u = z + trl_forward(self.trl, z) if self.trl else z
        i3 = prl_forward(self.prl, u) if self.prl else u
        y = reshape(self.decoder(i3), (B, c.n_channels, c.P, c.N_pout))
        return de_downsample(y, c.P)

    def predict(self, x, t) -> np.ndarray:
        with no_grad():
            return self.forward(x, t).data

    def describe(self) -> dict:
        parts: dict[str, int] = {}
        for name, p in self.named_parameters():
            top = name.split(".")[0]
            parts[top] = parts.get(top, 0) + p.size
        return {
            "config": self.config.to_dict(),
            "param_count": self.param_count(),
            "components": parts,
            "parameters": {name: list(p.shape) for name, p in self.named_parameters()},
        }


def param_count(model: CTPNet) -> int:
    return model.param_count()


def expected_param_count(config: CTPNetConfig) -> int:
    """Closed-form parameter count from declared shapes."""
    c = config

    def block(F: int) -> int:
        # four F x F projections, FFN F -> 2F -> F with biases, two LayerNorms
        return 4 * F * F + (F * 2 * F + 2 * F) + (2 * F * F + F) + 4 * F

    total = c.N_pin * c.D + c.D + c.D * c.N_pout + c.N_pout
    if not c.ablate_i1:
        total += c.n_channels * c.W + 3 * c.L_in * c.L_in
    if not c.ablate_i2:
        total += c.blocks * block(c.D)
    if not c.ablate_i3:
        total += c.blocks * block(c.P)
    return total
