"""Small nn building blocks shared by every module, plus seeded init."""

from __future__ import annotations

import math

import torch
from torch import nn

from .numeric import SeededRng, gelu, scaled_dot_attention


class Attention(nn.Module):
    """Multi-head attention with separate query/key/value/output projections."""

    def __init__(self, dim: int, heads: int = 1, kv_dim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        kv_dim = kv_dim or dim
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(kv_dim, dim)
        self.v = nn.Linear(kv_dim, dim)
        self.o = nn.Linear(dim, dim)

    def _split(self, x):
        if self.heads == 1:
            return x
        *lead, n, d = x.shape
        return x.reshape(*lead, n, self.heads, d // self.heads).transpose(-2, -3)

    def _merge(self, x):
        if self.heads == 1:
            return x
        *lead, h, n, d = x.shape
        return x.transpose(-2, -3).reshape(*lead, n, h * d)

    def forward(self, q_in, k_in, v_in):
        q, k, v = self._split(self.q(q_in)), self._split(self.k(k_in)), self._split(self.v(v_in))
        return self.o(self._merge(scaled_dot_attention(q, k, v)))


class MLP(nn.Module):
    def __init__(self, dims: list[int]):
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = gelu(x)
        return x


def seeded_init_(module: nn.Module, seed: int, prefix: str = "") -> None:
    """Re-initialise every parameter from a SplitMix stream keyed by its name.

    Weights get N(0, 1/fan_in); linear biases U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    LayerNorm scale one and shift zero. Keys make the result independent of
    construction order.
    """
    # Nonzero linear biases matter: with zero biases, flat black regions give
    # all-zero vectors into stacked LayerNorms, whose gain 1/sqrt(eps) compounds
    # per level.
    root = SeededRng(seed)
    linear_bias = {prefix + f"{m}.bias" if m else prefix + "bias": mod.in_features
                   for m, mod in module.named_modules() if isinstance(mod, nn.Linear)}
    with torch.no_grad():
        for name, p in module.named_parameters():
            full = prefix + name
            leaf = name.rsplit(".", 1)[-1]
            if full in linear_bias:
                bound = 1.0 / math.sqrt(linear_bias[full])
                p.copy_(torch.from_numpy(root.child(full).uniform(tuple(p.shape), -bound, bound)))
            elif leaf == "bias":
                p.zero_()
            elif leaf == "weight" and p.ndim == 1:
                p.fill_(1.0)
            else:
                fan_in = p.shape[-1] if p.ndim >= 2 else p.numel()
                values = root.child(full).normal(tuple(p.shape)) / math.sqrt(fan_in)
                p.copy_(torch.from_numpy(values))


def count_params(params) -> int:
    return sum(p.numel() for p in params)
