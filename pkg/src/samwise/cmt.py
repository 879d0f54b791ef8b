"""Cross-modal temporal adapter.

Per level: both streams are down-projected to a shared bottleneck. The visual
stream goes through selective spatio-temporal attention (HSA) inside
non-overlapping ``T x P x P`` sub-volumes, then is modulated by attention over
the caption (VTA). The text stream is modulated by attention over the
clip-averaged visual map (TVA). Each stream then passes gelu, an up-projection
and a residual add. Up-projections start at zero, so a fresh adapter is the
identity.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .layers import Attention
from .numeric import gelu, sinusoidal_pe_1d, sinusoidal_pe_2d


def decompose(x: torch.Tensor, p: int) -> torch.Tensor:
    """(B, T, H, W, C) -> (B, N, T*P*P, C); tokens ordered (t, i, j) inside a sub-volume."""
    b, t, h, w, c = x.shape
    if p <= 0 or h % p or w % p:
        raise ValueError(f"patch size {p} does not divide a {h}x{w} map")
    x = x.reshape(b, t, h // p, p, w // p, p, c).permute(0, 2, 4, 1, 3, 5, 6)
    return x.reshape(b, (h // p) * (w // p), t * p * p, c)


def recompose(grid: torch.Tensor, t: int, h: int, w: int, p: int) -> torch.Tensor:
    b, n, m, c = grid.shape
    if n != (h // p) * (w // p) or m != t * p * p:
        raise ValueError("grid does not match the requested volume")
    x = grid.reshape(b, h // p, w // p, t, p, p, c).permute(0, 3, 1, 4, 2, 5, 6)
    return x.reshape(b, t, h, w, c)


def subvolume_pe(t: int, p: int, d: int) -> torch.Tensor:
    """e[i, j] + e[t] for every token of a sub-volume, shape (T*P*P, d)."""
    tt, ii, jj = np.meshgrid(np.arange(t), np.arange(p), np.arange(p), indexing="ij")
    return sinusoidal_pe_2d(ii.ravel(), jj.ravel(), d) + sinusoidal_pe_1d(tt.ravel(), d)


def pair_counts(h: int, w: int, t: int, p: int) -> tuple[int, int]:
    """Query-key pairs scored by HSA and by dense attention over the clip."""
    if p <= 0 or h % p or w % p:
        raise ValueError(f"patch size {p} does not divide a {h}x{w} map")
    n = (h // p) * (w // p)
    m = p * p * t
    return n * m * m, (t * h * w) ** 2


class HSA(nn.Module):
    def __init__(self, width: int, heads: int = 1):
        super().__init__()
        self.width = width
        self.attn = Attention(width, heads)

    def forward(self, x: torch.Tensor, p: int) -> torch.Tensor:
        b, t, h, w, c = x.shape
        if c != self.width:
            raise ValueError(f"HSA expects width {self.width}, got {c}")
        g = decompose(x, p) + subvolume_pe(t, p, c)
        return recompose(self.attn(g, g, g), t, h, w, p)


class CrossGate(nn.Module):
    """x * CA(x, ctx): queries from x, keys and values from ctx."""

    def __init__(self, width: int, heads: int = 1):
        super().__init__()
        self.attn = Attention(width, heads)

    def forward(self, x, ctx):
        if ctx.shape[-2] == 0:
            raise ValueError("cross-attention context is empty")
        return x * self.attn(x, ctx, ctx)


def vta(gate: CrossGate, f: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
    """Per-frame visual-to-text modulation. f (B, T, H, W, b), e (B, L, b)."""
    b, t, h, w, c = f.shape
    out = gate(f.reshape(b, t, h * w, c), e.unsqueeze(1))
    return out.reshape(b, t, h, w, c)


def tva(gate: CrossGate, e: torch.Tensor, f_down: torch.Tensor) -> torch.Tensor:
    """Text-to-visual modulation against the clip-mean map. f_down (B, T, H, W, b)."""
    b, t, h, w, c = f_down.shape
    avg = f_down.mean(dim=1).reshape(b, h * w, c)
    return gate(e, avg)


class CmtAdapter(nn.Module):
    def __init__(self, c_vis: int, c_txt: int, bottleneck: int, patch: int, heads: int = 1,
                 use_hsa: bool = True, use_vta: bool = True, use_tva: bool = True):
        super().__init__()
        self.patch = patch
        self.use_hsa, self.use_vta, self.use_tva = use_hsa, use_vta, use_tva
        self.down_v = nn.Linear(c_vis, bottleneck, bias=False)
        self.up_v = nn.Linear(bottleneck, c_vis, bias=False)
        self.down_t = nn.Linear(c_txt, bottleneck, bias=False)
        self.up_t = nn.Linear(bottleneck, c_txt, bias=False)
        self.hsa = HSA(bottleneck, heads)
        self.vta = CrossGate(bottleneck, heads)
        self.tva = CrossGate(bottleneck, heads)

    def zero_up_(self):
        with torch.no_grad():
            self.up_v.weight.zero_()
            self.up_t.weight.zero_()

    def forward(self, f: torch.Tensor, e: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        fd = self.down_v(f)
        ed = self.down_t(e)
        v = self.hsa(fd, self.patch) if self.use_hsa else fd
        if self.use_vta:
            v = vta(self.vta, v, ed)
        s = tva(self.tva, ed, fd) if self.use_tva else ed
        return f + self.up_v(gelu(v)), e + self.up_t(gelu(s))


def dense_attention(hsa: HSA, x: torch.Tensor) -> torch.Tensor:
    """Unrestricted spatio-temporal self-attention with HSA's weights, for comparison."""
    b, t, h, w, c = x.shape
    pe = sinusoidal_pe_2d(*np.meshgrid(np.arange(h), np.arange(w), indexing="ij"), c).reshape(1, h * w, c)
    pe = (pe + sinusoidal_pe_1d(range(t), c)[:, None]).reshape(t * h * w, c)
    tokens = x.reshape(b, t * h * w, c) + pe
    return hsa.attn(tokens, tokens, tokens).reshape(b, t, h, w, c)


def bench_hsa(h: int, w: int, t: int, p: int, width: int = 8, repeats: int = 5, seed: int = 0) -> dict:
    """Pair counts and median wall times of HSA against dense attention on one random clip."""
    import time

    from .layers import seeded_init_
    from .numeric import SeededRng

    hsa = HSA(width)
    seeded_init_(hsa, seed)
    x = torch.from_numpy(SeededRng(seed).normal((1, t, h, w, width)))
    pairs_hsa, pairs_dense = pair_counts(h, w, t, p)

    def timed(fn):
        times = []
        with torch.no_grad():
            fn()
            for _ in range(repeats):
                start = time.perf_counter()
                fn()
                times.append(time.perf_counter() - start)
        return float(np.median(times))

    t_hsa = timed(lambda: hsa(x, p))
    t_dense = timed(lambda: dense_attention(hsa, x))
    return {"H": h, "W": w, "T": t, "P": p, "pairs_hsa": pairs_hsa, "pairs_dense": pairs_dense,
            "pair_ratio": pairs_hsa / pairs_dense, "time_hsa": t_hsa, "time_dense": t_dense,
            "time_ratio": t_hsa / t_dense}
