"""Toy promptable video segmenter: memory attention, two-way mask decoder,
memory encoder and a bounded FIFO memory bank.

Feature maps here are flattened finest-level maps ``(B, h*w, d)``; ``pe`` is the
fixed 2-D sinusoidal encoding of that grid.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layers import MLP, Attention
from .numeric import grid_pe, sinusoidal_pe_1d, sinusoidal_pe_2d


@dataclass
class DecoderOutput:
    mask_token: torch.Tensor  # (B, d)
    logits: torch.Tensor  # (B, H, W) at input resolution

    @property
    def mask(self) -> torch.Tensor:
        return self.logits > 0


@dataclass
class MemoryEntry:
    features: torch.Tensor  # (B, h*w, d)
    frame: int


class MemoryBank:
    """Bounded FIFO of encoded past predictions for one video."""

    def __init__(self, capacity: int = 4):
        if capacity < 1:
            raise ValueError("memory bank capacity must be positive")
        self.capacity = capacity
        self.entries: deque[MemoryEntry] = deque()
        self.video_id = None

    def __len__(self):
        return len(self.entries)

    def clear(self, video_id=None):
        self.entries.clear()
        self.video_id = video_id

    def push(self, entry: MemoryEntry):
        if self.entries and entry.frame <= self.entries[-1].frame:
            raise ValueError("memory frames must be strictly increasing")
        self.entries.append(entry)
        while len(self.entries) > self.capacity:
            self.entries.popleft()

    @property
    def frames(self) -> list[int]:
        return [e.frame for e in self.entries]

    def tensors(self) -> list[torch.Tensor]:
        """Oldest first."""
        return [e.features for e in self.entries]


class PointPrompt(nn.Module):
    """Promptable-segmentation pretraining prompt: a point (or no point) mapped into prompt space."""

    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.proj = nn.Linear(d, d)
        self.not_a_point = nn.Parameter(torch.zeros(d))

    def forward(self, points: torch.Tensor | None, batch: int | None = None) -> torch.Tensor:
        """points: (B, 2) row/col in feature-grid units, or None for the no-point embedding."""
        if points is None:
            return self.not_a_point.expand(batch, self.d)
        enc = sinusoidal_pe_2d(points[:, 0].tolist(), points[:, 1].tolist(), self.d)
        return self.proj(enc)


class MemoryAttention(nn.Module):
    def __init__(self, d: int, heads: int = 1):
        super().__init__()
        self.d = d
        self.attn = Attention(d, heads)

    def forward(self, f: torch.Tensor, memories: list[torch.Tensor], pe: torch.Tensor) -> torch.Tensor:
        if f.shape[-2:] != pe.shape:
            raise ValueError(f"memory attention expects features of shape (*, {pe.shape[0]}, {pe.shape[1]})")
        if not memories:
            return f
        n = len(memories)
        rank_pe = sinusoidal_pe_1d(range(n), self.d)
        # newest entry has recency rank 0
        mem = torch.cat([m + rank_pe[n - 1 - i] for i, m in enumerate(memories)], dim=-2)
        keys = mem + pe.repeat(n, 1)
        return f + self.attn(f + pe, keys, mem)


class TwoWayRound(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.t2f = Attention(d, heads)
        self.norm1 = nn.LayerNorm(d)
        self.mlp = MLP([d, 2 * d, d])
        self.norm2 = nn.LayerNorm(d)
        self.f2t = Attention(d, heads)
        self.norm3 = nn.LayerNorm(d)

    def forward(self, tokens, feats, pe, token_pe):
        # the original prompt tokens act as the tokens' positional encoding
        tokens = self.norm1(tokens + self.t2f(tokens + token_pe, feats + pe, feats))
        tokens = self.norm2(tokens + self.mlp(tokens))
        feats = self.norm3(feats + self.f2t(feats + pe, tokens + token_pe, tokens))
        return tokens, feats


class MaskDecoder(nn.Module):
    """Tokens [prompt, mask] exchange two rounds of attention with the features;
    the mask token then scores every feature cell by a dot product, and the
    score map is upsampled x2 to input resolution."""

    def __init__(self, d: int, heads: int = 2, rounds: int = 2):
        super().__init__()
        self.d = d
        self.mask_token = nn.Parameter(torch.zeros(d))
        self.rounds = nn.ModuleList(TwoWayRound(d, heads) for _ in range(rounds))
        self.hyper = MLP([d, d, d])

    @property
    def token_to_feature(self) -> Attention:
        return self.rounds[0].t2f

    def forward(self, feats: torch.Tensor, rho: torch.Tensor, pe: torch.Tensor, grid: tuple[int, int]) -> DecoderOutput:
        if rho.shape[-1] != self.d:
            raise ValueError(f"prompt width {rho.shape[-1]} != decoder width {self.d}")
        b = feats.shape[0]
        tokens = torch.stack([rho, self.mask_token.expand(b, self.d)], dim=1)
        token_pe = tokens
        for rnd in self.rounds:
            tokens, feats = rnd(tokens, feats, pe, token_pe)
        tau = tokens[:, 1]
        low = (feats @ self.hyper(tau).unsqueeze(-1)).reshape(b, 1, *grid)
        logits = F.interpolate(low, scale_factor=2, mode="bilinear", align_corners=False)
        return DecoderOutput(tau, logits[:, 0])


class MemoryEncoder(nn.Module):
    """Fuses frame features with area-pooled, sigmoid-squashed mask logits."""

    def __init__(self, d: int):
        super().__init__()
        self.proj = nn.Linear(d + 1, d)

    def forward(self, feats: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
        b, n, _ = feats.shape
        h, w = logits.shape[-2:]
        factor = int(round((h * w / n) ** 0.5))
        pooled = F.avg_pool2d(logits.unsqueeze(1), kernel_size=factor)
        s = torch.sigmoid(pooled).reshape(b, n, 1)
        return self.proj(torch.cat([feats, s], dim=-1))


class SamCore(nn.Module):
    def __init__(self, d: int, grid: int, heads: int = 2):
        super().__init__()
        self.d = d
        self.grid = (grid, grid)
        self.point = PointPrompt(d)
        self.memory_attention = MemoryAttention(d, heads)
        self.decoder = MaskDecoder(d, heads)
        self.memory_encoder = MemoryEncoder(d)
        self.register_buffer("pe", grid_pe(grid, grid, d), persistent=False)

    def memory_attend(self, f, bank: MemoryBank):
        return self.memory_attention(f, bank.tensors(), self.pe)

    def decode(self, feats, rho) -> DecoderOutput:
        return self.decoder(feats, rho, self.pe, self.grid)

    def encode_memory(self, feats, logits, frame: int) -> MemoryEntry:
        return MemoryEntry(self.memory_encoder(feats, logits), frame)
