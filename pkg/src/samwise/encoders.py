"""Frozen perception stack: hierarchical per-frame visual encoder and text encoder.

Both expose one hook per pyramid level. A hook receives the level's visual
volume ``(B, T, H_k, W_k, C_k)`` and the text features ``(B, L+1, C_t)`` and
returns transformed versions of both before the next level runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch
import torch.nn.functional as F
from torch import nn

from .config import EncoderConfig
from .layers import MLP, Attention
from .numeric import gelu, sinusoidal_pe_1d

Hook = Callable[[int, torch.Tensor, torch.Tensor], tuple[torch.Tensor, torch.Tensor]]


@dataclass
class FeaturePyramid:
    levels: list[torch.Tensor]  # each (B, T, H_k, W_k, C_k)
    fused: torch.Tensor  # (B, T, H_1, W_1, d) decoder-facing map at the finest level


@dataclass
class TextFeatures:
    levels: list[torch.Tensor]  # each (B, L+1, C_t); row 0 is [CLS]
    verb_flags: torch.Tensor  # bool (B, L+1)

    @property
    def final(self) -> torch.Tensor:
        return self.levels[-1]


class PatchMerge(nn.Module):
    """Stride-2 merge: linear on each 2x2 neighbourhood, gelu, layer norm."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.proj = nn.Linear(4 * c_in, c_out)
        self.norm = nn.LayerNorm(c_out)

    def forward(self, x):
        b, t, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"cannot merge odd spatial size {h}x{w}")
        x = x.reshape(b, t, h // 2, 2, w // 2, 2, c).permute(0, 1, 2, 4, 3, 5, 6)
        x = x.reshape(b, t, h // 2, w // 2, 4 * c)
        return self.norm(gelu(self.proj(x)))


class Neck(nn.Module):
    """Projects every level to the decoder width and sums them at the finest resolution."""

    def __init__(self, channels, d: int):
        super().__init__()
        self.proj = nn.ModuleList(nn.Linear(c, d) for c in channels)
        self.norm = nn.LayerNorm(d)

    def forward(self, levels):
        b, t, h, w, _ = levels[0].shape
        out = self.proj[0](levels[0])
        for proj, x in zip(self.proj[1:], levels[1:]):
            y = proj(x)
            _, _, hk, wk, d = y.shape
            y = y.reshape(b * t, hk, wk, d).permute(0, 3, 1, 2)
            y = F.interpolate(y, size=(h, w), mode="bilinear", align_corners=False)
            out = out + y.permute(0, 2, 3, 1).reshape(b, t, h, w, d)
        return self.norm(out)


class VisualEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, d_out: int):
        super().__init__()
        self.cfg = cfg
        widths = (cfg.in_channels, *cfg.channels)
        self.levels = nn.ModuleList(PatchMerge(a, b) for a, b in zip(widths[:-1], widths[1:]))
        self.neck = Neck(cfg.channels, d_out)

    def check_input(self, frames):
        s, c = self.cfg.image_size, self.cfg.in_channels
        if frames.ndim != 5 or tuple(frames.shape[2:]) != (s, s, c):
            raise ValueError(f"expected frames (B, T, {s}, {s}, {c}), got {tuple(frames.shape)}")


class TextBlock(nn.Module):
    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = Attention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = MLP([width, width * mlp_ratio, width])

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        return x + self.mlp(self.norm2(x))


class TextEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.text_width)
        self.blocks = nn.ModuleList(TextBlock(cfg.text_width, cfg.text_heads, cfg.text_mlp_ratio)
                                    for _ in range(cfg.n_levels))

    def embed_tokens(self, tokens):
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= self.cfg.vocab_size):
            raise ValueError("token id out of lexicon range")
        pe = sinusoidal_pe_1d(range(tokens.shape[-1]), self.cfg.text_width)
        return self.embed(tokens) + pe


class Encoders(nn.Module):
    """Runs the visual and text stacks level by level so hooks see both."""

    def __init__(self, cfg: EncoderConfig, d_dec: int):
        super().__init__()
        self.cfg = cfg
        self.visual = VisualEncoder(cfg, d_dec)
        self.text = TextEncoder(cfg)

    def encode_frames(self, frames, hook: Optional[Hook] = None, text=None) -> FeaturePyramid:
        pyr, _ = self.encode(frames, text, hook)
        return pyr

    def encode_text(self, tokens, verb_flags, hook: Optional[Hook] = None) -> TextFeatures:
        x = self.text.embed_tokens(tokens)
        levels = []
        for blk in self.text.blocks:
            x = blk(x)
            levels.append(x)
        return TextFeatures(levels, verb_flags)

    def encode(self, frames, text: Optional[tuple], hook: Optional[Hook] = None):
        """Joint pass. ``text`` is (tokens, verb_flags) or None for a vision-only run."""
        self.visual.check_input(frames)
        x = frames
        e = self.text.embed_tokens(text[0]) if text is not None else None
        vis_levels, txt_levels = [], []
        for k, merge in enumerate(self.visual.levels):
            x = merge(x)
            if e is not None:
                e = self.text.blocks[k](e)
            if hook is not None and e is not None:
                x, e = hook(k, x, e)
            vis_levels.append(x)
            if e is not None:
                txt_levels.append(e)
        pyr = FeaturePyramid(vis_levels, self.visual.neck(vis_levels))
        txt = TextFeatures(txt_levels, text[1]) if text is not None else None
        return pyr, txt
