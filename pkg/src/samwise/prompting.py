"""Decoder prompt from adapted text features: [CLS] row plus pooled verb rows through an MLP."""

from __future__ import annotations

import torch
from torch import nn

from .layers import MLP


def extract_contextual(e: torch.Tensor) -> torch.Tensor:
    """[CLS] row of the final-layer text features. (B, L+1, C) -> (B, C)."""
    if e.shape[-2] == 0:
        raise ValueError("empty text features")
    return e[..., 0, :]


def extract_motion(e: torch.Tensor, verb_flags: torch.Tensor) -> torch.Tensor:
    """Mean of the rows flagged as verbs; zeros when the caption has none."""
    if verb_flags.shape != e.shape[:-1]:
        raise ValueError("verb flags must have one entry per text row")
    w = verb_flags.to(e.dtype)
    count = w.sum(dim=-1, keepdim=True)
    total = (w.unsqueeze(-1) * e).sum(dim=-2)
    return total / count.clamp(min=1.0)


class PromptMLP(nn.Module):
    """Three linear layers: 2*C_t -> d_dec -> d_dec -> d_dec."""

    def __init__(self, c_txt: int, d_dec: int):
        super().__init__()
        self.mlp = MLP([2 * c_txt, d_dec, d_dec, d_dec])

    def forward(self, e_c: torch.Tensor, e_m: torch.Tensor) -> torch.Tensor:
        return self.mlp(torch.cat([e_c, e_m], dim=-1))


def build_prompt(prompt: PromptMLP, e: torch.Tensor, verb_flags: torch.Tensor) -> torch.Tensor:
    return prompt(extract_contextual(e), extract_motion(e, verb_flags))
