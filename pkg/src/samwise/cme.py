"""Conditional memory encoder: spots a new caption-aligned candidate and fuses
its memory-less mask into the memory path."""

from __future__ import annotations

import copy

import numpy as np
import torch
from torch import nn

from .config import DETECT_THRESHOLD
from .layers import Attention


class CME(nn.Module):
    def __init__(self, d: int, heads: int = 1):
        super().__init__()
        self.d = d
        self.dec_token = nn.Parameter(torch.zeros(d))
        self.sa = Attention(d, heads)
        self.norm = nn.LayerNorm(d)
        self.phi = nn.Linear(d, 1)
        self.ca = None  # frozen copy of the decoder's token-to-feature attention

    def sync_from_decoder(self, t2f: Attention):
        self.ca = copy.deepcopy(t2f)
        for p in self.ca.parameters():
            p.requires_grad_(False)

    def zero_phi_(self):
        with torch.no_grad():
            self.phi.weight.zero_()
            self.phi.bias.zero_()

    def memoryless_token(self, feats: torch.Tensor, rho: torch.Tensor, pe: torch.Tensor) -> torch.Tensor:
        """One cross-attention readout: query rho (B, d) over feats (B, n, d)."""
        if self.ca is None:
            raise RuntimeError("CME cross-attention not initialised from the decoder")
        if feats.shape[-1] != rho.shape[-1]:
            raise ValueError("feature and prompt widths differ")
        return self.ca(rho.unsqueeze(1), feats + pe, feats)[:, 0]

    def detect(self, tau_m: torch.Tensor, tau_l: torch.Tensor) -> torch.Tensor:
        """p_detect (B,) from self-attention over [[DEC], tau_m, tau_l]."""
        b = tau_m.shape[0]
        x = torch.stack([self.dec_token.expand(b, self.d), tau_m, tau_l], dim=1)
        z = self.norm(x + self.sa(x, x, x))
        return torch.sigmoid(self.phi(z[:, 0]))[:, 0]


def triggers(p_detect: torch.Tensor) -> torch.Tensor:
    return p_detect > DETECT_THRESHOLD


def fuse(p_m: torch.Tensor, p_l: torch.Tensor, lam: float) -> torch.Tensor:
    """lam * P_l on the candidate's pixels (P_l > 0), P_m everywhere else."""
    if p_m.shape != p_l.shape:
        raise ValueError("fused logits must share a shape")
    m = (p_l > 0).to(p_m.dtype)
    return lam * p_l * m + p_m * (1 - m)


def self_label(y_m, y_l):
    """1 where the memory-less mask is nonempty and disjoint from the tracked mask.

    Works on a single (H, W) pair or a batch (B, H, W); numpy or torch.
    """
    if y_m.shape != y_l.shape:
        raise ValueError("masks must share a shape")
    if isinstance(y_m, torch.Tensor):
        inter = (y_m & y_l).flatten(-2).any(-1)
        nonempty = y_l.flatten(-2).any(-1)
        return (~inter & nonempty).long()
    y_m, y_l = np.asarray(y_m, bool), np.asarray(y_l, bool)
    inter = (y_m & y_l).reshape(*y_m.shape[:-2], -1).any(-1)
    nonempty = y_l.reshape(*y_l.shape[:-2], -1).any(-1)
    out = (~inter & nonempty).astype(int)
    return int(out) if out.ndim == 0 else out


def cme_loss(p: torch.Tensor, y: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Mean binary cross-entropy over frames."""
    if p.shape != y.shape:
        raise ValueError("one label per prediction")
    p = p.clamp(eps, 1 - eps)
    y = y.to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()
