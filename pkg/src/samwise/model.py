"""The assembled model and its checkpoint round-trip."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

from .cme import CME
from .cmt import CmtAdapter
from .config import ModelConfig
from .encoders import Encoders, FeaturePyramid, TextFeatures
from .layers import count_params, seeded_init_
from .numeric import SeededRng, check_finite, load_checkpoint, save_checkpoint
from .prompting import PromptMLP, build_prompt
from .sam import SamCore

NAMESPACES = ("encoder.visual.", "encoder.text.", "cmt.", "prompt.", "sam.", "cme.")
STAGE_PARAMS = {
    "A": ("encoder.visual.", "sam."),
    "B": ("cmt.", "prompt."),
    "C": ("cme.dec_token", "cme.sa.", "cme.norm.", "cme.phi."),
}


class Samwise(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        enc = cfg.encoder
        self.encoder = Encoders(enc, cfg.d_dec)
        self.cmt = nn.ModuleDict({
            f"level{k + 1}": CmtAdapter(c, enc.text_width, cfg.bottleneck, p, cfg.adapter_heads,
                                        cfg.use_hsa, cfg.use_vta, cfg.use_tva)
            for k, (c, p) in enumerate(zip(enc.channels, cfg.patch_sizes))
        })
        self.prompt = PromptMLP(enc.text_width, cfg.d_dec)
        self.sam = SamCore(cfg.d_dec, enc.level_sizes[0], cfg.decoder_heads)
        self.cme = CME(cfg.d_dec)
        seeded_init_(self, cfg.seed)
        with torch.no_grad():
            self.encoder.text.embed.weight.copy_(torch.from_numpy(
                SeededRng(cfg.seed).child("encoder.text.embed").normal(tuple(self.encoder.text.embed.weight.shape))))
        for adapter in self.cmt.values():
            adapter.zero_up_()
        self.cme.zero_phi_()
        self.cme.sync_from_decoder(self.sam.decoder.token_to_feature)

    # ------------------------------------------------------------------
    # parameter bookkeeping

    def set_trainable(self, stage: str | None):
        """Freeze everything except the parameters owned by ``stage`` (A, B or C)."""
        prefixes = STAGE_PARAMS.get(stage, ()) if stage else ()
        for name, p in self.named_parameters():
            p.requires_grad_(name.startswith(prefixes) and not name.startswith("cme.ca."))
        if stage == "B" and not self.cfg.use_adapters:
            for p in self.cmt.parameters():
                p.requires_grad_(False)

    def trainable_named(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def param_budget(self) -> dict:
        total = count_params(self.parameters())
        adapted = sum(p.numel() for n, p in self.named_parameters()
                      if n.startswith(STAGE_PARAMS["B"] + STAGE_PARAMS["C"]))
        return {"total": total, "trainable_bc": adapted, "ratio": adapted / total}

    def sync_cme(self):
        self.cme.sync_from_decoder(self.sam.decoder.token_to_feature)

    # ------------------------------------------------------------------
    # forward pieces

    def hook(self, k: int, f, e):
        if not self.cfg.use_adapters:
            return f, e
        return self.cmt[f"level{k + 1}"](f, e)

    def encode_clip(self, frames, tokens=None, verb_flags=None, adapters: bool = True):
        """frames (B, T, H, W, 3) in [0, 1]. Returns (pyramid, text features or None)."""
        text = (tokens, verb_flags) if tokens is not None else None
        pyr, txt = self.encoder.encode(frames, text, self.hook if adapters else None)
        check_finite(pyr.fused, "visual features")
        return pyr, txt

    def flat_features(self, pyr: FeaturePyramid) -> torch.Tensor:
        b, t, h, w, d = pyr.fused.shape
        return pyr.fused.reshape(b, t, h * w, d)

    def text_prompt(self, txt: TextFeatures) -> torch.Tensor:
        return check_finite(build_prompt(self.prompt, txt.final, txt.verb_flags), "prompt")


def to_input(frames) -> torch.Tensor:
    """uint8 frames -> float64 tensor in [0, 1]."""
    if isinstance(frames, torch.Tensor):
        return frames.to(torch.float64) / 255.0 if frames.dtype == torch.uint8 else frames
    arr = np.asarray(frames)
    return torch.from_numpy(arr.astype(np.float64) / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float64))


def save_model(model: Samwise, path, meta: dict | None = None) -> Path:
    tensors = dict(model.state_dict())
    info = {"model_config": model.cfg.to_dict(), **(meta or {})}
    return save_checkpoint(path, tensors, info)


def load_model(path, overrides: dict | None = None) -> tuple[Samwise, dict]:
    tensors, meta = load_checkpoint(path)
    if "model_config" not in meta:
        raise ValueError(f"{path}: checkpoint carries no model config")
    bad = [n for n in tensors if not n.startswith(NAMESPACES)]
    if bad:
        raise ValueError(f"{path}: incompatible checkpoint namespace(s): {', '.join(sorted(bad)[:3])}")
    cfg_dict = dict(meta["model_config"])
    cfg_dict.update(overrides or {})
    model = Samwise(ModelConfig.from_dict(cfg_dict))
    expected = set(model.state_dict())
    missing = expected - set(tensors)
    if missing:
        raise ValueError(f"{path}: checkpoint lacks {', '.join(sorted(missing)[:3])}")
    model.load_state_dict(tensors, strict=True)
    return model, meta


def state_hash(model: Samwise, prefixes) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        if name.startswith(tuple(prefixes)):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.detach().numpy(), dtype="<f8").tobytes())
    return h.hexdigest()
