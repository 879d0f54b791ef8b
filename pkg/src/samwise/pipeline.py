"""Streaming inference: clips of T frames, then a per-frame memory loop.

For each clip the adapted encoders run once and the prompt is built once;
every frame is then memory-attended, decoded with the prompt, optionally
checked by the CME, and written back to the memory bank.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np
import torch

from .cme import fuse, self_label, triggers
from .config import StreamConfig
from .data import tokenize
from .model import Samwise, to_input
from .sam import MemoryBank


@dataclass
class FrameResult:
    logits: torch.Tensor  # (B, H, W) memory-conditioned decoder logits
    mask: torch.Tensor  # (B, H, W) bool, logits > 0
    memory_logits: torch.Tensor  # what the memory encoder received
    p_detect: torch.Tensor | None = None  # (B,)
    fired: torch.Tensor | None = None  # (B,) bool
    memoryless_logits: torch.Tensor | None = None


@dataclass
class StreamState:
    bank: MemoryBank
    config: StreamConfig
    tokens: torch.Tensor | None = None
    verb_flags: torch.Tensor | None = None
    caption: str | None = None
    frame: int = 0
    video_id: object = None
    p_trace: list = field(default_factory=list)
    decode_calls: int = 0
    memory_writes: int = 0

    def reset(self, video_id=None):
        self.bank.clear(video_id)
        self.tokens = self.verb_flags = self.caption = None
        self.frame = 0
        self.video_id = video_id
        self.p_trace = []
        self.decode_calls = 0
        self.memory_writes = 0


def new_state(model: Samwise, config: StreamConfig | None = None, video_id=None) -> StreamState:
    state = StreamState(MemoryBank(model.cfg.bank_capacity), config or StreamConfig())
    state.reset(video_id)
    return state


def caption_tensors(captions: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
    toks = [tokenize(c) for c in captions]
    lengths = {len(t[0]) for t in toks}
    if len(lengths) != 1:
        raise ValueError("captions in one batch must tokenize to the same length")
    ids = torch.tensor([t[0] for t in toks], dtype=torch.long)
    flags = torch.tensor([t[1] for t in toks], dtype=torch.bool)
    return ids, flags


def frame_step(model: Samwise, feats_t, rho, state: StreamState, force_fire=None,
               want_memoryless: bool = False) -> FrameResult:
    """One frame of the memory loop. feats_t (B, n, d) memory-less features."""
    sam, cfg = model.sam, state.config
    f_mem = sam.memory_attend(feats_t, state.bank)
    out_m = sam.decode(f_mem, rho)
    state.decode_calls += 1
    memory_logits = out_m.logits
    p = fired = out_l = None
    b = feats_t.shape[0]
    if cfg.cme_mode == "on":
        tau_l = model.cme.memoryless_token(feats_t, rho, sam.pe)
        p = model.cme.detect(out_m.mask_token, tau_l)
        fired = triggers(p)
    elif cfg.cme_mode == "always":
        fired = torch.ones(b, dtype=torch.bool)
    elif cfg.cme_mode == "every4":
        fired = torch.full((b,), state.frame % 4 == 3, dtype=torch.bool)
    if force_fire is not None:
        fired = torch.as_tensor(force_fire, dtype=torch.bool).expand(b)
    if want_memoryless or (fired is not None and bool(fired.any())):
        out_l = sam.decode(feats_t, rho)
    if fired is not None and bool(fired.any()):
        fused = fuse(out_m.logits, out_l.logits, cfg.lam)
        memory_logits = torch.where(fired[:, None, None], fused, out_m.logits)
    state.bank.push(sam.encode_memory(feats_t, memory_logits, state.frame))
    state.memory_writes += 1
    state.frame += 1
    if p is not None:
        state.p_trace.append(p.detach())
    return FrameResult(out_m.logits, out_m.logits > 0, memory_logits, p, fired,
                       out_l.logits if out_l is not None else None)


def process_clip(model: Samwise, frames, state: StreamState, caption: str | None = None,
                 tokens=None, verb_flags=None, force_fire=None, want_memoryless=False) -> list[FrameResult]:
    """Run one clip (B, T', H, W, 3) through encoders, prompt and the memory loop."""
    frames = to_input(frames)
    if frames.ndim == 4:
        frames = frames.unsqueeze(0)
    if tokens is None:
        if caption is None:
            raise ValueError("a caption or token ids are required")
        tokens, verb_flags = caption_tensors([caption] * frames.shape[0])
    if state.tokens is None:
        state.tokens, state.verb_flags, state.caption = tokens, verb_flags, caption
    elif not torch.equal(state.tokens, tokens):
        raise ValueError("caption changed in the middle of a video")
    if frames.shape[1] > state.config.clip_len:
        raise ValueError(f"clip of {frames.shape[1]} frames exceeds window {state.config.clip_len}")
    pyr, txt = model.encode_clip(frames, tokens, verb_flags)
    feats = model.flat_features(pyr)
    rho = model.text_prompt(txt)
    results = []
    for t in range(feats.shape[1]):
        ff = None
        if force_fire is not None:
            ff = force_fire(state.frame) if callable(force_fire) else force_fire
        results.append(frame_step(model, feats[:, t], rho, state, ff, want_memoryless))
    return results


def clips(frames: Iterable, clip_len: int) -> Iterator[list]:
    """Buffer an iterator of frames into clips, flushing a short final clip."""
    buf = []
    for frame in frames:
        buf.append(frame)
        if len(buf) == clip_len:
            yield buf
            buf = []
    if buf:
        yield buf


def run_stream(model: Samwise, frames, tokens, verb_flags, config: StreamConfig,
               force_fire=None, want_memoryless=False, video_id=None) -> list[FrameResult]:
    """Batched stream over (B, T_V, H, W, 3); used by training and evaluation."""
    state = new_state(model, config, video_id)
    frames = to_input(frames)
    out = []
    for start in range(0, frames.shape[1], config.clip_len):
        out.extend(process_clip(model, frames[:, start:start + config.clip_len], state,
                                tokens=tokens, verb_flags=verb_flags, force_fire=force_fire,
                                want_memoryless=want_memoryless))
    return out


@dataclass
class VideoResult:
    masks: np.ndarray  # bool (T_V, H, W)
    p_detect: list[float]
    fired: list[bool]
    clip_sizes: list[int]
    memory_writes: int


def run_video(model: Samwise, frames: Iterable, caption: str, config: StreamConfig | None = None,
              state: StreamState | None = None) -> VideoResult:
    """Stream one video frame by frame; each frame is an (H, W, 3) array."""
    config = config or StreamConfig()
    state = state or new_state(model, config)
    state.reset(video_id=caption)
    masks, ps, fired, sizes = [], [], [], []
    with torch.no_grad():
        for clip in clips(frames, config.clip_len):
            sizes.append(len(clip))
            batch = torch.stack([to_input(f) for f in clip]).unsqueeze(0)
            for r in process_clip(model, batch, state, caption=caption):
                masks.append(r.mask[0].numpy())
                if r.p_detect is not None:
                    ps.append(float(r.p_detect[0]))
                if r.fired is not None:
                    fired.append(bool(r.fired[0]))
    if not masks:
        raise ValueError("empty video")
    return VideoResult(np.stack(masks), ps, fired, sizes, state.memory_writes)


def self_labels(results: list[FrameResult]) -> torch.Tensor:
    """(T, B) self-supervision labels from memory and memory-less masks."""
    return torch.stack([self_label(r.mask, r.memoryless_logits > 0) for r in results])
