"""Losses, Adam, and the three training stages.

A: promptable segmentation pretraining of the visual encoder and sam core,
   then freeze. B: adapters + prompt MLP with DICE + focal loss. C: CME with
   self-supervised detection labels.
"""

from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .cme import cme_loss
from .config import StreamConfig
from .data import SyntheticVideo, object_masks
from .model import Samwise, save_model, state_hash, to_input
from .numeric import NonFiniteError, SeededRng, check_finite
from .pipeline import caption_tensors, frame_step, new_state, run_stream, self_labels

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# losses


def dice_loss(logits: torch.Tensor, gt: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """1 - (2 sum(p g) + eps) / (sum p + sum g + eps) per mask, averaged over masks."""
    if logits.shape != gt.shape:
        raise ValueError("logits and ground truth must share a shape")
    p = torch.sigmoid(logits).flatten(-2)
    g = gt.to(logits.dtype).flatten(-2)
    score = (2 * (p * g).sum(-1) + eps) / (p.sum(-1) + g.sum(-1) + eps)
    return (1 - score).mean()


def focal_loss(logits: torch.Tensor, gt: torch.Tensor, alpha: float = 0.25, gamma: float = 2.0) -> torch.Tensor:
    """Mean over pixels of alpha_t (1 - p_t)^gamma * BCE."""
    if logits.shape != gt.shape:
        raise ValueError("logits and ground truth must share a shape")
    g = gt.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, g, reduction="none")
    p = torch.sigmoid(logits)
    p_t = p * g + (1 - p) * (1 - g)
    alpha_t = alpha * g + (1 - alpha) * (1 - g)
    return (alpha_t * (1 - p_t) ** gamma * bce).mean()


def mask_loss(logits, gt, cfg: "TrainConfig") -> tuple[torch.Tensor, float, float]:
    d = dice_loss(logits, gt)
    f = focal_loss(logits, gt, cfg.alpha, cfg.gamma)
    return cfg.w_dice * d + cfg.w_focal * f, d.item(), f.item()


# --------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, lr: float, state: AdamState) -> None:
    """In-place Adam update. ``params`` and ``grads`` align; frozen params are skipped."""
    b1, b2 = state.betas
    state.t += 1
    with torch.no_grad():
        for i, (p, g) in enumerate(zip(params, grads)):
            if g is None or not p.requires_grad:
                continue
            m = state.m.get(i)
            if m is None:
                m = state.m[i] = torch.zeros_like(p)
                state.v[i] = torch.zeros_like(p)
            v = state.v[i]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = m / (1 - b1**state.t)
            v_hat = v / (1 - b2**state.t)
            p.sub_(lr * m_hat / (torch.sqrt(v_hat) + state.eps))


# --------------------------------------------------------------------------
# configuration and batching


DEFAULT_LR = {"A": 2e-3, "B": 1e-4, "C": 1e-3}


@dataclass
class TrainConfig:
    stage: str = "B"
    lr: float | None = None
    steps: int = 200
    batch: int = 4
    seed: int = 0
    w_dice: float = 1.0
    w_focal: float = 1.0
    alpha: float = 0.25
    gamma: float = 2.0
    frames: int | None = None  # training window; None uses whole videos
    clip_len: int = 4
    lam: float = 0.5
    point_rate: float = 0.25  # stage A: chance a later frame also gets a point

    def __post_init__(self):
        if self.stage not in ("A", "B", "C"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.stage]
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


class TrainingDiverged(RuntimeError):
    pass


def _length_groups(videos: list[SyntheticVideo]) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for i, v in enumerate(videos):
        groups.setdefault(len(v.caption.split()), []).append(i)
    return [groups[k] for k in sorted(groups)]


def sample_batch(videos, rng: SeededRng, size: int, by_caption: bool = True) -> list[int]:
    if by_caption:
        groups = _length_groups(videos)
        weights = np.array([len(g) for g in groups], dtype=float)
        u = rng.uniform() * weights.sum()
        group = groups[int(np.searchsorted(np.cumsum(weights), u, side="right").clip(0, len(groups) - 1))]
    else:
        group = list(range(len(videos)))
    return [group[rng.integers(0, len(group))] for _ in range(min(size, len(group)))]


def _window(rng: SeededRng, t_v: int, frames: int | None) -> slice:
    if frames is None or frames >= t_v:
        return slice(0, t_v)
    start = rng.integers(0, t_v - frames + 1)
    return slice(start, start + frames)


def _centroid(mask: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    # pixel centre y + 0.5 lands at finest-grid coordinate (y + 0.5 - 1) / 2
    return (ys.mean() - 0.5) / 2, (xs.mean() - 0.5) / 2


# --------------------------------------------------------------------------
# stage objectives


def stage_a_loss(model: Samwise, videos, idx, rng: SeededRng, cfg: TrainConfig):
    frames, gts = [], []
    n = cfg.frames or videos[idx[0]].frames.shape[0]
    point_frames = [0] + [t for t in range(1, n) if rng.uniform() < cfg.point_rate]
    for i in idx:
        v = videos[i]
        objs = object_masks(v)
        for _ in range(20):
            win = _window(rng, v.frames.shape[0], cfg.frames)
            cands = [k for k in range(len(objs)) if objs[k, win.start].sum() >= 4]
            if cands:
                break
        else:
            raise ValueError(f"{v.name}: no visible object to prompt")
        k = cands[rng.integers(0, len(cands))]
        frames.append(v.frames[win])
        gts.append(objs[k, win])
    frames = to_input(np.stack(frames))
    gts = torch.from_numpy(np.stack(gts))
    state = new_state(model, StreamConfig(clip_len=cfg.clip_len, cme_mode="off"))
    logits = []
    for start in range(0, n, cfg.clip_len):
        pyr, _ = model.encode_clip(frames[:, start:start + cfg.clip_len], adapters=False)
        feats = model.flat_features(pyr)
        for t in range(feats.shape[1]):
            ft = start + t
            if ft in point_frames:
                pts = torch.tensor([_centroid(g[ft].numpy()) if g[ft].any() else (-1.0, -1.0) for g in gts])
                rho = model.sam.point(pts)
                missing = (pts[:, 0] < 0).unsqueeze(-1)
                rho = torch.where(missing, model.sam.point(None, len(idx)), rho)
            else:
                rho = model.sam.point(None, len(idx))
            logits.append(frame_step(model, feats[:, t], rho, state).logits)
    logits = torch.stack(logits, dim=1)
    return mask_loss(logits, gts, cfg)


def _clip_batch(videos, idx, rng, cfg):
    wins = [_window(rng, videos[i].frames.shape[0], cfg.frames) for i in idx]
    frames = to_input(np.stack([videos[i].frames[w] for i, w in zip(idx, wins)]))
    gts = torch.from_numpy(np.stack([videos[i].target_masks[w] for i, w in zip(idx, wins)]))
    ids, flags = caption_tensors([videos[i].caption for i in idx])
    return frames, gts, ids, flags


def stage_b_loss(model: Samwise, videos, idx, rng: SeededRng, cfg: TrainConfig):
    frames, gts, ids, flags = _clip_batch(videos, idx, rng, cfg)
    out = run_stream(model, frames, ids, flags, StreamConfig(clip_len=cfg.clip_len, cme_mode="off"))
    logits = torch.stack([r.logits for r in out], dim=1)
    return mask_loss(logits, gts, cfg)


def stage_c_loss(model: Samwise, videos, idx, rng: SeededRng, cfg: TrainConfig):
    frames, _, ids, flags = _clip_batch(videos, idx, rng, cfg)
    out = run_stream(model, frames, ids, flags,
                     StreamConfig(clip_len=cfg.clip_len, lam=cfg.lam, cme_mode="on"), want_memoryless=True)
    p = torch.stack([r.p_detect for r in out])
    y = self_labels(out)
    loss = cme_loss(p, y)
    acc = ((p > 0.5).long() == y).double().mean().item()
    return loss, acc, y.double().mean().item()


# --------------------------------------------------------------------------
# stage driver


LOG_FIELDS = ["step", "stage", "loss", "dice", "focal", "cme", "aux", "wall_time"]


def run_stage(model: Samwise, videos: list[SyntheticVideo], cfg: TrainConfig,
              out: str | Path | None = None, log_path: str | Path | None = None,
              progress: bool = False) -> tuple[Samwise, list[dict]]:
    """Train the parameters owned by ``cfg.stage``; everything else stays frozen."""
    if not videos:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    model.set_trainable(cfg.stage)
    frozen_prefixes = [n for n, p in model.named_parameters() if not p.requires_grad]
    before = state_hash(model, frozen_prefixes)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = AdamState()
    rng = SeededRng(cfg.seed).child(f"stage-{cfg.stage}")
    rows = []
    last_good = copy.deepcopy(model.state_dict())
    t0 = time.time()
    for step in range(cfg.steps):
        idx = sample_batch(videos, rng, cfg.batch, by_caption=cfg.stage != "A")
        try:
            if cfg.stage == "A":
                loss, d, f = stage_a_loss(model, videos, idx, rng, cfg)
                row = {"dice": d, "focal": f}
            elif cfg.stage == "B":
                loss, d, f = stage_b_loss(model, videos, idx, rng, cfg)
                row = {"dice": d, "focal": f}
            else:
                loss, acc, pos = stage_c_loss(model, videos, idx, rng, cfg)
                row = {"cme": loss.item(), "aux": acc}
            check_finite(loss.detach(), f"stage {cfg.stage} loss at step {step}")
        except NonFiniteError as exc:
            model.load_state_dict(last_good)
            if out is not None:
                save_model(model, out, {"stage": cfg.stage, "diverged_at": step})
            raise TrainingDiverged(f"stage {cfg.stage} step {step}: {exc}; last good weights restored") from exc
        for p in params:
            p.grad = None
        loss.backward()
        adam_step(params, [p.grad for p in params], cfg.lr, opt)
        if step % 50 == 49:
            last_good = copy.deepcopy(model.state_dict())
        rows.append({"step": step, "stage": cfg.stage, "loss": loss.item(), "dice": "", "focal": "",
                     "cme": "", "aux": "", **row, "wall_time": round(time.time() - t0, 3)})
        if progress and (step % 25 == 0 or step == cfg.steps - 1):
            log.info("stage %s step %d loss %.4f", cfg.stage, step, loss.item())
    model.set_trainable(None)
    if state_hash(model, frozen_prefixes) != before:
        raise RuntimeError(f"stage {cfg.stage} modified frozen parameters")
    if cfg.stage == "A":
        model.sync_cme()
    if out is not None:
        save_model(model, out, {"stage": cfg.stage, "train_config": asdict(cfg)})
    if log_path is not None:
        write_log(log_path, rows)
    return model, rows


def write_log(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.8g}" if isinstance(r.get(k), float) else r.get(k, "")) for k in LOG_FIELDS})
    return path
