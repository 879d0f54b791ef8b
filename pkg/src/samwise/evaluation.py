from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import StreamConfig
from .data import SyntheticVideo
from .metrics import JFSummary, jf_mean, score_video
from .model import Samwise
from .pipeline import caption_tensors, run_stream


@dataclass
class VideoScore:
    name: str
    j: list[float]
    f: list[float]
    masks: np.ndarray
    appear_frame: int
    p_detect: list[float] | None = None
    fired: list[bool] | None = None

    @property
    def mean_j(self) -> float:
        return float(np.mean(self.j))

    @property
    def mean_f(self) -> float:
        return float(np.mean(self.f))

    def post_appearance_j(self) -> list[float]:
        return self.j[self.appear_frame - 1:]


@dataclass
class EvalResult:
    videos: list[VideoScore]

    @property
    def summary(self) -> JFSummary:
        return jf_mean([x for v in self.videos for x in v.j], [x for v in self.videos for x in v.f])

    @property
    def post_appearance_j(self) -> float:
        vals = [x for v in self.videos for x in v.post_appearance_j()]
        return float(np.mean(vals))


def predict(model: Samwise, videos: list[SyntheticVideo], config: StreamConfig, batch: int = 8,
            force_fire=None):
    """Masks (and CME traces) for every video, batched by caption length."""
    order: dict[int, list[int]] = {}
    for i, v in enumerate(videos):
        order.setdefault(len(v.caption.split()), []).append(i)
    masks, ps, fired = [None] * len(videos), [None] * len(videos), [None] * len(videos)
    with torch.no_grad():
        for idx in order.values():
            for s in range(0, len(idx), batch):
                chunk = idx[s:s + batch]
                frames = np.stack([videos[i].frames for i in chunk])
                ids, flags = caption_tensors([videos[i].caption for i in chunk])
                out = run_stream(model, frames, ids, flags, config, force_fire=force_fire)
                m = torch.stack([r.mask for r in out], dim=1).numpy()
                for b, i in enumerate(chunk):
                    masks[i] = m[b]
                    if out[0].p_detect is not None:
                        ps[i] = [float(r.p_detect[b]) for r in out]
                    if out[0].fired is not None:
                        fired[i] = [bool(r.fired[b]) for r in out]
    return masks, ps, fired


def evaluate(model: Samwise, videos: list[SyntheticVideo], config: StreamConfig | None = None,
             batch: int = 8, tol: int = 1, force_fire=None) -> EvalResult:
    config = config or StreamConfig()
    masks, ps, fired = predict(model, videos, config, batch, force_fire)
    scores = []
    for v, m, p, fi in zip(videos, masks, ps, fired):
        j, f = score_video(m, v.target_masks, tol)
        scores.append(VideoScore(v.name, j, f, m, v.appear_frame, p, fi))
    return EvalResult(scores)
