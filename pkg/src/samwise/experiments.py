"""Training recipes and the ablation suites shared by the CLI, scripts and tests.

Checkpoints are cached under a work directory keyed by the budget, so a
suite can be re-run without retraining.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, StreamConfig
from .data import generate_suite
from .evaluation import evaluate
from .model import Samwise, load_model, save_model
from .training import TrainConfig, run_stage, write_log

log = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parents[2]
BACKBONE = REPO_ROOT / "artifacts" / "backbone"

TABLE2_VARIANTS = {
    "mlp-only": {"use_adapters": False},
    "vta+tva": {"use_hsa": False},
    "hsa+vta+tva": {},
}
PATCH_SCHEDULES = {"1/1/1": (1, 1, 1), "2/2/2": (2, 2, 2), "4/2/2": (4, 2, 2), "global": (16, 8, 4)}


@dataclass
class Budget:
    # stage A (backbone)
    image_steps: int = 700
    track_steps: int = 800
    backbone_videos: int = 400
    # stage B
    adapter_steps: int = 700
    adapter_lr: float = 1.5e-3
    train_videos: int = 400
    # stage C
    cme_steps: int = 150
    cme_lr: float = 1e-3
    cme_videos: int = 200
    # shared
    batch: int = 8
    frames: int = 4
    eval_videos: int = 200
    late_eval_videos: int = 100

    @classmethod
    def from_json(cls, path) -> "Budget":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{path}: unknown budget keys {sorted(unknown)}")
        return cls(**raw)

    def key(self, *names) -> str:
        d = {n: getattr(self, n) for n in names}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]


# --------------------------------------------------------------------------
# data suites; seeds are disjoint between training and evaluation


def backbone_videos(n: int, seed: int = 1000):
    scen = ("static-target", "action-disambiguation", "multi-instance", "late-appearing")
    return generate_suite(scen, n, seed, n_distractors={"multi-instance": 2})


def referring_train_videos(n: int, seed: int = 20000):
    # late-appearing is held out from stage B; it is the CME's test case
    return generate_suite(("action-disambiguation", "multi-instance", "static-target"), n, seed)


def table2_eval_videos(n: int, seed: int = 500000):
    return generate_suite(("action-disambiguation", "multi-instance"), n, seed)


def late_videos(n: int, seed: int):
    return generate_suite(("late-appearing",), n, seed)


# --------------------------------------------------------------------------
# stages


def pretrain(videos, out=None, image_steps: int = 700, video_steps: int = 800, seed: int = 0,
             log_path=None, cfg: ModelConfig | None = None, progress: bool = False) -> Samwise:
    """Stage A in two phases: single-frame point prompts, then 3-frame tracking windows."""
    model = Samwise(cfg or ModelConfig(seed=seed))
    rows = []
    model, r = run_stage(model, videos, TrainConfig(stage="A", steps=image_steps, batch=16, frames=1,
                                                    lr=5e-3, seed=seed), progress=progress)
    rows += r
    model, r = run_stage(model, videos, TrainConfig(stage="A", steps=video_steps, batch=16, frames=3,
                                                    lr=2e-3, point_rate=0.0, seed=seed + 1), progress=progress)
    rows += [{**x, "step": x["step"] + image_steps} for x in r]
    if out is not None:
        save_model(model, out, {"stage": "A", "image_steps": image_steps, "video_steps": video_steps,
                                "seed": seed})
    if log_path is not None:
        write_log(log_path, rows)
    return model


def backbone(budget: Budget | None = None, seed: int = 0, path: Path = BACKBONE) -> Samwise:
    """The frozen stage-A model; trained once and stored under artifacts/."""
    budget = budget or Budget()
    if not Path(path).with_suffix(".json").exists():
        log.info("training stage A backbone (one-off)")
        pretrain(backbone_videos(budget.backbone_videos), path, budget.image_steps, budget.track_steps, seed)
    model, _ = load_model(path)
    return model


def with_config(model: Samwise, **overrides) -> Samwise:
    """Fresh model with changed ablation switches and the same weights."""
    cfg = ModelConfig.from_dict({**model.cfg.to_dict(), **overrides})
    out = Samwise(cfg)
    out.load_state_dict(model.state_dict(), strict=True)
    return out


def train_adapters(model: Samwise, videos, variant: str | None = None, switches: dict | None = None,
                   steps: int = 300, lr: float | None = None, batch: int = 8, frames: int | None = 8,
                   seed: int = 0, out=None, log_path=None, warm_steps: int = 0) -> Samwise:
    """Stage B. ``warm_steps`` > 0 first trains on single frames (T = 1), standing in for image-level data."""
    overrides = dict(switches or {})
    if variant is not None:
        overrides.update(TABLE2_VARIANTS[variant])
    model = with_config(model, **overrides)
    lr = lr if lr is not None else Budget.adapter_lr
    rows = []
    if warm_steps:
        model, rows = run_stage(model, videos, TrainConfig(stage="B", steps=warm_steps, lr=lr, batch=batch,
                                                           frames=1, seed=seed + 7919))
    cfg = TrainConfig(stage="B", steps=steps, lr=lr, batch=batch, frames=frames, seed=seed)
    model, r = run_stage(model, videos, cfg, out=out)
    if log_path is not None:
        write_log(log_path, rows + [{**x, "step": x["step"] + warm_steps} for x in r])
    return model


def train_cme(model: Samwise, videos, steps: int = 150, lr: float | None = None, batch: int = 8,
              frames: int | None = None, seed: int = 0, lam: float = 0.5, out=None, log_path=None):
    cfg = TrainConfig(stage="C", steps=steps, lr=lr if lr is not None else Budget.cme_lr, batch=batch,
                      frames=frames, seed=seed, lam=lam)
    model, rows = run_stage(model, videos, cfg, out=out, log_path=log_path)
    return model, rows


def cme_label_accuracy(model: Samwise, videos, batch: int = 8) -> float:
    """Share of frames where the detector's decision (p > 0.5) equals the self-supervised label."""
    from .pipeline import caption_tensors, run_stream, self_labels

    hits = total = 0
    groups: dict[int, list] = {}
    for v in videos:
        groups.setdefault(len(v.caption.split()), []).append(v)
    with torch.no_grad():
        for group in groups.values():
            for s in range(0, len(group), batch):
                chunk = group[s:s + batch]
                ids, flags = caption_tensors([v.caption for v in chunk])
                frames = np.stack([v.frames for v in chunk])
                out = run_stream(model, frames, ids, flags, StreamConfig(cme_mode="on"), want_memoryless=True)
                p = torch.stack([r.p_detect for r in out])
                y = self_labels(out)
                hits += int(((p > 0.5).long() == y).sum())
                total += y.numel()
    return hits / total


def _cached(path: Path, build):
    if path.with_suffix(".json").exists():
        return load_model(path)[0]
    model = build()
    save_model(model, path, {"cached": True})
    return model


# --------------------------------------------------------------------------
# suites


def table2(work: Path, budget: Budget | None = None, seed: int = 0) -> list[dict]:
    """MLP-only vs +VTA,+TVA vs +HSA on action-disambiguation + multi-instance."""
    budget = budget or Budget()
    base = backbone(budget)
    train = referring_train_videos(budget.train_videos)
    test = table2_eval_videos(budget.eval_videos)
    key = budget.key("adapter_steps", "adapter_lr", "train_videos", "batch", "frames")
    rows = []
    for name in TABLE2_VARIANTS:
        t0 = time.time()
        model = _cached(Path(work) / f"stageB_{name}_{key}_s{seed}", lambda: train_adapters(
            base, train, name, steps=budget.adapter_steps, lr=budget.adapter_lr, batch=budget.batch,
            frames=budget.frames, seed=seed))
        res = evaluate(model, test, StreamConfig(cme_mode="off"))
        s = res.summary
        by_scen = {}
        for v, vid in zip(res.videos, test):
            by_scen.setdefault(vid.scenario, []).append((v.mean_j + v.mean_f) / 2)
        rows.append({"variant": name, "J": s.j, "F": s.f, "JF": s.jf,
                     **{f"JF_{k}": sum(x) / len(x) for k, x in sorted(by_scen.items())},
                     "seconds": round(time.time() - t0, 1)})
        log.info("table2 %s J&F %.4f", name, s.jf)
    return rows


def patch_suite(work: Path, budget: Budget | None = None, seed: int = 0) -> list[dict]:
    """Full adapters with different per-level patch schedules."""
    budget = budget or Budget()
    base = backbone(budget)
    train = referring_train_videos(budget.train_videos)
    test = table2_eval_videos(budget.eval_videos)
    key = budget.key("adapter_steps", "adapter_lr", "train_videos", "batch", "frames")
    rows = []
    for name, sizes in PATCH_SCHEDULES.items():
        tag = name.replace("/", "-")
        model = _cached(Path(work) / f"stageB_patch{tag}_{key}_s{seed}", lambda: train_adapters(
            base, train, switches={"patch_sizes": sizes}, steps=budget.adapter_steps, lr=budget.adapter_lr,
            batch=budget.batch, frames=budget.frames, seed=seed))
        s = evaluate(model, test, StreamConfig(cme_mode="off")).summary
        rows.append({"patch": name, "J": s.j, "F": s.f, "JF": s.jf})
    return rows


def cme_model(work: Path, budget: Budget | None = None, seed: int = 0) -> tuple[Samwise, list[dict]]:
    budget = budget or Budget()
    base = backbone(budget)
    key_b = budget.key("adapter_steps", "adapter_lr", "train_videos", "batch", "frames")
    full = _cached(Path(work) / f"stageB_hsa+vta+tva_{key_b}_s{seed}", lambda: train_adapters(
        base, referring_train_videos(budget.train_videos), "hsa+vta+tva", steps=budget.adapter_steps,
        lr=budget.adapter_lr, batch=budget.batch, frames=budget.frames, seed=seed))
    key_c = budget.key("adapter_steps", "adapter_lr", "train_videos", "batch", "frames", "cme_steps",
                       "cme_lr", "cme_videos")
    path = Path(work) / f"stageC_{key_c}_s{seed}"
    rows: list[dict] = []
    if path.with_suffix(".json").exists():
        return load_model(path)[0], rows
    model, rows = train_cme(full, late_videos(budget.cme_videos, 70000), steps=budget.cme_steps,
                            lr=budget.cme_lr, batch=budget.batch, seed=seed)
    save_model(model, path, {"stage": "C"})
    return model, rows


def cme_suite(work: Path, budget: Budget | None = None, seed: int = 0) -> list[dict]:
    """Trigger policies on the late-appearing suite: never, CME-gated, always, every fourth frame."""
    budget = budget or Budget()
    model, _ = cme_model(work, budget, seed)
    test = late_videos(budget.late_eval_videos, 800000)
    rows = []
    for mode in ("off", "on", "always", "every4"):
        res = evaluate(model, test, StreamConfig(cme_mode=mode))
        s = res.summary
        fired = [f for v in res.videos if v.fired for f in v.fired]
        rows.append({"cme": mode, "J": s.j, "F": s.f, "JF": s.jf, "post_J": res.post_appearance_j,
                     "fire_rate": sum(fired) / len(fired) if fired else 0.0})
    return rows
