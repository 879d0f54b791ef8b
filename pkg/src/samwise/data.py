"""Captioned synthetic videos of moving shapes.

Scenarios reproduce the hard cases for referring segmentation at toy scale:
a lone static target, several instances that differ in colour or kind, two
look-alike shapes told apart only by what they do, and a target that shows up
late while a look-alike is already on screen.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numeric import SeededRng

SCENARIOS = ("static-target", "action-disambiguation", "multi-instance", "late-appearing")
KINDS = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue", "yellow")
PALETTE = {
    "red": (230, 40, 40),
    "green": (40, 200, 40),
    "blue": (50, 90, 255),
    "yellow": (230, 220, 30),
}
ACTIONS = ("move-left", "move-right", "move-up", "move-down", "grow", "shrink", "stay", "appear")
VERB_PHRASES = {
    "move-left": "moving left",
    "move-right": "moving right",
    "move-up": "moving up",
    "move-down": "moving down",
    "grow": "growing",
    "shrink": "shrinking",
    "stay": "staying still",
    "appear": "appearing",
}
# actions a target may carry in the moving scenarios
TARGET_ACTIONS = ("move-left", "move-right", "move-up", "move-down", "grow", "shrink", "stay")

CLS, PAD = "[CLS]", "[PAD]"


class Lexicon:
    """Closed vocabulary with explicit verb flags. ``[CLS]`` is id 0."""

    VERBS = ("moving", "growing", "shrinking", "staying", "appearing")

    def __init__(self):
        words = [CLS, PAD, "the", *COLORS, *KINDS, "moving", "left", "right", "up", "down",
                 "growing", "shrinking", "staying", "still", "appearing"]
        self.entries = {w: (i, w in self.VERBS) for i, w in enumerate(words)}
        self.words = words

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.entries

    def id(self, word: str) -> int:
        return self.entries[word][0]

    def is_verb(self, word: str) -> bool:
        return self.entries[word][1]


LEXICON = Lexicon()


def tokenize(caption: str, lexicon: Lexicon = LEXICON) -> tuple[list[int], list[bool]]:
    """``[CLS]``-prefixed token ids and per-token verb flags."""
    words = caption.split()
    unknown = [w for w in words if w not in lexicon]
    if unknown:
        raise KeyError(f"out-of-vocabulary word(s): {', '.join(unknown)}")
    ids = [lexicon.id(CLS)] + [lexicon.id(w) for w in words]
    flags = [False] + [lexicon.is_verb(w) for w in words]
    return ids, flags


@dataclass
class ShapeSpec:
    kind: str
    color: str
    size: float
    x0: float
    y0: float
    action: str = "stay"
    appear_frame: int = 1  # 1-indexed first frame on which the shape exists
    speed: float = 1.0
    growth: float = 0.35

    def exists(self, t: int) -> bool:
        """``t`` is a 0-indexed frame."""
        return t + 1 >= self.appear_frame

    def state(self, t: int) -> tuple[float, float, float]:
        """(cx, cy, size) at 0-indexed frame t."""
        tau = t + 1 - self.appear_frame
        vx = {"move-left": -1, "move-right": 1}.get(self.action, 0) * self.speed
        vy = {"move-up": -1, "move-down": 1}.get(self.action, 0) * self.speed
        g = {"grow": 1, "shrink": -1}.get(self.action, 0) * self.growth
        return self.x0 + vx * tau, self.y0 + vy * tau, self.size + g * tau

    def rasterize(self, t: int, h: int, w: int) -> np.ndarray:
        mask = np.zeros((h, w), dtype=bool)
        if not self.exists(t):
            return mask
        cx, cy, s = self.state(t)
        yy, xx = np.mgrid[0:h, 0:w]
        dx = xx + 0.5 - cx
        dy = yy + 0.5 - cy
        half = s / 2
        if self.kind == "square":
            return (np.abs(dx) <= half) & (np.abs(dy) <= half)
        if self.kind == "circle":
            return dx**2 + dy**2 <= half**2
        if self.kind == "triangle":
            return (dy >= -half) & (dy <= half) & (np.abs(dx) <= (dy + half) / 2)
        raise ValueError(f"unknown shape kind {self.kind!r}")

    def bbox(self, t: int) -> tuple[float, float, float, float]:
        cx, cy, s = self.state(t)
        return cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2

    @property
    def look(self) -> tuple[str, str]:
        return self.color, self.kind

    def caption(self) -> str:
        return f"the {self.color} {self.kind} {VERB_PHRASES[self.action]}"


@dataclass
class SynthConfig:
    H: int = 32
    W: int = 32
    T_V: int = 16
    n_distractors: int = 1
    min_size: float = 6.0
    max_size: float = 8.0
    speed: float = 1.0
    downsample: int = 8
    max_attempts: int = 400


@dataclass
class SyntheticVideo:
    frames: np.ndarray  # uint8 (T_V, H, W, 3)
    target_masks: np.ndarray  # bool (T_V, H, W)
    caption: str
    scenario: str
    seed: int
    shapes: list[ShapeSpec]  # target first
    name: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def target(self) -> ShapeSpec:
        return self.shapes[0]

    @property
    def distractors(self) -> list[ShapeSpec]:
        return self.shapes[1:]

    @property
    def appear_frame(self) -> int:
        return self.target.appear_frame


def _render(shapes: list[ShapeSpec], cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    frames = np.zeros((cfg.T_V, cfg.H, cfg.W, 3), dtype=np.uint8)
    masks = np.zeros((cfg.T_V, cfg.H, cfg.W), dtype=bool)
    for t in range(cfg.T_V):
        # target painted last so its mask is fully visible
        for shape in list(shapes[1:]) + [shapes[0]]:
            m = shape.rasterize(t, cfg.H, cfg.W)
            frames[t][m] = PALETTE[shape.color]
        masks[t] = shapes[0].rasterize(t, cfg.H, cfg.W)
    return frames, masks


def _fits(shape: ShapeSpec, cfg: SynthConfig) -> bool:
    for t in range(cfg.T_V):
        if not shape.exists(t):
            continue
        x0, y0, x1, y1 = shape.bbox(t)
        if x0 < 1 or y0 < 1 or x1 > cfg.W - 1 or y1 > cfg.H - 1 or shape.state(t)[2] < 3:
            return False
    return True


def _apart(a: ShapeSpec, b: ShapeSpec, cfg: SynthConfig, gap: float = 1.0) -> bool:
    for t in range(cfg.T_V):
        if not (a.exists(t) and b.exists(t)):
            continue
        ax0, ay0, ax1, ay1 = a.bbox(t)
        bx0, by0, bx1, by1 = b.bbox(t)
        if ax0 < bx1 + gap and bx0 < ax1 + gap and ay0 < by1 + gap and by0 < ay1 + gap:
            return False
    return True


def _place(rng: SeededRng, kind, color, action, cfg: SynthConfig, appear_frame=1) -> ShapeSpec:
    size = rng.uniform(low=cfg.min_size, high=cfg.max_size)
    if action == "shrink":
        size += 3.0
    x0 = rng.uniform(low=size / 2 + 1, high=cfg.W - size / 2 - 1)
    y0 = rng.uniform(low=size / 2 + 1, high=cfg.H - size / 2 - 1)
    return ShapeSpec(kind=kind, color=color, size=round(size, 3), x0=round(x0, 3), y0=round(y0, 3),
                     action=action, appear_frame=appear_frame, speed=cfg.speed)


def _other_look(rng: SeededRng, taken: set) -> tuple[str, str]:
    options = [(c, k) for c in COLORS for k in KINDS if (c, k) not in taken]
    return rng.choice(options)


def _script(rng: SeededRng, scenario: str, cfg: SynthConfig) -> list[tuple]:
    """(kind, color, action, appear_frame) per shape, target first."""
    color, kind = rng.choice(COLORS), rng.choice(KINDS)
    n = cfg.n_distractors
    if scenario == "static-target":
        plan = [(kind, color, "stay", 1)]
        taken = {(color, kind)}
        for _ in range(n):
            c, k = _other_look(rng, taken)
            taken.add((c, k))
            plan.append((k, c, rng.choice(TARGET_ACTIONS), 1))
        return plan
    if scenario == "multi-instance":
        plan = [(kind, color, rng.choice(TARGET_ACTIONS), 1)]
        taken = {(color, kind)}
        for i in range(n):
            if i == 0:
                # a near miss: shares colour or kind with the target
                options = [(color, k) for k in KINDS if k != kind] + [(c, kind) for c in COLORS if c != color]
                c, k = rng.choice(options)
            else:
                c, k = _other_look(rng, taken)
            taken.add((c, k))
            plan.append((k, c, rng.choice(TARGET_ACTIONS), 1))
        return plan
    if scenario in ("action-disambiguation", "late-appearing"):
        if n < 1:
            raise ValueError(f"{scenario} needs at least one distractor")
        action = rng.choice(TARGET_ACTIONS)
        twin_action = rng.choice([a for a in TARGET_ACTIONS if a != action])
        appear = 1
        if scenario == "late-appearing":
            lo = math.ceil(cfg.T_V / 3)
            appear = rng.integers(max(lo, 2), max(lo, 2) + max(1, cfg.T_V // 3))
        plan = [(kind, color, action, appear), (kind, color, twin_action, 1)]
        taken = {(color, kind)}
        for _ in range(n - 1):
            c, k = _other_look(rng, taken)
            taken.add((c, k))
            plan.append((k, c, rng.choice(TARGET_ACTIONS), 1))
        return plan
    raise ValueError(f"unknown scenario {scenario!r}")


def generate(seed: int, scenario: str, config: SynthConfig | None = None) -> SyntheticVideo:
    cfg = config or SynthConfig()
    if cfg.H % cfg.downsample or cfg.W % cfg.downsample:
        raise ValueError(f"canvas {cfg.H}x{cfg.W} not divisible by encoder downsampling {cfg.downsample}")
    if cfg.T_V < 2:
        raise ValueError("videos need at least two frames")
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    rng = SeededRng(seed).child(scenario)
    plan = _script(rng, scenario, cfg)
    for _ in range(cfg.max_attempts):
        shapes: list[ShapeSpec] = []
        ok = True
        for kind, color, action, appear in plan:
            for _ in range(50):
                s = _place(rng, kind, color, action, cfg, appear)
                # distractors may cross each other, never the target
                if _fits(s, cfg) and (not shapes or _apart(s, shapes[0], cfg)):
                    shapes.append(s)
                    break
            else:
                ok = False
                break
        if ok:
            frames, masks = _render(shapes, cfg)
            return SyntheticVideo(frames=frames, target_masks=masks, caption=shapes[0].caption(),
                                  scenario=scenario, seed=int(seed), shapes=shapes,
                                  name=f"{scenario}-{seed}")
    raise ValueError(f"could not fit {len(plan)} shapes on a {cfg.H}x{cfg.W} canvas for {cfg.T_V} frames")


def caption_matches(shape: ShapeSpec, caption: str) -> bool:
    return shape.caption() == caption


def generate_suite(scenarios, count: int, seed: int, config: SynthConfig | None = None,
                   n_distractors: dict | None = None) -> list[SyntheticVideo]:
    """``count`` videos cycling through ``scenarios`` with seeds seed, seed+1, ..."""
    videos = []
    for i in range(count):
        scenario = scenarios[i % len(scenarios)]
        cfg = config or SynthConfig()
        if n_distractors and scenario in n_distractors:
            cfg = SynthConfig(**{**asdict(cfg), "n_distractors": n_distractors[scenario]})
        videos.append(generate(seed + i, scenario, cfg))
    return videos


# --------------------------------------------------------------------------
# Netpbm codec and dataset directories


def write_pnm(path: Path, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim == 2:
        header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n"
    else:
        raise ValueError(f"cannot write image of shape {image.shape}")
    Path(path).write_bytes(header.encode("ascii") + image.tobytes())


def read_pnm(path: Path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated netpbm header")
        fields.append(raw[start:pos].decode("ascii", "replace"))
    pos += 1
    magic, w, h, maxval = fields
    if magic not in ("P5", "P6") or maxval != "255":
        raise ValueError(f"{path}: unsupported netpbm header {fields}")
    w, h = int(w), int(h)
    channels = 3 if magic == "P6" else 1
    expected = w * h * channels
    data = raw[pos:]
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} pixel bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_video(video: SyntheticVideo, vdir: Path, with_masks: bool = True) -> None:
    vdir = Path(vdir)
    vdir.mkdir(parents=True, exist_ok=True)
    files = {}
    for t in range(video.frames.shape[0]):
        name = f"frame_{t:04d}.ppm"
        write_pnm(vdir / name, video.frames[t])
        files[name] = _sha256(vdir / name)
        if with_masks:
            mname = f"mask_{t:04d}.pgm"
            write_pnm(vdir / mname, video.target_masks[t].astype(np.uint8) * 255)
            files[mname] = _sha256(vdir / mname)
    meta = {
        "caption": video.caption,
        "scenario": video.scenario,
        "seed": video.seed,
        "num_frames": int(video.frames.shape[0]),
        "height": int(video.frames.shape[1]),
        "width": int(video.frames.shape[2]),
        "shapes": [asdict(s) for s in video.shapes],
        "target": 0,
        "files": files,
        **({"extra": video.extra} if video.extra else {}),
    }
    (vdir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_video(vdir: Path) -> SyntheticVideo:
    vdir = Path(vdir)
    meta_path = vdir / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"{meta_path}: unreadable metadata ({exc})") from exc
    if meta.get("scenario") not in SCENARIOS:
        raise ValueError(f"{meta_path}: unknown scenario tag {meta.get('scenario')!r}")
    files = meta.get("files", {})
    for name, digest in files.items():
        if not (vdir / name).exists():
            raise ValueError(f"{vdir / name}: missing file")
        if _sha256(vdir / name) != digest:
            raise ValueError(f"{vdir / name}: checksum mismatch")
    n = meta["num_frames"]
    frames = np.stack([read_pnm(vdir / f"frame_{t:04d}.ppm") for t in range(n)])
    mask_names = [f"mask_{t:04d}.pgm" for t in range(n)]
    if all((vdir / m).exists() for m in mask_names):
        masks = np.stack([read_pnm(vdir / m) for m in mask_names])
        if not np.isin(masks, (0, 255)).all():
            raise ValueError(f"{vdir}: mask values outside {{0, 255}}")
        masks = masks == 255
    else:
        masks = np.zeros(frames.shape[:3], dtype=bool)
    shapes = [ShapeSpec(**s) for s in meta["shapes"]]
    return SyntheticVideo(frames=frames, target_masks=masks, caption=meta["caption"],
                          scenario=meta["scenario"], seed=meta["seed"], shapes=shapes,
                          name=vdir.name, extra=meta.get("extra", {}))


def write_dataset(videos: list[SyntheticVideo], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, video in enumerate(videos):
        name = video.name or f"video_{i:04d}"
        write_video(video, out / name)
        names.append(name)
    index = {"format": "samwise-synth-v1", "videos": names}
    (out / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    return out


def read_dataset(data_dir) -> list[SyntheticVideo]:
    root = Path(data_dir)
    index_path = root / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"{index_path}: dataset index not found")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{index_path}: malformed index ({exc})") from exc
    return [read_video(root / name) for name in index["videos"]]


def object_masks(video: SyntheticVideo) -> np.ndarray:
    """Visible mask of every shape, (n_shapes, T_V, H, W); later-painted shapes occlude earlier ones."""
    t_v, h, w = video.target_masks.shape
    order = list(range(1, len(video.shapes))) + [0]
    raw = np.stack([[video.shapes[i].rasterize(t, h, w) for t in range(t_v)] for i in range(len(video.shapes))])
    visible = raw.copy()
    for pos, i in enumerate(order):
        for j in order[pos + 1:]:
            visible[i] &= ~raw[j]
    return visible
