"""Command-line entry point: ``python3 -m samwise.cli <command> ...``.

Every flag may also come from a JSON file passed with ``--config``; explicit
flags win. ``SAMWISE_SEED`` sets the default seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import CME_MODES, ModelConfig, StreamConfig
from .data import SCENARIOS, SynthConfig, generate_suite, read_dataset, read_video, write_dataset, write_pnm

log = logging.getLogger("samwise")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _default_seed() -> int:
    raw = os.environ.get("SAMWISE_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"SAMWISE_SEED must be an integer, got {raw!r}") from None


def _hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected H,W, got {text!r}") from None
    return h, w


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"not found: {p}")
    return p


def _checkpoint(path: str) -> Path:
    p = Path(path)
    manifest = p if p.suffix == ".json" else p.with_suffix(".json")
    if not manifest.exists():
        raise CliError(f"checkpoint not found: {manifest}")
    return p


# --------------------------------------------------------------------------
# commands


def cmd_synth(a):
    scenarios = SCENARIOS if a.scenario == "all" else tuple(a.scenario.split(","))
    for s in scenarios:
        if s not in SCENARIOS:
            raise CliError(f"unknown scenario {s!r}; choose from {', '.join(SCENARIOS)} or all")
    cfg = SynthConfig(T_V=a.frames, n_distractors=a.distractors)
    out = write_dataset(generate_suite(scenarios, a.count, a.seed, cfg), a.out)
    print(f"wrote {a.count} videos to {out}")


def cmd_pretrain(a):
    from .experiments import pretrain

    videos = read_dataset(_existing(a.data))
    pretrain(videos, a.out, image_steps=a.image_steps, video_steps=a.steps, seed=a.seed,
             log_path=a.log)
    print(f"stage A checkpoint: {a.out}")


def cmd_train(a):
    from .experiments import train_adapters
    from .model import load_model

    videos = read_dataset(_existing(a.data))
    model, _ = load_model(_checkpoint(a.init))
    variant = "mlp-only" if a.mlp_only else None
    switches = {"use_hsa": not a.no_hsa, "use_vta": not a.no_vta, "use_tva": not a.no_tva}
    model = train_adapters(model, videos, variant=variant, switches=switches, steps=a.steps, lr=a.lr,
                           batch=a.batch, frames=a.frames, seed=a.seed, out=a.out, log_path=a.log,
                           warm_steps=a.warm_steps)
    print(f"stage B checkpoint: {a.out} (trainable B+C share {model.param_budget()['ratio']:.4f})")


def cmd_train_cme(a):
    from .experiments import train_cme
    from .model import load_model

    videos = read_dataset(_existing(a.data))
    model, _ = load_model(_checkpoint(a.init))
    train_cme(model, videos, steps=a.steps, lr=a.lr, batch=a.batch, frames=a.frames, seed=a.seed,
              lam=a.lam, out=a.out, log_path=a.log)
    print(f"stage C checkpoint: {a.out}")


def cmd_eval(a):
    from .evaluation import evaluate
    from .metrics import write_report
    from .model import load_model

    videos = read_dataset(_existing(a.data))
    model, _ = load_model(_checkpoint(a.ckpt))
    cfg = StreamConfig(clip_len=a.window, lam=a.lam, cme_mode=a.cme)
    res = evaluate(model, videos, cfg)
    rows = [{"video": v.name, "j": v.mean_j, "f": v.mean_f} for v in res.videos]
    out = Path(a.out) if a.out else Path(a.data) / f"eval_cme-{a.cme}_T{a.window}.csv"
    write_report(out, rows, res.summary)
    s = res.summary
    print(f"J={s.j:.4f} F={s.f:.4f} J&F={s.jf:.4f} post-appearance J={res.post_appearance_j:.4f} -> {out}")


def cmd_infer(a):
    from .model import load_model
    from .pipeline import run_video

    video = read_video(_existing(a.video))
    model, _ = load_model(_checkpoint(a.ckpt))
    cfg = StreamConfig(clip_len=a.window, lam=a.lam, cme_mode=a.cme)
    res = run_video(model, iter(video.frames), a.caption, cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(res.masks):
        write_pnm(out / f"mask_{t:04d}.pgm", m.astype(np.uint8) * 255)
    result = {"caption": a.caption, "frames": int(res.masks.shape[0]),
              "nonempty": [bool(m.any()) for m in res.masks], "clip_sizes": res.clip_sizes}
    if cfg.cme_mode == "on":
        result["p_detect"] = res.p_detect
    if res.fired:
        result["fired"] = res.fired
    (out / "result.json").write_text(json.dumps(result, indent=1) + "\n")
    print(f"wrote {len(res.masks)} masks to {out}")


def cmd_bench_hsa(a):
    from .cmt import bench_hsa

    h, w = a.hw
    r = bench_hsa(h, w, a.t, a.p, width=a.width, repeats=a.repeats, seed=a.seed)
    print(json.dumps(r))


def cmd_ablate(a):
    from . import experiments

    runner = {"table2": experiments.table2, "patch": experiments.patch_suite, "cme": experiments.cme_suite}[a.suite]
    budget = experiments.Budget.from_json(a.budget) if a.budget else experiments.Budget()
    rows = runner(Path(a.out), budget, seed=a.seed)
    out = Path(a.out) / f"ablate_{a.suite}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    print(f"summary: {out}")


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="samwise", description="Streaming text-prompted video segmentation on synthetic shapes.")
    p.add_argument("--config", help="JSON file supplying defaults for any flag")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed = _default_seed()

    s = sub.add_parser("synth", help="write a synthetic dataset directory")
    s.add_argument("--out", required=True)
    s.add_argument("--scenario", default="all")
    s.add_argument("--count", type=int, default=40)
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--frames", type=int, default=SynthConfig.T_V)
    s.add_argument("--distractors", type=int, default=SynthConfig.n_distractors)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", help="stage A: promptable segmentation pretraining")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=800, help="multi-frame tracking steps")
    s.add_argument("--image-steps", type=int, default=700, help="single-frame point-prompt steps run first")
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--log")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", help="stage B: adapters and prompt MLP")
    s.add_argument("--data", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--steps", type=int, default=700)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--frames", type=int, default=4, help="training window length in frames")
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--no-hsa", action="store_true")
    s.add_argument("--no-vta", action="store_true")
    s.add_argument("--no-tva", action="store_true")
    s.add_argument("--mlp-only", action="store_true", help="no adapters at all; only the prompt MLP trains")
    s.add_argument("--warm-steps", type=int, default=0, help="single-frame (T=1) steps run before the clip steps")
    s.add_argument("--log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-cme", help="stage C: conditional memory encoder")
    s.add_argument("--data", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--steps", type=int, default=150)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--lambda", dest="lam", type=float, default=StreamConfig.lam)
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--log")
    s.set_defaults(func=cmd_train_cme)

    for name, func, help_ in (("eval", cmd_eval, "score a checkpoint on a dataset"),
                              ("infer", cmd_infer, "segment one video directory")):
        s = sub.add_parser(name, help=help_)
        if name == "eval":
            s.add_argument("--data", required=True)
            s.add_argument("--out", help="CSV path (default: inside the data directory)")
        else:
            s.add_argument("--video", required=True)
            s.add_argument("--caption", required=True)
            s.add_argument("--out", required=True)
        s.add_argument("--ckpt", required=True)
        s.add_argument("--cme", choices=CME_MODES, default="on")
        s.add_argument("--window", type=int, default=StreamConfig.clip_len)
        s.add_argument("--lambda", dest="lam", type=float, default=StreamConfig.lam)
        s.set_defaults(func=func)

    s = sub.add_parser("bench-hsa", help="pair counts and wall time of HSA against dense attention")
    s.add_argument("--hw", type=_hw, default=(16, 16))
    s.add_argument("--t", type=int, default=4)
    s.add_argument("--p", type=int, default=4)
    s.add_argument("--width", type=int, default=ModelConfig.bottleneck)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--seed", type=int, default=seed)
    s.set_defaults(func=cmd_bench_hsa)

    s = sub.add_parser("ablate", help="train/eval batches reproducing the ablation tables")
    s.add_argument("--suite", choices=("table2", "patch", "cme"), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--budget", help="JSON file overriding the training budget")
    s.add_argument("--seed", type=int, default=seed)
    s.set_defaults(func=cmd_ablate)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    path = _existing(args.config)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest == "lambda":
            dest = "lam"
        if dest not in known:
            raise CliError(f"{path}: unknown option {key!r} for {args.command}")
        defaults[dest] = tuple(value) if dest == "hw" else value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        parser = build_parser()
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        args.func(args)
    except CliError as exc:
        print(f"samwise: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"samwise: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
