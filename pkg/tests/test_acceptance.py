"""Acceptance criteria 1-11, one test each, one PASS/FAIL line each.

Criteria 8 and 9 train from the stored stage-A backbone (artifacts/backbone,
built by scripts/pretrain_backbone.py) into a fresh work directory. Set
SAMWISE_ACCEPT_WORK to a directory to reuse trained checkpoints between runs;
the reported times then cover evaluation only.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import randomize_zero_inits
from oracles import f_loop, fuse_loop, iou_loop, label_loop
from samwise import experiments
from samwise.cli import main as cli_main
from samwise.cme import fuse, self_label, triggers
from samwise.cmt import HSA, pair_counts
from samwise.config import StreamConfig
from samwise.data import SCENARIOS, generate_suite
from samwise.layers import seeded_init_
from samwise.metrics import contour_f, region_j
from samwise.model import Samwise
from samwise.numeric import SeededRng, grad_check, grid_pe, sinusoidal_pe_1d
from samwise.pipeline import caption_tensors, run_video
from samwise.training import TrainConfig, stage_a_loss, stage_b_loss, stage_c_loss


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        return ok
    return emit


def rand(rng, *shape):
    return torch.from_numpy(rng.normal(shape))


def dense_attention_reference(hsa, x):
    b, t, h, w, c = x.shape
    pe = (grid_pe(h, w, c).reshape(1, h * w, c) + sinusoidal_pe_1d(range(t), c)[:, None]).reshape(t * h * w, c)
    tokens = x.reshape(b, t * h * w, c) + pe
    return hsa.attn(tokens, tokens, tokens).reshape(b, t, h, w, c)


def test_criterion_01_hsa_equals_dense_when_patch_covers_map(report):
    t0 = time.time()
    rng = SeededRng(101)
    worst = 0.0
    with torch.no_grad():
        for trial in range(50):
            t = rng.integers(1, 5)
            s = rng.integers(1, 9)
            c = rng.choice([4, 8])
            hsa = HSA(c, heads=rng.choice([1, 2]))
            seeded_init_(hsa, trial)
            x = rand(rng, rng.integers(1, 3), t, s, s, c)
            worst = max(worst, (hsa(x, s) - dense_attention_reference(hsa, x)).abs().max().item())
    secs = time.time() - t0
    assert report(1, worst <= 1e-10 and secs < 10, f"max |HSA - dense| = {worst:.2e} over 50 instances ({secs:.1f}s)")


def test_criterion_02_hsa_locality(report):
    t0 = time.time()
    rng = SeededRng(102)
    leaks = 0
    with torch.no_grad():
        for trial in range(100):
            p = rng.choice([1, 2, 4])
            h, w = p * rng.integers(1, 4), p * rng.integers(1, 4)
            t = rng.integers(1, 4)
            hsa = HSA(4, heads=rng.choice([1, 2]))
            seeded_init_(hsa, 1000 + trial)
            x = rand(rng, 1, t, h, w, 4)
            ft, i, j = rng.integers(0, t), rng.integers(0, h), rng.integers(0, w)
            y = x.clone()
            y[0, ft, i, j] += rng.normal(4)[0] + 2.0
            changed = (hsa(y, p) != hsa(x, p)).any(-1)[0]
            inside = torch.zeros(t, h, w, dtype=torch.bool)
            inside[:, i // p * p:(i // p + 1) * p, j // p * p:(j // p + 1) * p] = True
            leaks += int(changed[~inside].any())
    secs = time.time() - t0
    assert report(2, leaks == 0 and secs < 10, f"{leaks}/100 trials changed outputs outside the sub-volume ({secs:.1f}s)")


def _equal_length_pair(videos):
    by_len = {}
    for i, v in enumerate(videos):
        by_len.setdefault(caption_tensors([v.caption])[0].shape[1], []).append(i)
    return next(ix[:2] for ix in by_len.values() if len(ix) >= 2)


def test_criterion_03_gradient_suite(report):
    t0 = time.time()
    videos = generate_suite(("late-appearing", "multi-instance"), 8, 103)
    idx = _equal_length_pair(videos)
    model = randomize_zero_inits(Samwise(), seed=3)
    losses = {"A": stage_a_loss, "B": stage_b_loss, "C": stage_c_loss}
    worst, names = {}, 0
    for stage, fn in losses.items():
        model.set_trainable(stage)
        cfg = TrainConfig(stage=stage, steps=1, batch=2, frames=3)
        f = lambda: fn(model, videos, idx, SeededRng(7), cfg)[0]
        errs = []
        for name, p in model.trainable_named():
            errs.append((grad_check(f, [p], h=1e-5, max_coords=2, rng=SeededRng(names)), name))
            names += 1
        worst[stage] = max(errs)
    model.set_trainable(None)
    secs = time.time() - t0
    top = max(worst.values())
    ok = top[0] <= 1e-4 and secs < 300
    detail = ", ".join(f"stage {s} {e:.1e} ({n})" for s, (e, n) in worst.items())
    assert report(3, ok, f"worst relative error per stage: {detail}; {names} parameter tensors ({secs:.0f}s)")


def test_criterion_04_zero_init_transparency(report, backbone_model):
    t0 = time.time()
    model = backbone_model  # adapters zero-initialised, phi zero
    with torch.no_grad():
        zeros = [a.up_v.weight for a in model.cmt.values()] + [a.up_t.weight for a in model.cmt.values()]
        assert all(not w.any() for w in zeros + [model.cme.phi.weight, model.cme.phi.bias])
    plain = experiments.with_config(model, use_adapters=False)
    same, ps = True, []
    for v in generate_suite(SCENARIOS, 4, 104):
        a = run_video(model, iter(v.frames), v.caption, StreamConfig(cme_mode="on"))
        b = run_video(plain, iter(v.frames), v.caption, StreamConfig(cme_mode="off"))
        same &= bool(np.array_equal(a.masks, b.masks))
        ps += a.p_detect
        same &= not any(a.fired)
    secs = time.time() - t0
    ok = same and all(p == 0.5 for p in ps) and secs < 30
    assert report(4, ok, f"masks bit-identical to adapter-free baseline: {same}; p_detect values {sorted(set(ps))} ({secs:.1f}s)")


def test_criterion_05_causality(report, busy_model):
    t0 = time.time()
    bad = 0
    rng = SeededRng(105)
    for v in generate_suite(SCENARIOS, 20, 105):
        full = run_video(busy_model, iter(v.frames), v.caption).masks
        c = rng.integers(1, 3)
        part = run_video(busy_model, iter(v.frames[:4 * c]), v.caption).masks
        bad += int(not np.array_equal(part, full[:4 * c]))
    secs = time.time() - t0
    assert report(5, bad == 0 and secs < 60, f"{bad}/20 truncated streams differed ({secs:.1f}s)")


def test_criterion_06_cme_label_and_fusion_oracles(report):
    t0 = time.time()
    rng = SeededRng(106)
    label_bad = 0
    for _ in range(1000):
        s = rng.integers(1, 9)
        ym = rng.uniform((s, s)) < rng.uniform()
        yl = rng.uniform((s, s)) < rng.uniform() * 0.5
        label_bad += int(self_label(ym, yl) != label_loop(ym, yl))
    fuse_err = 0.0
    for _ in range(1000):
        pm, pl = rng.normal((5, 5)) * 3, rng.normal((5, 5)) * 3
        lam = rng.uniform(None, 1e-3, 1.0)
        got = fuse(torch.from_numpy(pm), torch.from_numpy(pl), lam).numpy()
        fuse_err = max(fuse_err, float(np.abs(got - fuse_loop(pm, pl, lam)).max()))
    half = np.float64(0.5)
    strict = triggers(torch.tensor([half, np.nextafter(half, 1), np.nextafter(half, 0)])).tolist() == [False, True, False]
    secs = time.time() - t0
    ok = label_bad == 0 and fuse_err <= 1e-12 and strict and secs < 30
    assert report(6, ok, f"label mismatches {label_bad}/1000, fuse max err {fuse_err:.1e}, strict at 0.5: {strict} ({secs:.1f}s)")


def test_criterion_07_metric_oracles(report):
    t0 = time.time()
    rng = SeededRng(107)
    mism = 0
    for _ in range(500):
        y = rng.uniform((8, 8)) < rng.uniform()
        g = rng.uniform((8, 8)) < rng.uniform()
        mism += int(region_j(y, g) != iou_loop(y, g)) + int(contour_f(y, g) != f_loop(y, g))
    z, full = np.zeros((8, 8), bool), np.ones((8, 8), bool)
    trivial = (region_j(z, z), contour_f(z, z), region_j(full, z), contour_f(full, z),
               region_j(full, full), contour_f(full, full)) == (1.0, 1.0, 0.0, 0.0, 1.0, 1.0)
    secs = time.time() - t0
    ok = mism == 0 and trivial and secs < 30
    assert report(7, ok, f"{mism} exact mismatches over 500 pairs; trivial cases hold: {trivial} ({secs:.1f}s)")


def test_criterion_08_table2_trend(report, work, backbone_model):
    t0 = time.time()
    rows = {r["variant"]: r for r in experiments.table2(work)}
    secs = time.time() - t0
    jf = {k: 100 * r["JF"] for k, r in rows.items()}
    mlp, vt, full = jf["mlp-only"], jf["vta+tva"], jf["hsa+vta+tva"]
    ok = mlp < vt < full and full - mlp >= 10 and secs <= 1800
    (Path(work) / "table2.json").write_text(json.dumps(list(rows.values()), indent=1))
    assert report(8, ok, f"J&F mlp-only {mlp:.1f} < vta+tva {vt:.1f} < hsa+vta+tva {full:.1f}; "
                         f"gap {full - mlp:.1f} points ({secs / 60:.1f} min)")


def test_criterion_09_cme_effect(report, work, backbone_model):
    # the stage-B model is shared with criterion 8; the clock covers stage C and evaluation
    t0 = time.time()
    rows = {r["cme"]: r for r in experiments.cme_suite(work)}
    secs = time.time() - t0
    off, on, always = (100 * rows[k]["post_J"] for k in ("off", "on", "always"))
    ok = on - off >= 3 and always < on and secs <= 900
    (Path(work) / "cme.json").write_text(json.dumps(list(rows.values()), indent=1))
    assert report(9, ok, f"post-appearance J off {off:.1f}, on {on:.1f} (+{on - off:.1f}), always {always:.1f}; "
                         f"fire rate {rows['on']['fire_rate']:.2f} ({secs / 60:.1f} min)")


def test_criterion_10_cost_law(report, capsys):
    t0 = time.time()
    rng = SeededRng(110)
    exact = 0
    for _ in range(10):
        p = rng.choice([1, 2, 4])
        h, w, t = p * rng.integers(1, 5), p * rng.integers(1, 5), rng.integers(1, 5)
        hsa, dense = pair_counts(h, w, t, p)
        exact += int(hsa == h * w * p * p * t * t and dense == (t * h * w) ** 2)
    code = cli_main(["bench-hsa", "--hw", "16,16", "--t", "4", "--p", "4"])
    r = json.loads(capsys.readouterr().out)
    secs = time.time() - t0
    ok = code == 0 and exact == 10 and r["pair_ratio"] == 1 / 16 and r["time_ratio"] < 0.5 and secs < 60
    assert report(10, ok, f"{exact}/10 configurations exact; at 16x16 T4 P4 pair ratio {r['pair_ratio']}, "
                          f"time ratio {r['time_ratio']:.3f} ({secs:.1f}s)")


def test_criterion_11_parameter_budget(report):
    t0 = time.time()
    b = Samwise().param_budget()
    secs = time.time() - t0
    ok = b["ratio"] <= 0.05 and secs < 5
    assert report(11, ok, f"trainable B+C {b['trainable_bc']} / total {b['total']} = {b['ratio']:.4f} ({secs:.1f}s)")
