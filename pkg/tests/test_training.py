import math

import pytest
import torch

from samwise.data import generate_suite
from samwise.model import STAGE_PARAMS, Samwise, load_model
from samwise.numeric import SeededRng, grad_check, load_checkpoint
from samwise.training import (
    AdamState,
    TrainConfig,
    adam_step,
    dice_loss,
    focal_loss,
    run_stage,
    stage_b_loss,
)

BIG = 60.0  # sigmoid(60) == 1 in float64


def test_dice_closed_forms():
    n = 9
    ones = torch.ones(3, 3)
    assert dice_loss(torch.full((3, 3), BIG), ones).item() == 0.0
    assert dice_loss(torch.full((3, 3), BIG), torch.zeros(3, 3)).item() == pytest.approx(1 - 1 / (n + 1), abs=1e-15)
    # hard masks |A| = |B| = 2 with one shared pixel, eps -> 0
    logits = torch.tensor([[BIG, BIG, -BIG, -BIG]])
    gt = torch.tensor([[0, 1, 1, 0]])
    assert dice_loss(logits, gt, eps=1e-300).item() == pytest.approx(0.5, abs=1e-12)


def test_focal_closed_forms():
    per_pixel = -0.25 * 0.25 * math.log(0.5)
    assert focal_loss(torch.zeros(1, 1), torch.ones(1, 1)).item() == pytest.approx(per_pixel, abs=1e-15)
    assert round(per_pixel, 5) == 0.04332
    x = torch.from_numpy(SeededRng(1).normal((4, 4)))
    g = torch.from_numpy(SeededRng(2).uniform((4, 4)) < 0.5)
    bce = torch.nn.functional.binary_cross_entropy_with_logits(x, g.double())
    assert focal_loss(x, g, alpha=0.5, gamma=0.0).item() == pytest.approx(0.5 * bce.item(), abs=1e-14)


def test_loss_gradients():
    x = torch.from_numpy(SeededRng(3).normal((5, 5))).requires_grad_()
    g = torch.from_numpy(SeededRng(4).uniform((5, 5)) < 0.4)
    assert grad_check(lambda: dice_loss(x, g), [x], h=1e-6) <= 1e-4
    assert grad_check(lambda: focal_loss(x, g), [x], h=1e-6) <= 1e-4


def reference_adam(x0, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v, trace = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        trace.append(x)
    return trace


def test_adam_matches_reference_trace():
    p = torch.tensor([1.5], requires_grad=True)
    state = AdamState()
    trace = []
    for _ in range(5):
        adam_step([p], [2 * (p.detach() - 0.25)], 0.1, state)
        trace.append(p.item())
    assert trace == pytest.approx(reference_adam(1.5, lambda x: 2 * (x - 0.25), 0.1, 5), abs=1e-14)


def test_adam_basic_laws():
    p = torch.tensor([1.0], requires_grad=True)
    adam_step([p], [torch.zeros(1)], 0.1, AdamState())
    assert p.item() == 1.0
    adam_step([p], [2 * p.detach()], 0.1, AdamState())
    assert p.item() < 1.0


def test_stage_masks_and_lr():
    m = Samwise()
    for stage, prefixes in STAGE_PARAMS.items():
        m.set_trainable(stage)
        for name, p in m.named_parameters():
            assert p.requires_grad == (name.startswith(prefixes) and not name.startswith("cme.ca."))
    with pytest.raises(ValueError):
        TrainConfig(stage="B", lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(stage="D")


@pytest.fixture(scope="module")
def tiny_set():
    return generate_suite(["static-target", "multi-instance"], 4, seed=40)


def test_zero_steps_round_trip(tmp_path, tiny_set):
    m = Samwise()
    run_stage(m, tiny_set, TrainConfig(stage="B", steps=0), out=tmp_path / "ck")
    back, meta = load_model(tmp_path / "ck")
    assert meta["stage"] == "B"
    for (n, a), (_, b) in zip(m.state_dict().items(), back.state_dict().items()):
        assert torch.equal(a, b), n


def test_equal_seeds_give_identical_checkpoints(tmp_path, tiny_set):
    for name in ("a", "b"):
        run_stage(Samwise(), tiny_set, TrainConfig(stage="B", steps=2, batch=2, frames=4, lr=1e-3),
                  out=tmp_path / name)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_stage_b_step0_matches_frozen_baseline(tiny_set):
    m = Samwise()
    base = Samwise()
    base.cfg.use_adapters = False
    cfg = TrainConfig(stage="B", batch=2, frames=4)
    a, *_ = stage_b_loss(m, tiny_set, [0, 2], SeededRng(1), cfg)
    b, *_ = stage_b_loss(base, tiny_set, [0, 2], SeededRng(1), cfg)
    assert a.item() == b.item()


def test_training_leaves_frozen_weights_and_cme_copy(tmp_path, tiny_set):
    m = Samwise()
    before = {n: p.clone() for n, p in m.named_parameters()}
    run_stage(m, tiny_set, TrainConfig(stage="A", steps=1, batch=2, frames=2))
    for n, p in m.named_parameters():
        if not n.startswith(STAGE_PARAMS["A"]):
            if not n.startswith("cme.ca."):
                assert torch.equal(p, before[n]), n
    for (n, a), (_, b) in zip(m.cme.ca.named_parameters(), m.sam.decoder.token_to_feature.named_parameters()):
        assert torch.equal(a, b), n


def test_nan_aborts_with_last_good_weights(tmp_path, tiny_set):
    m = Samwise()
    with torch.no_grad():
        m.prompt.mlp.layers[0].weight.fill_(float("nan"))
    from samwise.training import TrainingDiverged

    with pytest.raises(TrainingDiverged, match="step 0"):
        run_stage(m, tiny_set, TrainConfig(stage="B", steps=3, batch=2, frames=2), out=tmp_path / "ck")
    tensors, meta = load_checkpoint(tmp_path / "ck")
    assert meta["diverged_at"] == 0
