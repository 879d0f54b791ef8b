import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import fuse_loop, label_loop
from samwise.cme import CME, cme_loss, fuse, self_label, triggers
from samwise.layers import Attention, seeded_init_
from samwise.numeric import SeededRng


def test_label_cases():
    z = np.zeros((4, 4), bool)
    a = z.copy(); a[0, 0] = True
    b = z.copy(); b[3, 3] = True
    assert self_label(a, b) == 1
    assert self_label(a, a) == 0
    assert self_label(a, z) == 0  # empty candidate
    assert self_label(z, b) == 1  # nothing tracked, candidate present


def test_label_batch_numpy_and_torch_agree():
    rng = SeededRng(21)
    ym = rng.uniform((50, 5, 5)) < 0.1
    yl = rng.uniform((50, 5, 5)) < 0.1
    ref = [label_loop(a, b) for a, b in zip(ym, yl)]
    assert self_label(ym, yl).tolist() == ref
    assert self_label(torch.from_numpy(ym), torch.from_numpy(yl)).tolist() == ref


def test_fuse_against_loop():
    rng = SeededRng(22)
    for _ in range(100):
        pm, pl = rng.normal((6, 6)), rng.normal((6, 6))
        lam = rng.uniform()
        got = fuse(torch.from_numpy(pm), torch.from_numpy(pl), lam).numpy()
        assert np.abs(got - fuse_loop(pm, pl, lam)).max() <= 1e-12


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-5, 5)),
       # subnormal logits underflow to zero once scaled
       arrays(np.float64, (4, 4), elements=st.floats(-5, 5, allow_subnormal=False)),
       st.floats(0.01, 1.0))
def test_fuse_properties(pm, pl, lam):
    out = fuse(torch.from_numpy(pm), torch.from_numpy(pl), lam).numpy()
    off = pl <= 0
    assert np.array_equal(out[off], pm[off])
    assert np.array_equal(out[~off], lam * pl[~off])
    # the candidate's own pixels stay positive after scaling
    assert (out[~off] > 0).all()


def test_trigger_is_strict():
    p = torch.tensor([0.5, 0.5 + 1e-12, 0.5 - 1e-12, 0.0, 1.0])
    assert triggers(p).tolist() == [False, True, False, False, True]


def test_detector_starts_at_one_half():
    cme = CME(8)
    seeded_init_(cme, 3)
    cme.zero_phi_()
    t2f = Attention(8, 1)
    seeded_init_(t2f, 4)
    cme.sync_from_decoder(t2f)
    rng = SeededRng(5)
    p = cme.detect(torch.from_numpy(rng.normal((3, 8))), torch.from_numpy(rng.normal((3, 8))))
    assert p.tolist() == [0.5, 0.5, 0.5]
    assert not triggers(p).any()


def test_memoryless_token_uses_frozen_copy():
    cme = CME(8)
    t2f = Attention(8, 2)
    seeded_init_(t2f, 6)
    with pytest.raises(RuntimeError):
        cme.memoryless_token(torch.zeros(1, 4, 8), torch.zeros(1, 8), torch.zeros(4, 8))
    cme.sync_from_decoder(t2f)
    assert all(not p.requires_grad for p in cme.ca.parameters())
    rng = SeededRng(7)
    feats = torch.from_numpy(rng.normal((2, 4, 8)))
    rho = torch.from_numpy(rng.normal((2, 8)))
    pe = torch.from_numpy(rng.normal((4, 8)))
    ref = t2f(rho.unsqueeze(1), feats + pe, feats)[:, 0]
    assert torch.equal(cme.memoryless_token(feats, rho, pe), ref)


def test_bce_closed_form():
    p = torch.tensor([0.9, 0.2])
    y = torch.tensor([1, 0])
    expected = -(np.log(0.9) + np.log(0.8)) / 2
    assert cme_loss(p, y).item() == pytest.approx(expected, abs=1e-14)
    with pytest.raises(ValueError):
        cme_loss(p, torch.tensor([1]))
