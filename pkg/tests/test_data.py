import hashlib
import json

import numpy as np
import pytest

from samwise.data import (
    LEXICON,
    SCENARIOS,
    SynthConfig,
    generate,
    generate_suite,
    object_masks,
    read_dataset,
    read_video,
    tokenize,
    write_dataset,
)


def test_tokenize_examples():
    ids, flags = tokenize("the red square moving left")
    assert ids[0] == LEXICON.id("[CLS]") == 0
    assert len(ids) == 6
    assert flags == [False, False, False, False, True, False]
    assert tokenize("") == ([0], [False])
    assert not any(tokenize("the square")[1])
    with pytest.raises(KeyError, match="purple"):
        tokenize("the purple square")


def test_static_target_without_distractors():
    v = generate(3, "static-target", SynthConfig(n_distractors=0))
    assert len(v.shapes) == 1
    assert v.target.color in v.caption and v.target.kind in v.caption
    assert v.target_masks.reshape(v.target_masks.shape[0], -1).any(1).all()


def test_late_appearing_is_empty_before_onset():
    cfg = SynthConfig(T_V=12)
    for seed in range(20):
        v = generate(seed, "late-appearing", cfg)
        t0 = v.appear_frame
        assert t0 >= 2
        assert not v.target_masks[:t0 - 1].any()
        assert v.target_masks[t0 - 1:].reshape(12 - t0 + 1, -1).any(1).all()
    forced = generate(0, "late-appearing", cfg)
    forced.shapes[0].appear_frame = 4
    assert not any(forced.shapes[0].rasterize(t, 32, 32).any() for t in range(3))


def test_generation_is_deterministic():
    for s in SCENARIOS:
        a, b = generate(7, s), generate(7, s)
        assert np.array_equal(a.frames, b.frames) and a.caption == b.caption
    assert not np.array_equal(generate(7, "static-target").frames, generate(8, "static-target").frames)


def test_captions_are_unambiguous():
    """No other shape on screen fits the caption."""
    for v in generate_suite(SCENARIOS, 40, seed=100):
        assert all(s.caption() != v.caption for s in v.shapes[1:])
        if v.scenario in ("action-disambiguation", "late-appearing"):
            assert v.shapes[1].look == v.target.look and v.shapes[1].action != v.target.action


def test_unsatisfiable_config():
    with pytest.raises(ValueError):
        generate(0, "multi-instance", SynthConfig(H=8, W=8, n_distractors=6, max_attempts=5))
    with pytest.raises(ValueError):
        generate(0, "zoom-in")


def test_object_masks_first_row_is_target():
    v = generate(4, "multi-instance", SynthConfig(n_distractors=2))
    objs = object_masks(v)
    assert objs.shape[:2] == (3, v.frames.shape[0])
    assert np.array_equal(objs[0], v.target_masks)


def test_round_trip(tmp_path):
    videos = generate_suite(SCENARIOS, 5, seed=50)
    write_dataset(videos, tmp_path / "ds")
    back = read_dataset(tmp_path / "ds")
    for a, b in zip(videos, back):
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.target_masks, b.target_masks)
        assert a.caption == b.caption and a.shapes == b.shapes


def test_truncated_frame_names_the_file(tmp_path):
    write_dataset([generate(1, "static-target")], tmp_path)
    vdir = tmp_path / "static-target-1"
    f = vdir / "frame_0002.ppm"
    f.write_bytes(f.read_bytes()[:-10])
    meta = json.loads((vdir / "meta.json").read_text())
    meta["files"].pop("frame_0002.ppm")  # bypass the checksum to reach the decoder
    (vdir / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="frame_0002.ppm"):
        read_video(vdir)


def test_checksum_and_scenario_errors(tmp_path):
    write_dataset([generate(2, "static-target")], tmp_path)
    vdir = tmp_path / "static-target-2"
    f = vdir / "frame_0000.ppm"
    raw = bytearray(f.read_bytes())
    raw[-1] ^= 1
    f.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="checksum"):
        read_video(vdir)
    meta = json.loads((vdir / "meta.json").read_text())
    meta["scenario"] = "occlusion"
    (vdir / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="scenario"):
        read_video(vdir)


def test_dataset_directory_is_reproducible(tmp_path):
    def digest(root):
        h = hashlib.sha256()
        for p in sorted(root.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(root)).encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    write_dataset(generate_suite(SCENARIOS, 4, seed=9), tmp_path / "a")
    write_dataset(generate_suite(SCENARIOS, 4, seed=9), tmp_path / "b")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
