import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from oracles import boundary_loop, f_loop, iou_loop
from samwise.metrics import boundary, contour_f, jf_mean, region_j, score_video, write_report
from samwise.numeric import SeededRng

masks8 = arrays(bool, (8, 8))


def test_trivial_cases():
    z = np.zeros((8, 8), bool)
    full = np.ones((8, 8), bool)
    assert region_j(z, z) == 1.0 and contour_f(z, z) == 1.0
    assert region_j(full, z) == 0.0 and contour_f(full, z) == 0.0
    assert region_j(full, full) == 1.0 and contour_f(full, full) == 1.0


def test_single_pixel_shift_within_tolerance():
    a = np.zeros((8, 8), bool)
    b = np.zeros((8, 8), bool)
    a[3, 3] = b[4, 4] = True
    assert region_j(a, b) == 0.0
    assert contour_f(a, b, tol=1) == 1.0
    assert contour_f(a, b, tol=0) == 0.0


def test_boundary_of_a_square_is_its_ring():
    m = np.zeros((6, 6), bool)
    m[1:5, 1:5] = True
    ring = m.copy()
    ring[2:4, 2:4] = False
    assert np.array_equal(boundary(m), ring)


def test_metrics_match_loop_oracles_on_500_pairs():
    rng = SeededRng(11)
    for _ in range(500):
        y = rng.uniform((8, 8)) < 0.4
        g = rng.uniform((8, 8)) < 0.4
        assert region_j(y, g) == pytest.approx(iou_loop(y, g), abs=1e-12)
        assert contour_f(y, g) == pytest.approx(f_loop(y, g), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(masks8, masks8)
def test_metric_properties(y, g):
    j, f = region_j(y, g), contour_f(y, g)
    assert 0.0 <= j <= 1.0 and 0.0 <= f <= 1.0
    assert j == region_j(g, y) and f == contour_f(g, y)
    assert region_j(y, y) == 1.0 and contour_f(y, y) == 1.0
    assert np.array_equal(boundary(y), boundary_loop(y))


def test_shape_mismatch_and_bad_tolerance():
    with pytest.raises(ValueError):
        region_j(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        contour_f(np.zeros((2, 2)), np.zeros((2, 2)), tol=-1)


def test_jf_mean_and_report(tmp_path):
    s = jf_mean([1.0, 0.5], [0.0, 0.5])
    assert s.as_tuple() == (0.75, 0.25, 0.5) and s.frames == 2
    with pytest.raises(ValueError):
        jf_mean([], [])
    j, f = score_video(np.zeros((2, 4, 4), bool), np.zeros((2, 4, 4), bool))
    assert j == [1.0, 1.0] and f == [1.0, 1.0]
    path = write_report(tmp_path / "r.csv", [{"video": "v0", "j": 1.0, "f": 0.0}], s)
    lines = path.read_text().splitlines()
    assert lines[0] == "video,J,F,JF" and lines[1].startswith("v0,1.000000,0.000000,0.500000")
    assert lines[-1].startswith("ALL")
