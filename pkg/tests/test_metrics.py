import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from m2r.core import BinaryMask, Contour, GridSpec, ValidationError
from m2r.metrics import (boundary_nodes, dice, directed_distances, evaluate, hausdorff,
                         hausdorff_percentile, nearest_rank, point_segment_distance,
                         point_triangle_distance)
from m2r.synth import primitive, sphere_mesh


def dice_oracle(a, b):
    a, b = a.ravel().tolist(), b.ravel().tolist()
    inter = sum(1 for x, y in zip(a, b) if x and y)
    return 2.0 * inter / (sum(a) + sum(b))


def hd_oracle(a, b):
    d = [min(np.sqrt(sum((p - q) ** 2 for p, q in zip(x, y))) for y in b) for x in a]
    e = [min(np.sqrt(sum((p - q) ** 2 for p, q in zip(x, y))) for y in a) for x in b]
    return max(max(d), max(e)), max(d), max(e)


@pytest.mark.parametrize("seed", range(20))
def test_dice_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    g = GridSpec(tuple(rng.integers(3, 12, size=rng.integers(2, 4))))
    a = rng.random(g.dims) < 0.4
    b = rng.random(g.dims) < 0.6
    a.flat[0] = True
    assert abs(dice(BinaryMask(g, a), BinaryMask(g, b)) - dice_oracle(a, b)) <= 1e-12
    assert dice(BinaryMask(g, a), BinaryMask(g, b)) == dice(BinaryMask(g, b), BinaryMask(g, a))


@pytest.mark.parametrize("seed", range(20))
def test_point_set_hausdorff_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((int(rng.integers(1, 30)), 2))
    b = rng.random((int(rng.integers(1, 30)), 2))
    got = hausdorff(a, b)
    assert np.allclose(got, hd_oracle(a, b), rtol=0, atol=1e-12)


def test_pruned_path_matches_brute():
    rng = np.random.default_rng(1)
    a, b = rng.random((3000, 3)), rng.random((2500, 3))
    # above the brute-force size bound the tree path is used
    from scipy.spatial.distance import cdist
    oracle = cdist(a, b).min(axis=1)
    assert np.allclose(directed_distances(a, b), oracle, rtol=0, atol=1e-12)


def test_dice_examples():
    g = GridSpec((9, 9))
    m = np.zeros(g.dims, bool)
    m[2:5, 2:5] = True
    other = np.zeros(g.dims, bool)
    other[6:, 6:] = True
    assert dice(BinaryMask(g, m), BinaryMask(g, m)) == 1.0
    assert dice(BinaryMask(g, m), BinaryMask(g, other)) == 0.0
    with pytest.raises(ValidationError):
        dice(BinaryMask(g, m), BinaryMask(GridSpec((5, 5)), np.ones((5, 5), bool)))


def test_half_overlap_squares():
    a, _ = primitive("square", dims=257, side=0.4, center=(0.4, 0.5))
    b, _ = primitive("square", dims=257, side=0.4, center=(0.6, 0.5))
    assert dice(a, b) == pytest.approx(0.5, abs=1.0 / 256 / 0.4)


def test_hausdorff_examples():
    assert hausdorff([[0.1, 0.1]], [[0.4, 0.1]]) == pytest.approx((0.3, 0.3, 0.3))
    pts = np.random.default_rng(0).random((10, 2))
    assert hausdorff(pts, pts) == (0.0, 0.0, 0.0)
    with pytest.raises(ValidationError):
        hausdorff(np.zeros((0, 2)), pts)


def square(side, n_per_side=40):
    from m2r.synth import square_points
    return Contour(square_points((0.5, 0.5), side, n_per_side))


def test_dilated_square():
    inner, outer = square(0.4), square(0.44)
    sym, ab, ba = hausdorff(inner, outer)
    assert ab == pytest.approx(0.02, abs=1e-12)  # inner vertices to outer edges
    assert ba == pytest.approx(0.02 * np.sqrt(2), abs=1e-12)  # outer corners
    assert sym == ba


def test_point_segment_and_triangle():
    p = np.array([[0.5, 1.0], [2.0, 0.0], [-1.0, 0.0]])
    a, b = np.zeros((3, 2)), np.tile([1.0, 0.0], (3, 1))
    assert np.allclose(point_segment_distance(p, a, b), [1.0, 1.0, 1.0])
    tri = [np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]]), np.array([[0.0, 1, 0]])]
    q = np.array([[0.2, 0.2, 0.5], [2.0, 0.0, 0.0], [-1.0, -1.0, 0.0], [1.0, 1.0, 0.0]])
    want = [0.5, 1.0, np.sqrt(2), np.sqrt(0.5)]
    got = point_triangle_distance(q, *(np.repeat(t, 4, axis=0) for t in tri))
    assert np.allclose(got, want, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_triangle_distance_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.random((3, 1, 3))
    p = rng.random((5, 3)) * 2 - 0.5
    # dense barycentric sampling is an upper bound that converges from above
    s = np.linspace(0, 1, 201)
    u, v = np.meshgrid(s, s)
    keep = u + v <= 1
    samples = a + u[keep, None] * (b - a) + v[keep, None] * (c - a)
    approx = np.min(np.linalg.norm(p[:, None] - samples[None], axis=2), axis=1)
    got = point_triangle_distance(p, *(np.repeat(x, 5, axis=0) for x in (a, b, c)))
    assert np.all(got <= approx + 1e-12)
    assert np.all(approx - got <= 0.01 * np.linalg.norm(b - a + c - a) + 1e-12)


def test_nearest_rank():
    v = np.zeros(100)
    v[0] = 1.0
    assert nearest_rank(v, 100) == 1.0
    assert nearest_rank(v, 99) == 0.0
    assert nearest_rank(np.r_[np.zeros(100), 1.0], 99) == 0.0
    assert nearest_rank(np.arange(100.0), 99.5) == 99.0
    vals = np.random.default_rng(0).random(57)
    pct = np.linspace(1, 100, 50)
    assert np.all(np.diff([nearest_rank(vals, p) for p in pct]) >= 0)
    with pytest.raises(ValidationError):
        nearest_rank(vals, 0)


def test_percentile_at_100_is_directed_max():
    rng = np.random.default_rng(3)
    a, b = rng.random((40, 2)), rng.random((30, 2))
    assert hausdorff_percentile(a, b, 100) == hausdorff(a, b)[1]
    assert hausdorff_percentile(a, a, 50) == 0.0


def test_mask_boundary_nodes():
    g = GridSpec((5, 5))
    m = np.zeros(g.dims, bool)
    m[1:4, 1:4] = True
    nodes = boundary_nodes(BinaryMask(g, m))
    assert len(nodes) == 8 and not np.any(np.all(nodes == 0.5, axis=1))


def test_mesh_distance_is_surface_distance():
    mesh = sphere_mesh((0.5, 0.5, 0.5), 0.25, 2)
    probe = np.array([[0.5, 0.5, 0.5]])
    d = directed_distances(probe, mesh)[0]
    assert 0.25 * np.cos(np.pi / 8) < d <= 0.25 + 1e-12


def test_evaluate_row():
    a, ca = primitive("disk", dims=65, radius=0.25)
    row = evaluate("disk", ca, ca, a, a)
    assert row.values()[:6] == ("disk", 1.0, 0.0, 0.0, 0.0, 0.0)
    assert np.isnan(evaluate("x", ca, ca).dice)
