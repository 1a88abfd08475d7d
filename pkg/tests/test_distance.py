import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import cKDTree

from m2r.core import BinaryMask, GridSpec, ScalarField, ValidationError
from m2r.distance import sample_gradient, sample_value, signed_distance_transform
from m2r.synth import primitive

from conftest import linear_field, sdf_from_values


def test_disk_centre_and_outside(disk257_sdf):
    h = disk257_sdf.grid.cell_width
    assert abs(sample_value(disk257_sdf, (0.5, 0.5)) + 0.25) <= h
    assert abs(sample_value(disk257_sdf, (1.0, 0.5)) - 0.25) <= h


def test_boundary_node_small(disk257_sdf):
    # (0.75, 0.5) is a node on the analytic circle
    assert abs(sample_value(disk257_sdf, (0.75, 0.5))) <= disk257_sdf.grid.cell_width


def test_sampling_nodes_cells_and_clamping(disk257_sdf):
    g = disk257_sdf.grid
    vals = disk257_sdf.field.values
    assert sample_value(disk257_sdf, (0.25, 0.5)) == vals[64, 128]
    h = g.cell_width
    centre = sample_value(disk257_sdf, (10.5 * h, 20.5 * h))
    assert centre == pytest.approx(vals[10:12, 20:22].mean(), abs=1e-15)
    assert sample_value(disk257_sdf, (1.2, 0.5)) == sample_value(disk257_sdf, (1.0, 0.5))


def test_gradient_linear_and_constant():
    g = GridSpec((9, 7))
    lin = sdf_from_values(linear_field(g, (1.0, 0.0), -0.5))
    pts = np.random.default_rng(0).random((20, 2))
    assert np.allclose(sample_gradient(lin, pts), [1.0, 0.0], atol=1e-12)
    const = sdf_from_values(ScalarField(g, np.full(g.dims, -1.0)))
    assert np.array_equal(sample_gradient(const, pts), np.zeros((20, 2)))


def test_gradient_disk_radial(disk257_sdf):
    grad = sample_gradient(disk257_sdf, (0.9, 0.5))
    assert np.allclose(grad, [1.0, 0.0], atol=0.05)
    # central differences of the interpolant agree
    e = 1e-3
    fd = [(sample_value(disk257_sdf, (0.9 + e, 0.5)) - sample_value(disk257_sdf, (0.9 - e, 0.5))) / (2 * e),
          (sample_value(disk257_sdf, (0.9, 0.5 + e)) - sample_value(disk257_sdf, (0.9, 0.5 - e))) / (2 * e)]
    assert np.allclose(grad, fd, atol=0.05)


def test_gradient_zero_outside_domain():
    g = GridSpec((5, 5))
    lin = sdf_from_values(linear_field(g, (1.0, 1.0), -1.0))
    grad = sample_gradient(lin, (1.3, 0.5))
    assert grad[0] == 0.0 and grad[1] == pytest.approx(1.0)


def test_sign_consistency(disk257, disk257_sdf):
    mask = disk257[0]
    d = disk257_sdf.field.values
    assert np.all(d[mask.bits] < 0) and np.all(d[~mask.bits] > 0)


def test_complement_symmetry(disk257, disk257_sdf):
    comp = signed_distance_transform(BinaryMask(disk257[0].grid, ~disk257[0].bits))
    h = disk257_sdf.grid.cell_width
    assert np.max(np.abs(comp.field.values + disk257_sdf.field.values)) <= h


def _brute_force(mask: BinaryMask):
    """Distance to the nearest node of opposite label, minus half a cell."""
    pts = mask.grid.node_points()
    lab = mask.flat
    d_in = cKDTree(pts[~lab]).query(pts[lab])[0]
    d_out = cKDTree(pts[lab]).query(pts[~lab])[0]
    out = np.empty(len(pts))
    half = 0.5 * mask.grid.h.min()
    out[lab] = -(d_in - half)
    out[~lab] = d_out - half
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(17, 23), (33, 33), (65, 40), (9, 11, 13), (17, 17, 17)]))
def test_matches_brute_force_oracle(seed, dims):
    rng = np.random.default_rng(seed)
    g = GridSpec(dims)
    bits = rng.random(g.dims) < rng.uniform(0.05, 0.6)
    bits.flat[0], bits.flat[-1] = True, False
    mask = BinaryMask(g, bits)
    sdf = signed_distance_transform(mask)
    assert np.max(np.abs(sdf.field.flat - _brute_force(mask))) <= g.cell_diagonal


def cell_centres(grid):
    h = grid.h
    axes = [(np.arange(d - 1) + 0.5) * s for d, s in zip(grid.dims, h)]
    return np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)


def eikonal_norms(sdf, pts):
    g = sdf.grid
    d = sdf.value(pts)
    edge = np.min(np.minimum(pts, 1 - pts), axis=1)
    keep = (np.abs(d) > 2 * g.cell_width) & (edge > 2 * g.cell_width)
    return np.linalg.norm(sample_gradient(sdf, pts[keep]), axis=1)


@pytest.mark.parametrize("kind,dims", [("disk", 257), ("sphere", 65)])
def test_eikonal_at_cell_centres(kind, dims):
    mask, _ = primitive(kind, dims=dims)
    sdf = signed_distance_transform(mask)
    norms = eikonal_norms(sdf, cell_centres(mask.grid))
    assert norms.min() >= 0.8 and norms.max() <= 1.2


@pytest.mark.parametrize("kind,dims", [("disk", 257), ("sphere", 65)])
def test_eikonal_random_points_mostly_unit(kind, dims):
    # inside a cell crossed by a ridge of the staircase boundary the
    # multilinear gradient can dip slightly below 0.8
    mask, _ = primitive(kind, dims=dims)
    sdf = signed_distance_transform(mask)
    pts = np.random.default_rng(1).random((20000, mask.grid.ndim))
    norms = eikonal_norms(sdf, pts)
    inside = (norms >= 0.8) & (norms <= 1.2)
    assert inside.mean() >= 0.999
    assert norms.min() >= 0.6 and norms.max() <= 1.4


def test_requires_mixed_mask():
    with pytest.raises(ValidationError):
        signed_distance_transform(BinaryMask(GridSpec((4, 4)), np.zeros((4, 4), bool)))
