import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from m2r.core import (AffineMap, BinaryMask, Contour, DisplacementField, GridSpec,
                      RegistrationParams, ScalarField, TriMesh, ValidationError,
                      nearest_node, node_coordinates)


def test_node_coordinates_examples():
    g = GridSpec((3, 3))
    assert np.array_equal(node_coordinates(g, (0, 0)), [0.0, 0.0])
    assert np.array_equal(node_coordinates(g, (1, 1)), [0.5, 0.5])
    g3 = GridSpec((129, 129, 129))
    assert np.array_equal(node_coordinates(g3, (128, 0, 64)), [1.0, 0.0, 0.5])


def test_node_coordinates_out_of_range():
    with pytest.raises(ValidationError):
        node_coordinates(GridSpec((3, 3)), (3, 0))
    with pytest.raises(ValidationError):
        node_coordinates(GridSpec((3, 3)), (0, 0, 0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2, 12), min_size=2, max_size=3))
def test_nearest_node_round_trip(dims):
    g = GridSpec(tuple(dims))
    for idx in np.ndindex(*g.dims):
        assert nearest_node(g, node_coordinates(g, idx)) == idx


def test_node_points_are_x_fastest():
    pts = GridSpec((3, 2)).node_points()
    assert np.allclose(pts[:4], [[0, 0], [0.5, 0], [1, 0], [0, 1]])


def test_grid_validation():
    with pytest.raises(ValidationError):
        GridSpec((1, 4))
    with pytest.raises(ValidationError):
        GridSpec((4,))
    with pytest.raises(ValidationError):
        GridSpec((4, 4), spacing=(1.0, -1.0))


def test_field_flat_reshape_round_trip():
    g = GridSpec((4, 3))
    flat = np.arange(12.0)
    f = ScalarField(g, flat)
    assert f.values[1, 0] == 1.0 and f.values[0, 1] == 4.0
    assert np.array_equal(f.flat, flat)
    with pytest.raises(ValidationError):
        ScalarField(g, np.full((4, 3), np.nan))


def test_values_are_immutable():
    f = ScalarField(GridSpec((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_mask_mixed():
    g = GridSpec((3, 3))
    with pytest.raises(ValidationError, match="all-true"):
        BinaryMask(g, np.ones((3, 3), bool)).require_mixed()
    m = BinaryMask(g, np.eye(3, dtype=bool))
    assert m.is_mixed() and m.count() == 3


def test_contour_and_mesh_validation():
    with pytest.raises(ValidationError):
        Contour(np.array([[0, 0], [1, 0]]), closed=True)
    with pytest.raises(ValidationError):
        Contour(np.array([[0, 0], [0, 0], [1, 1]]))
    sq = Contour(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
    assert sq.length() == 4.0 and sq.signed_area() == 1.0
    with pytest.raises(ValidationError, match="degenerate"):
        TriMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), np.array([[0, 1, 2]]))
    with pytest.raises(ValidationError):
        TriMesh(np.eye(3), np.array([[0, 1, 3]]))


def test_displacement_layout():
    g = GridSpec((3, 2))
    vec = np.arange(12.0)
    u = DisplacementField.from_vector(g, vec)
    assert np.array_equal(u.as_vector(), vec)
    assert u.nodal[1, 0, 0] == 6.0
    assert np.array_equal(DisplacementField(g, vec).nodal, u.nodal)
    with pytest.raises(ValidationError):
        DisplacementField(g, np.zeros(5))


def test_affine_params_round_trip():
    a = AffineMap(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([5.0, 6.0]))
    assert np.array_equal(a.params(), [1, 2, 3, 4, 5, 6])
    b = AffineMap.from_params(a.params(), 2)
    assert np.array_equal(b.A, a.A) and np.array_equal(b.t, a.t)
    assert np.allclose(a.apply([[1.0, 0.0]]), [[6.0, 9.0]])


def test_registration_params_validation():
    with pytest.raises(ValidationError):
        RegistrationParams(lambda_schedule=(1e-3, 1e-2))
    with pytest.raises(ValidationError):
        RegistrationParams(alpha=-1.0)
    with pytest.raises(ValidationError):
        RegistrationParams(backend="gpu")
    p = RegistrationParams().replace(alpha=2.0)
    assert p.alpha == 2.0 and p.to_dict()["lambda_schedule"] == [1e-2, 1e-3, 1e-4]
