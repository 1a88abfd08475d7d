"""Analytic Jacobians against central finite differences."""

import numpy as np
import pytest

from m2r.core import AffineMap, DisplacementField, GridSpec
from m2r.data_term import curve_quadrature, surface_quadrature
from m2r.distance import signed_distance_transform
from m2r.fem import fe_operators
from m2r.nonrigid import nonrigid_jacobian, nonrigid_residuals
from m2r.parametric import parametric_jacobian, parametric_residuals
from m2r.segmentation import make_circle_contour
from m2r.synth import primitive, sphere_mesh

CONFIGS = 50
EPS = 1e-6


def rel_err(analytic, fd):
    return np.linalg.norm(analytic - fd) / max(np.linalg.norm(analytic), 1e-300)


def _cell_margin(grid, pts):
    s = np.clip(pts, 0, 1) * (np.asarray(grid.dims) - 1)
    return np.min(np.abs(s - np.rint(s)))


@pytest.fixture(scope="module")
def sdf2():
    return signed_distance_transform(primitive("disk", dims=65, radius=0.25)[0])


@pytest.fixture(scope="module")
def sdf3():
    return signed_distance_transform(primitive("ellipsoid", dims=17, radii=(0.3, 0.25, 0.2))[0])


def _parametric_errors(quad, sdf, n, rng):
    errs = []
    while len(errs) < CONFIGS:
        A = np.eye(n) + 0.08 * rng.standard_normal((n, n))
        t = 0.03 * rng.standard_normal(n)
        aff = AffineMap(A, t)
        if _cell_margin(sdf.grid, aff.apply(quad.positions)) < 1e-4:
            continue
        alpha, mu = rng.uniform(0.01, 2.0, 2)
        J = parametric_jacobian(aff, quad, sdf, alpha, mu)
        x = aff.params()
        fd = np.empty_like(J)
        for k in range(len(x)):
            e = np.zeros_like(x)
            e[k] = EPS
            rp = parametric_residuals(AffineMap.from_params(x + e, n), quad, sdf, alpha, mu)
            rm = parametric_residuals(AffineMap.from_params(x - e, n), quad, sdf, alpha, mu)
            fd[:, k] = (rp - rm) / (2 * EPS)
        errs.append(rel_err(J, fd))
    return np.array(errs)


def test_parametric_jacobian_2d(sdf2):
    quad = curve_quadrature(make_circle_contour((0.5, 0.5), 0.2, 40))
    errs = _parametric_errors(quad, sdf2, 2, np.random.default_rng(0))
    assert errs.max() <= 1e-4


def test_parametric_jacobian_3d(sdf3):
    quad = surface_quadrature(sphere_mesh((0.5, 0.5, 0.5), 0.22, level=1))
    errs = _parametric_errors(quad, sdf3, 3, np.random.default_rng(1))
    assert errs.max() <= 1e-4


def _nonrigid_errors(quad, sdf, rng, full=True, n_dirs=6):
    g = sdf.grid
    errs = []
    while len(errs) < CONFIGS:
        x = 0.02 * rng.standard_normal(g.ndim * g.num_nodes)
        u = DisplacementField.from_vector(g, x)
        from m2r.data_term import deform_points
        if _cell_margin(g, deform_points(quad.positions, u)) < 1e-4:
            continue
        lam = 10 ** rng.uniform(-4, 0)
        J = nonrigid_jacobian(u, quad, sdf, lam)
        def res(v):
            return nonrigid_residuals(DisplacementField.from_vector(g, v), quad, sdf, lam)
        if full:
            fd = np.empty(J.shape)
            for k in range(len(x)):
                e = np.zeros_like(x)
                e[k] = EPS
                fd[:, k] = (res(x + e) - res(x - e)) / (2 * EPS)
            errs.append(rel_err(J.toarray(), fd))
        else:
            worst = 0.0
            for _ in range(n_dirs):
                v = rng.standard_normal(len(x))
                v *= EPS / np.linalg.norm(v)
                fd = (res(x + v) - res(x - v)) / 2
                worst = max(worst, rel_err(J @ v, fd))
            errs.append(worst)
    return np.array(errs)


def test_nonrigid_jacobian_2d_full(sdf2):
    sdf = signed_distance_transform(primitive("disk", dims=9, radius=0.3)[0])
    quad = curve_quadrature(make_circle_contour((0.5, 0.5), 0.27, 30))
    errs = _nonrigid_errors(quad, sdf, np.random.default_rng(2))
    assert errs.max() <= 1e-4


def test_nonrigid_jacobian_2d_directional(sdf2):
    quad = curve_quadrature(make_circle_contour((0.5, 0.5), 0.22, 64))
    errs = _nonrigid_errors(quad, sdf2, np.random.default_rng(3), full=False)
    assert errs.max() <= 1e-4


def test_nonrigid_jacobian_3d_directional(sdf3):
    quad = surface_quadrature(sphere_mesh((0.5, 0.5, 0.5), 0.22, level=1))
    errs = _nonrigid_errors(quad, sdf3, np.random.default_rng(4), full=False)
    assert errs.max() <= 1e-4


def test_regularizer_block_is_constant():
    g = GridSpec((7, 6))
    sdf = signed_distance_transform(primitive("disk", dims=(7, 6), radius=0.3)[0])
    quad = curve_quadrature(make_circle_contour((0.5, 0.5), 0.2, 10))
    rng = np.random.default_rng(5)
    J1 = nonrigid_jacobian(DisplacementField.from_vector(g, 0.05 * rng.standard_normal(2 * 42)), quad, sdf, 0.3)
    J2 = nonrigid_jacobian(DisplacementField.zeros(g), quad, sdf, 0.3)
    ops = fe_operators(g)
    expected = ops.block_operator(0.3, 2).toarray()
    assert np.allclose(J1.toarray()[10:], expected, rtol=1e-14, atol=1e-12)
    assert np.allclose(J2.toarray()[10:], expected, rtol=1e-14, atol=1e-12)
