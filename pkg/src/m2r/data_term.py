"""Quadrature on the hypersurface and the signed-distance data residuals.

Each simplex of the template (segment in 2D, triangle in 3D) contributes one
quadrature point.  The residual of point ``k`` is
``sqrt(weight_k) * d(phi(x_k))`` where ``phi`` is either the identity plus an
FE displacement or an affine map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import AffineMap, Contour, DisplacementField, TriMesh, ValidationError
from .distance import SignedDistanceField
from .interp import cell_weights, sample_with_gradient


@dataclass(frozen=True)
class QuadraturePoint:
    position: np.ndarray
    weight: float
    owner: int


@dataclass(frozen=True)
class Quadrature:
    """Vectorised list of quadrature points."""

    positions: np.ndarray  # (m, n)
    weights: np.ndarray  # (m,)
    owners: np.ndarray  # (m,)

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, k) -> QuadraturePoint:
        return QuadraturePoint(self.positions[k], float(self.weights[k]), int(self.owners[k]))

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def ndim(self) -> int:
        return self.positions.shape[1]

    @classmethod
    def from_points(cls, points) -> "Quadrature":
        points = list(points)
        return cls(np.array([p.position for p in points], dtype=float),
                   np.array([p.weight for p in points], dtype=float),
                   np.array([p.owner for p in points], dtype=np.int64))

    @property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.weights)


def orientation_weights(start, end) -> np.ndarray:
    """``|x-component|`` of the unit tangent; vertical segments get zero."""
    v = 0.5 * (np.asarray(end) - np.asarray(start))
    return np.abs(v[:, 0]) / np.linalg.norm(v, axis=1)


WEIGHT_POLICIES = {
    "orientation": orientation_weights,
    "constant": lambda start, end: np.ones(len(start)),
}


def curve_quadrature(contour: Contour, policy="orientation") -> Quadrature:
    """Midpoint rule on every segment, weight ``w * length``.

    ``policy`` is a name in :data:`WEIGHT_POLICIES` or a callable
    ``(start, end) -> w`` returning values in ``[0, 1]``.
    """
    start, end = contour.segments()
    lengths = np.linalg.norm(end - start, axis=1)
    if np.any(lengths == 0.0):
        raise ValidationError("contour has a zero-length segment")
    fn = WEIGHT_POLICIES[policy] if isinstance(policy, str) else policy
    w = np.asarray(fn(start, end), dtype=float)
    if np.any(w < 0.0) or np.any(w > 1.0):
        raise ValidationError("hypersurface weights must lie in [0, 1]")
    return Quadrature(0.5 * (start + end), w * lengths, np.arange(len(start)))


def surface_quadrature(mesh: TriMesh) -> Quadrature:
    """Barycentre of every triangle weighted by its area (hypersurface weight 1)."""
    a, b, c = mesh.corners()
    areas = mesh.areas()
    if np.any(areas <= 0.0):
        raise ValidationError("mesh contains a degenerate triangle")
    return Quadrature((a + b + c) / 3.0, areas, np.arange(len(areas)))


def template_quadrature(template, policy="auto") -> Quadrature:
    if isinstance(template, Contour):
        return curve_quadrature(template, "orientation" if policy == "auto" else policy)
    if isinstance(template, TriMesh):
        if policy not in ("auto", "constant"):
            raise ValidationError("surface quadrature only supports constant weights")
        return surface_quadrature(template)
    if isinstance(template, Quadrature):
        return template
    raise ValidationError(f"unsupported template type {type(template).__name__}")


def interpolate_displacement(u: DisplacementField, points) -> np.ndarray:
    """FE interpolant ``u(x)`` at ``points``; shape ``(m, n)``."""
    idx, w = cell_weights(u.grid, points)
    U = u.component_matrix()
    return np.stack([np.sum(U[c][idx] * w, axis=1) for c in range(u.grid.ndim)], axis=1)


def deform_points(points, deform) -> np.ndarray:
    """Apply ``phi`` (identity for ``None``) to an ``(m, n)`` array of points."""
    points = np.asarray(points, dtype=float)
    if deform is None:
        return points.copy()
    if isinstance(deform, AffineMap):
        return deform.apply(points)
    if isinstance(deform, DisplacementField):
        return points + interpolate_displacement(deform, points)
    raise ValidationError(f"unsupported deformation type {type(deform).__name__}")


def _check_compatible(quad: Quadrature, sdf: SignedDistanceField, deform):
    n = sdf.grid.ndim
    if quad.ndim != n:
        raise ValidationError(f"{quad.ndim}D quadrature used with a {n}D distance field")
    if isinstance(deform, DisplacementField) and deform.grid.ndim != n:
        raise ValidationError("displacement field dimension does not match the distance field")
    if isinstance(deform, AffineMap) and deform.ndim != n:
        raise ValidationError("affine map dimension does not match the distance field")


def data_residuals(quad: Quadrature, sdf: SignedDistanceField, deform=None) -> np.ndarray:
    """``sqrt(weight) * d(phi(x))`` for every quadrature point."""
    _check_compatible(quad, sdf, deform)
    moved = deform_points(quad.positions, deform)
    return quad.sqrt_weights * sdf.value(moved)


def data_residuals_and_gradient(quad, sdf, deform=None):
    """Residuals plus ``grad d`` at the deformed points (shape ``(m, n)``)."""
    _check_compatible(quad, sdf, deform)
    moved = deform_points(quad.positions, deform)
    d, grad = sdf.value_and_gradient(moved)
    return quad.sqrt_weights * d, grad


def fe_interpolation_matrix(grid, points) -> sp.csr_matrix:
    """Sparse ``B`` with ``B[k, j] = psi_j(x_k)``."""
    idx, w = cell_weights(grid, points)
    m, k = idx.shape
    rows = np.repeat(np.arange(m), k)
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(m, grid.num_nodes))


def fe_data_jacobian(quad, grid, grad, B=None) -> sp.csr_matrix:
    """Jacobian of the data residuals with respect to the stacked nodal values.

    Column block ``c`` is ``diag(sqrt(w) * d_c d) @ B``.
    """
    if B is None:
        B = fe_interpolation_matrix(grid, quad.positions)
    sw = quad.sqrt_weights
    blocks = [sp.diags(sw * grad[:, c]) @ B for c in range(grid.ndim)]
    return sp.hstack(blocks, format="csr")


def affine_data_jacobian(quad, grad) -> np.ndarray:
    """Dense ``(m, n^2 + n)`` Jacobian w.r.t. row-major ``A`` then ``t``."""
    sw = quad.sqrt_weights[:, None]
    g = grad * sw
    m, n = g.shape
    dA = (g[:, :, None] * quad.positions[:, None, :]).reshape(m, n * n)
    return np.hstack([dA, g])


def data_jacobian(quad: Quadrature, sdf: SignedDistanceField, deform):
    """Vectorised Jacobian of :func:`data_residuals`.

    Sparse for an FE displacement (unknowns are the nodal values), dense for
    an affine map (unknowns are ``A`` row-major then ``t``).
    """
    _, grad = data_residuals_and_gradient(quad, sdf, deform)
    if isinstance(deform, AffineMap):
        return affine_data_jacobian(quad, grad)
    if isinstance(deform, DisplacementField):
        return fe_data_jacobian(quad, deform.grid, grad)
    raise ValidationError("data_jacobian needs a DisplacementField or an AffineMap")


def data_jacobian_row(q: QuadraturePoint, sdf: SignedDistanceField, deform) -> sp.csr_matrix:
    """Single residual row of :func:`data_jacobian` as a ``1 x K`` sparse row."""
    quad = Quadrature.from_points([q])
    J = data_jacobian(quad, sdf, deform)
    return sp.csr_matrix(J)


def surface_distances(points, sdf: SignedDistanceField, deform=None) -> np.ndarray:
    """``d(phi(c))`` at arbitrary template points (e.g. mesh vertices)."""
    return sdf.value(deform_points(points, deform))


__all__ = [
    "QuadraturePoint", "Quadrature", "WEIGHT_POLICIES", "curve_quadrature",
    "surface_quadrature", "template_quadrature", "data_residuals",
    "data_residuals_and_gradient", "data_jacobian", "data_jacobian_row",
    "deform_points", "interpolate_displacement", "fe_interpolation_matrix",
    "fe_data_jacobian", "affine_data_jacobian", "orientation_weights",
    "surface_distances", "sample_with_gradient",
]
