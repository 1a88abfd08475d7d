"""Regularised affine pre-registration.

Energy: data term with ``phi(c) = A c + t`` plus two penalties on ``A``:
``alpha`` rows pull ``A`` towards the identity and ``mu`` rows penalise
differences between the diagonal entries, so isotropic scalings are cheaper
than anisotropic ones.  ``t`` is not penalised.
"""

from __future__ import annotations

import numpy as np

from .core import AffineMap, DisplacementField, GridSpec, RegistrationParams, SolverError, ValidationError
from .data_term import affine_data_jacobian, data_residuals_and_gradient, template_quadrature
from .solver import gn_minimize

MIN_DIAGONAL = 1e-6


def _ratio_pairs(n):
    # (i, j) for every mu row 1 - a_ii / a_jj, i outer, j != i inner
    return [(i, j) for i in range(n) for j in range(n) if j != i]


def affine_penalty_residuals(A, alpha, mu) -> np.ndarray:
    """``alpha`` rows (row-major over ``A - I`` up to sign) then ``mu`` rows."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    diag = np.diag(A)
    if np.any(diag == 0.0):
        raise ValidationError("affine map has a zero diagonal entry")
    a_rows = alpha * np.where(np.eye(n, dtype=bool), 1.0 - A, A).ravel()
    m_rows = np.array([mu * (1.0 - diag[i] / diag[j]) for i, j in _ratio_pairs(n)])
    return np.concatenate([a_rows, m_rows])


def affine_penalty_jacobian(A, alpha, mu) -> np.ndarray:
    """Derivatives of :func:`affine_penalty_residuals` w.r.t. ``(A row-major, t)``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    diag = np.diag(A)
    npar = n * n + n
    Ja = np.zeros((n * n, npar))
    for i in range(n):
        for j in range(n):
            k = i * n + j
            Ja[k, k] = -alpha if i == j else alpha
    pairs = _ratio_pairs(n)
    Jm = np.zeros((len(pairs), npar))
    for row, (i, j) in enumerate(pairs):
        Jm[row, i * n + i] = -mu / diag[j]
        Jm[row, j * n + j] = mu * diag[i] / diag[j] ** 2
    return np.vstack([Ja, Jm])


def parametric_residuals(affine: AffineMap, quad, sdf, alpha: float, mu: float) -> np.ndarray:
    """Data rows followed by the ``alpha`` and ``mu`` rows."""
    if np.any(np.diag(affine.A) == 0.0):
        raise ValidationError("affine map has a zero diagonal entry")
    quad = template_quadrature(quad)
    r, _ = data_residuals_and_gradient(quad, sdf, affine)
    return np.concatenate([r, affine_penalty_residuals(affine.A, alpha, mu)])


def parametric_jacobian(affine: AffineMap, quad, sdf, alpha: float, mu: float) -> np.ndarray:
    quad = template_quadrature(quad)
    _, grad = data_residuals_and_gradient(quad, sdf, affine)
    return np.vstack([affine_data_jacobian(quad, grad),
                      affine_penalty_jacobian(affine.A, alpha, mu)])


def parametric_energy(affine: AffineMap, quad, sdf, alpha, mu):
    """``(E_match, E_reg)`` of the affine model."""
    quad = template_quadrature(quad)
    r, _ = data_residuals_and_gradient(quad, sdf, affine)
    p = affine_penalty_residuals(affine.A, alpha, mu)
    return 0.5 * float(r @ r), 0.5 * float(p @ p)


class _AffineProblem:
    def __init__(self, quad, sdf, alpha, mu):
        self.quad, self.sdf = quad, sdf
        self.alpha, self.mu = alpha, mu
        self.n = sdf.grid.ndim
        self.size = self.n * self.n + self.n

    def _map(self, x):
        return AffineMap.from_params(x, self.n)

    def residual(self, x):
        return parametric_residuals(self._map(x), self.quad, self.sdf, self.alpha, self.mu)

    def jacobian(self, x):
        return parametric_jacobian(self._map(x), self.quad, self.sdf, self.alpha, self.mu)

    def feasible(self, x):
        A = x[: self.n * self.n].reshape(self.n, self.n)
        return bool(np.all(np.abs(np.diag(A)) >= MIN_DIAGONAL))


def register_parametric(template, sdf, params: RegistrationParams, return_trace: bool = False):
    """Gauss-Newton fit of an affine map starting from the identity.

    Parameters
    ----------
    template : Contour, TriMesh or Quadrature
    sdf : SignedDistanceField of the target
    params : uses ``alpha``, ``mu``, ``parametric_iters``, ``energy_rel_tol``
        and ``weight_policy``
    """
    quad = template_quadrature(template, params.weight_policy)
    if quad.ndim != sdf.grid.ndim:
        raise ValidationError("template and distance field dimensions differ")
    problem = _AffineProblem(quad, sdf, params.alpha, params.mu)
    x0 = AffineMap.identity(problem.n).params()
    try:
        x, trace = gn_minimize(problem, x0, backend="direct", max_iters=params.parametric_iters,
                               rel_tol=params.energy_rel_tol)
    except SolverError as exc:
        partial = None if exc.partial is None else AffineMap.from_params(exc.partial, problem.n)
        raise SolverError(f"parametric registration failed: {exc}", partial=partial) from exc
    result = AffineMap.from_params(x, problem.n)
    return (result, trace) if return_trace else result


def affine_to_displacement(affine: AffineMap, grid: GridSpec) -> DisplacementField:
    """Nodal ``u(x) = (A - I) x + t``."""
    if affine.ndim != grid.ndim:
        raise ValidationError("affine map and grid dimensions differ")
    x = grid.node_points()
    u = x @ (affine.A - np.eye(grid.ndim)).T + affine.t
    return DisplacementField.from_vector(grid, u.T.ravel())
