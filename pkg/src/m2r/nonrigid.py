"""Non-rigid registration with the squared-Laplacian regulariser and lambda continuation.

Unknowns are the nodal displacement values, stacked component-major and
x-fastest.  For one value of ``lambda`` the residual vector is

    [ sqrt(w_k) d(x_k + u(x_k)) ]_k  followed by  lambda * M^(-1/2) L U_c  per component

and Gauss-Newton minimises half its squared norm.  The stages of the
schedule are solved in order, each warm-started from the previous one.

Linear solves
-------------
``direct`` (default in 2D) does not factorise ``J^T J``.  Writing the data
block as ``Jd = [diag(g_1) B, ..., diag(g_n) B]`` with ``B`` the (fixed)
interpolation matrix of the quadrature points, the normal equations for the
new iterate ``V = U + delta``

    (Jd^T Jd + lambda^2 K) V = Jd^T y,   K = L M^-1 L,   y = Jd U - r_data

are solved in data space: ``V = K^+ Jd^T a + E b`` where ``E`` spans the
per-component constants (the kernel of ``K``) and ``(a, b)`` solve the
dense symmetric system

    [ lambda^2 I + Jd K^+ Jd^T   Jd E ] [a]   [y]
    [ (Jd E)^T                    0   ] [b] = [0]

of size ``m + n``.  ``B K^+ B^T`` is
computed once per registration with the spectral pseudo-inverse.

``iterative`` (default in 3D) runs LSMR through the Jacobian operator only.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .core import DisplacementField, RegistrationParams, SolverError, ValidationError
from .data_term import fe_interpolation_matrix, template_quadrature
from .fem import fe_operators, regularizer_residual
from .solver import gn_minimize, solve_lsq_iterative, solve_normal_direct

log = logging.getLogger(__name__)


class NonrigidJacobian(LinearOperator):
    """Jacobian of the stacked residual as a matrix-free operator.

    ``coef[k, c] = sqrt(w_k) * d_c d(phi(x_k))``; the data block is
    ``sum_c diag(coef[:, c]) B`` acting on component ``c``.
    """

    def __init__(self, B, coef, lam, ops):
        self.B = B
        self.coef = coef
        self.lam = lam
        self.ops = ops
        self.ncomp = coef.shape[1]
        self.nnodes = B.shape[1]
        m = B.shape[0]
        super().__init__(float, (m + self.ncomp * self.nnodes, self.ncomp * self.nnodes))

    def _matvec(self, v):
        V = np.asarray(v, dtype=float).reshape(self.ncomp, self.nnodes)
        data = np.sum(self.coef * (self.B @ V.T), axis=1)
        reg = self.lam * self.ops.apply(V)
        return np.concatenate([data, reg.ravel()])

    def _rmatvec(self, w):
        w = np.asarray(w, dtype=float).ravel()
        m = self.B.shape[0]
        wd = w[:m]
        wr = w[m:].reshape(self.ncomp, self.nnodes)
        out = self.lam * self.ops.apply_transpose(wr)
        out += (self.B.T @ (self.coef * wd[:, None])).T
        return out.ravel()

    def _matmat(self, X):
        return np.column_stack([self._matvec(x) for x in X.T])

    def tosparse(self) -> sp.csr_matrix:
        """Assembled sparse Jacobian (only used by small direct solves and tests)."""
        data = sp.hstack([sp.diags(self.coef[:, c]) @ self.B for c in range(self.ncomp)])
        reg = self.ops.block_operator(self.lam, self.ncomp)
        return sp.vstack([data, reg], format="csr")


class NonrigidProblem:
    """Residual and Jacobian for one value of ``lambda``."""

    def __init__(self, quad, sdf, lam, ops=None, B=None):
        self.quad = quad
        self.sdf = sdf
        self.grid = sdf.grid
        self.lam = float(lam)
        self.ops = fe_operators(self.grid) if ops is None else ops
        self.B = fe_interpolation_matrix(self.grid, quad.positions) if B is None else B
        self.ncomp = self.grid.ndim
        self.nnodes = self.grid.num_nodes
        self.size = self.ncomp * self.nnodes
        self._cache = None
        self._rcache = None

    @property
    def num_data(self) -> int:
        return len(self.quad)

    def _eval(self, x):
        if self._cache is not None and self._cache[0] is x:
            return self._cache[1]
        U = np.asarray(x, dtype=float).reshape(self.ncomp, self.nnodes)
        moved = self.quad.positions + self.B @ U.T
        d, grad = self.sdf.value_and_gradient(moved)
        sw = self.quad.sqrt_weights
        out = (U, sw * d, sw[:, None] * grad)
        self._cache = (x, out)
        return out

    def _reg(self, U):
        return self.lam * self.ops.apply(U).ravel()

    def residual(self, x):
        if self._rcache is not None and self._rcache[0] is x:
            return self._rcache[1]
        U, rd, _ = self._eval(x)
        r = np.concatenate([rd, self._reg(U)])
        self._rcache = (x, r)
        return r

    def line_residual(self, x, d):
        # the regulariser rows are linear in x
        m = self.num_data
        r0 = self.residual(x)[m:]
        dr = self._reg(np.asarray(d).reshape(self.ncomp, self.nnodes))

        def at(s, xt):
            _, rd, _ = self._eval(xt)
            r = np.concatenate([rd, r0 + s * dr])
            self._rcache = (xt, r)
            return r
        return at

    def jacobian(self, x) -> NonrigidJacobian:
        _, _, coef = self._eval(x)
        return NonrigidJacobian(self.B, coef, self.lam, self.ops)

    def energy_terms(self, x):
        r = self.residual(x)
        m = self.num_data
        return 0.5 * float(r[:m] @ r[:m]), 0.5 * float(r[m:] @ r[m:])


class DataSpaceSolver:
    """Exact Gauss-Newton step through the data-space (dual) system.

    Only the ``m x m`` matrix ``B K^+ B^T`` is stored.  If the per-component
    constants are not determined by the data rows (``Jd E`` rank deficient)
    the step falls back to :func:`solve_normal_direct`.
    """

    def __init__(self, B, ops, points):
        self.B = sp.csr_matrix(B)
        self.pinv = ops.biharmonic_pinv()
        W = self.pinv.gram(points, single=B.shape[1] > 2 ** 17)
        self.W = 0.5 * (W + W.T)
        self.fallbacks = 0

    def __call__(self, x, r, J: NonrigidJacobian):
        coef = J.coef
        lam2 = J.lam ** 2
        m, n = coef.shape
        U = np.asarray(x, dtype=float).reshape(n, -1)
        rd = r[:m]
        BU = self.B @ U.T
        y = np.sum(coef * BU, axis=1) - rd
        C = coef * np.asarray(self.B.sum(axis=1)).reshape(-1, 1)  # Jd E
        sv = np.linalg.svd(C, compute_uv=False)
        if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
            self.fallbacks += 1
            if J.shape[1] <= 2 ** 18:
                return solve_normal_direct(J.tosparse(), r)
            return solve_lsq_iterative(J, r)
        # system scaled by lambda^2 so that entries stay O(1) as lambda -> 0
        S = np.zeros((m + n, m + n))
        A = S[:m, :m]
        A[np.diag_indices(m)] = lam2
        for c in range(n):
            A += coef[:, c, None] * self.W * coef[None, :, c]
        S[:m, m:] = C
        S[m:, :m] = C.T
        rhs = np.concatenate([y, np.zeros(n)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            sol = sla.solve(S, rhs, assume_a="sym")
        a, b = sol[:m], sol[m:]
        F = self.B.T @ (coef * a[:, None])  # (N, n)
        V = self.pinv(F).T + b[:, None]
        return (V - U).ravel()


@dataclass
class StageReport:
    lam: float
    status: str
    iterations: int
    e_match: float
    e_reg: float
    roughness: float
    energies: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # (iteration, E_match, E_reg, step)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "status": self.status,
            "iterations": self.iterations,
            "e_match": self.e_match,
            "e_reg": self.e_reg,
            "roughness": self.roughness,
            "inner_iterations": list(self.inner_iterations),
        }


def nonrigid_residuals(u: DisplacementField, quad, sdf, lam, M=None, L=None) -> np.ndarray:
    """Data residuals at ``x + u(x)`` followed by ``lam * M^(-1/2) L U_c``.

    ``M`` and ``L`` default to the assembled operators of ``u.grid``.
    """
    if u.grid.dims != sdf.grid.dims:
        raise ValidationError(f"displacement grid {u.grid.dims} does not match "
                              f"distance field grid {sdf.grid.dims}")
    quad = template_quadrature(quad)
    ops = fe_operators(u.grid)
    problem = NonrigidProblem(quad, sdf, lam, ops)
    _, rd, _ = problem._eval(u.as_vector())
    reg = regularizer_residual(lam, ops.M if M is None else M, ops.L if L is None else L, u)
    return np.concatenate([rd, reg])


def nonrigid_jacobian(u: DisplacementField, quad, sdf, lam) -> sp.csr_matrix:
    quad = template_quadrature(quad)
    problem = NonrigidProblem(quad, sdf, lam)
    return problem.jacobian(u.as_vector()).tosparse()


def evaluate_energy(u: DisplacementField, quad, sdf, lam, M=None, L=None):
    """``(E_match, E_reg)`` with ``E_reg = lam^2 / 2 * sum_c |M^(-1/2) L U_c|^2``."""
    r = nonrigid_residuals(u, quad, sdf, lam, M, L)
    m = len(template_quadrature(quad))
    return 0.5 * float(r[:m] @ r[:m]), 0.5 * float(r[m:] @ r[m:])


def _select_backend(params: RegistrationParams, ndim: int) -> str:
    if params.backend != "auto":
        return params.backend
    return "direct" if ndim == 2 else "iterative"


def register_nonrigid(template, sdf, init: DisplacementField = None,
                      params: RegistrationParams = None, return_report: bool = False,
                      stage_callback=None):
    """Run the lambda schedule; returns the final :class:`DisplacementField`.

    With ``return_report`` also returns a list of :class:`StageReport`.
    ``stage_callback(stage, lam, field)`` is called after every stage.
    Failures raise :class:`SolverError` carrying the last good field and the
    zero-based stage index.
    """
    params = RegistrationParams() if params is None else params
    grid = sdf.grid
    if init is None:
        init = DisplacementField.zeros(grid)
    if init.grid.dims != grid.dims:
        raise ValidationError(f"initial field grid {init.grid.dims} does not match "
                              f"distance field grid {grid.dims}")
    quad = template_quadrature(template, params.weight_policy)
    if quad.ndim != grid.ndim:
        raise ValidationError("template and distance field dimensions differ")
    ops = fe_operators(grid)
    B = fe_interpolation_matrix(grid, quad.positions)
    backend = _select_backend(params, grid.ndim)
    dual = DataSpaceSolver(B, ops, quad.positions) if backend == "direct" else None
    max_inner = params.max_inner

    x = init.as_vector()
    reports = []
    for stage, lam in enumerate(params.lambda_schedule):
        t0 = time.perf_counter()
        problem = NonrigidProblem(quad, sdf, lam, ops, B)
        inner = []
        if backend == "direct":
            step = dual
        else:
            def step(x, r, J, inner=inner):
                d, (istop, itn, capped) = solve_lsq_iterative(
                    J, r, params.lsq_atol, params.lsq_btol, max_inner, full_output=True)
                inner.append(itn)
                return d
        m = problem.num_data
        r0 = problem.residual(x)
        rows = [(0, 0.5 * float(r0[:m] @ r0[:m]), 0.5 * float(r0[m:] @ r0[m:]), 0.0)]

        def record(xk, rk, sk, rows=rows):
            rows.append((len(rows), 0.5 * float(rk[:m] @ rk[:m]),
                         0.5 * float(rk[m:] @ rk[m:]), sk))
        try:
            x_new, trace = gn_minimize(problem, x, backend=step, max_iters=params.max_gn_iters,
                                       rel_tol=params.energy_rel_tol, callback=record)
        except SolverError as exc:
            partial = DisplacementField.from_vector(grid, x)
            raise SolverError(f"non-rigid stage {stage} (lambda={lam:g}) failed: {exc}",
                              partial=partial, stage=stage) from exc
        x = x_new
        e_match, e_reg = problem.energy_terms(x)
        reports.append(StageReport(
            lam=lam, status=trace.status, iterations=trace.iterations,
            e_match=e_match, e_reg=e_reg, roughness=e_reg / lam ** 2,
            energies=list(trace.energies), inner_iterations=inner, trace=rows,
            seconds=time.perf_counter() - t0))
        if stage_callback is not None:
            stage_callback(stage, lam, DisplacementField.from_vector(grid, x))
        log.info("stage %d lambda=%g: %s after %d iterations, E_match=%.6g E_reg=%.6g",
                 stage, lam, trace.status, trace.iterations, e_match, e_reg)
    result = DisplacementField.from_vector(grid, x)
    return (result, reports) if return_report else result
