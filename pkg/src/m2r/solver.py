"""Gauss-Newton minimisation of ``0.5 * ||r(x)||^2`` with pluggable linear solves.

Two step backends are provided:

* ``"direct"`` forms ``J^T J`` and factorises it (sparse LU, or dense
  Cholesky for small dense Jacobians);
* ``"iterative"`` runs LSMR on ``min ||J d + r||`` and needs only
  ``J @ v`` and ``J.T @ w``.

A callable ``backend(x, r, J) -> d`` may be passed instead, which lets a
problem supply a structured solver.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator, lsmr, splu

from .core import SolverError

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 30


class LeastSquaresProblem(Protocol):
    """Residual/Jacobian pair.

    ``jacobian`` may return a dense array, a sparse matrix or a
    :class:`~scipy.sparse.linalg.LinearOperator`.  Two optional hooks:
    ``feasible(x)`` lets the line search reject trial points and
    ``line_residual(x, d)`` returns ``(s, x + s d) -> r(x + s d)`` for problems that can
    reuse work along a search direction.
    """

    size: int

    def residual(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray): ...


@dataclass
class FunctionProblem:
    """Adapter turning two callables into a :class:`LeastSquaresProblem`."""

    residual_fn: Callable
    jacobian_fn: Callable
    size: int
    feasible_fn: Callable = None

    def residual(self, x):
        return np.asarray(self.residual_fn(x), dtype=float)

    def jacobian(self, x):
        return self.jacobian_fn(x)

    def feasible(self, x):
        return True if self.feasible_fn is None else bool(self.feasible_fn(x))


@dataclass
class GNTrace:
    """Per-iteration record; ``energies[0]`` is the starting energy."""

    energies: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    status: str = "max_iters"
    evaluations: int = 0

    @property
    def iterations(self) -> int:
        return len(self.steps)

    @property
    def final_energy(self) -> float:
        return self.energies[-1]

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "zero_residual")


def _energy(r):
    return 0.5 * float(r @ r)


def _matvec(J, v):
    return J @ v if not isinstance(J, LinearOperator) else J.matvec(v)


def _rmatvec(J, w):
    if isinstance(J, LinearOperator):
        return J.rmatvec(w)
    return J.T @ w


def solve_normal_direct(J, r, shift: float = 1e-12) -> np.ndarray:
    """``d = -(J^T J + s I)^-1 J^T r`` with ``s = shift * trace / N``.

    Falls back to :func:`solve_lsq_iterative` with a warning if the
    factorisation fails.
    """
    r = np.asarray(r, dtype=float)
    rhs = -_rmatvec(J, r)
    try:
        if sp.issparse(J):
            J = sp.csr_matrix(J)
            N = J.T @ J
            N = N.tocsc()
            tau = shift * N.diagonal().sum() / N.shape[0]
            N = N + tau * sp.identity(N.shape[0], format="csc")
            d = splu(N).solve(rhs)
        else:
            J = np.asarray(J, dtype=float)
            N = J.T @ J
            tau = shift * np.trace(N) / N.shape[0]
            N[np.diag_indices_from(N)] += tau
            d = sla.cho_solve(sla.cho_factor(N), rhs)
        if not np.all(np.isfinite(d)):
            raise np.linalg.LinAlgError("non-finite solution")
        return d
    except (RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        warnings.warn(f"direct factorisation failed ({exc}); using LSMR", RuntimeWarning)
        return solve_lsq_iterative(J, r)


def solve_lsq_iterative(J, r, atol: float = 1e-8, btol: float = 1e-8,
                        max_inner: int = None, full_output: bool = False):
    """Minimise ``||J d + r||`` by LSMR without forming ``J^T J``.

    With ``full_output`` also returns ``(istop, itn, hit_cap)`` where
    ``hit_cap`` flags that ``max_inner`` stopped the iteration.
    """
    op = J if isinstance(J, LinearOperator) else aslinearoperator(J)
    n = op.shape[1]
    if max_inner is None:
        max_inner = 10 * n
    out = lsmr(op, -np.asarray(r, dtype=float), atol=atol, btol=btol, maxiter=max_inner)
    d, istop, itn = out[0], out[1], out[2]
    if full_output:
        return d, (int(istop), int(itn), istop == 7)
    return d


def _resolve_backend(backend, atol, btol, max_inner):
    if callable(backend):
        return backend
    if backend == "direct":
        return lambda x, r, J: solve_normal_direct(J, r)
    if backend == "iterative":
        return lambda x, r, J: solve_lsq_iterative(J, r, atol, btol, max_inner)
    raise ValueError(f"unknown backend {backend!r}")


def _check_finite(arr, what, x):
    if not np.all(np.isfinite(arr)):
        raise SolverError(f"non-finite {what} encountered", partial=x)


def gn_minimize(problem, x0, backend="direct", max_iters: int = 50,
                rel_tol: float = 1e-8, atol: float = 1e-8, btol: float = 1e-8,
                max_inner: int = None, callback=None):
    """Damped Gauss-Newton with Armijo backtracking.

    Returns ``(x, trace)``.  ``trace.status`` is one of ``converged``,
    ``zero_residual``, ``max_iters`` or ``stalled`` (the line search ran out
    of halvings; the best iterate is returned).
    """
    x = np.array(x0, dtype=float)
    _check_finite(x, "initial guess", None)
    solve = _resolve_backend(backend, atol, btol, max_inner)
    feasible = getattr(problem, "feasible", lambda x: True)
    line = getattr(problem, "line_residual", None)

    r = problem.residual(x)
    _check_finite(r, "residual", x)
    E = _energy(r)
    trace = GNTrace(energies=[E], evaluations=1)
    if E == 0.0:
        trace.status = "zero_residual"
        return x, trace

    for _ in range(max_iters):
        J = problem.jacobian(x)
        d = np.asarray(solve(x, r, J), dtype=float)
        _check_finite(d, "step", x)
        g = _rmatvec(J, r)
        slope = float(g @ d)  # directional derivative of E along d
        if slope >= 0.0:
            # inexact or degenerate step; use steepest descent instead
            d = -g
            slope = -float(g @ g)
        if -slope <= 1e-15 * E or not np.any(d):
            trace.status = "converged"
            break

        s = 1.0
        accepted = False
        along = line(x, d) if line is not None else None
        for _ in range(MAX_HALVINGS + 1):
            xt = x + s * d
            if feasible(xt):
                rt = along(s, xt) if along is not None else problem.residual(xt)
                trace.evaluations += 1
                if np.all(np.isfinite(rt)):
                    Et = _energy(rt)
                    if Et <= E + ARMIJO_C * s * slope and Et < E:
                        accepted = True
                        break
            s *= 0.5
        if not accepted:
            trace.status = "stalled"
            log.debug("line search exhausted at E=%g", E)
            break

        decrease = E - Et
        x, r, E = xt, rt, Et
        trace.energies.append(E)
        trace.steps.append(s)
        if callback is not None:
            callback(x, r, s)
        if E == 0.0:
            trace.status = "zero_residual"
            break
        if decrease < rel_tol * (E + decrease):
            trace.status = "converged"
            break
    return x, trace
