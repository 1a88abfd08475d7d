import numpy as np
import pytest
import scipy.sparse as sp

from m2r.core import SolverError
from m2r.solver import FunctionProblem, gn_minimize, solve_lsq_iterative, solve_normal_direct


def linear_problem(A, b):
    return FunctionProblem(lambda x: A @ x - b, lambda x: A, A.shape[1])


def test_linear_residual_one_iteration():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((12, 4)) + 3 * np.eye(12, 4)
    b = rng.standard_normal(12)
    x, trace = gn_minimize(linear_problem(A, b), np.zeros(4))
    assert np.allclose(x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-10)
    assert trace.energies[1] == pytest.approx(trace.energies[-1], rel=1e-12)
    assert trace.iterations <= 2


def test_rosenbrock():
    res = lambda x: np.array([1 - x[0], 10 * (x[1] - x[0] ** 2)])
    jac = lambda x: np.array([[-1.0, 0.0], [-20 * x[0], 10.0]])
    x, trace = gn_minimize(FunctionProblem(res, jac, 2), np.array([-1.2, 1.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-8)
    assert np.all(np.diff(trace.energies) <= 0)


def test_zero_residual_start():
    calls = []
    def res(x):
        calls.append(1)
        return x - 1.0
    x0 = np.ones(3)
    x, trace = gn_minimize(FunctionProblem(res, lambda x: np.eye(3), 3), x0)
    assert np.array_equal(x, x0) and trace.status == "zero_residual" and len(calls) == 1


def test_non_finite_raises():
    res = lambda x: np.array([np.nan, 1.0])
    with pytest.raises(SolverError):
        gn_minimize(FunctionProblem(res, lambda x: np.eye(2), 2), np.zeros(2))


def test_infeasible_steps_are_rejected():
    # minimum at x = -1 is infeasible; we stay in x > -0.5
    prob = FunctionProblem(lambda x: x + 1.0, lambda x: np.eye(1), 1,
                           feasible_fn=lambda x: x[0] > -0.5)
    x, trace = gn_minimize(prob, np.array([1.0]))
    assert x[0] > -0.5 and np.all(np.diff(trace.energies) < 0)


def test_normal_direct_examples():
    d = solve_normal_direct(sp.identity(3, format="csr"), np.array([1.0, 0, 0]))
    assert np.allclose(d, [-1, 0, 0], atol=1e-11)
    d = solve_normal_direct(sp.diags([2.0, 4.0]).tocsr(), np.array([2.0, 4.0]))
    assert np.allclose(d, [-1, -1], atol=1e-11)
    d = solve_normal_direct(np.diag([2.0, 4.0]), np.array([2.0, 4.0]))
    assert np.allclose(d, [-1, -1], atol=1e-11)


@pytest.mark.parametrize("seed", range(5))
def test_normal_direct_residual(seed):
    rng = np.random.default_rng(seed)
    J = sp.random(60, 25, density=0.2, random_state=seed, format="csr") + sp.eye(60, 25)
    r = rng.standard_normal(60)
    d = solve_normal_direct(J, r)
    g = J.T @ r
    assert np.linalg.norm(J.T @ (J @ d) + g) <= 1e-10 * np.linalg.norm(g)


def test_iterative_examples():
    d = solve_lsq_iterative(sp.diags([2.0, 4.0]), np.array([2.0, 4.0]))
    assert np.allclose(d, [-1, -1], atol=1e-8)
    J = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert np.array_equal(solve_lsq_iterative(J, np.array([0.0, 1.0])), [0.0, 0.0])


@pytest.mark.parametrize("seed", range(10))
def test_iterative_minimum_norm(seed):
    rng = np.random.default_rng(seed)
    J = rng.standard_normal((20, 5)) @ rng.standard_normal((5, 8))  # rank 5
    r = rng.standard_normal(20)
    d = solve_lsq_iterative(J, r, atol=1e-12, btol=1e-12)
    oracle = -np.linalg.pinv(J) @ r
    assert np.linalg.norm(d - oracle) <= 1e-6 * np.linalg.norm(oracle)


def test_iterative_reports_cap():
    J = np.random.default_rng(0).standard_normal((30, 30))
    _, (istop, itn, capped) = solve_lsq_iterative(J, np.ones(30), 1e-14, 1e-14,
                                                  max_inner=2, full_output=True)
    assert capped and itn == 2


def test_callable_backend_and_callback():
    seen = []
    A = np.diag([1.0, 2.0])
    prob = linear_problem(A, np.array([1.0, 1.0]))
    x, _ = gn_minimize(prob, np.zeros(2), backend=lambda x, r, J: -np.linalg.solve(J, r),
                       callback=lambda x, r, s: seen.append(s))
    assert np.allclose(x, [1.0, 0.5]) and seen == [1.0]
