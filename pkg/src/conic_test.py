"""Test the conic solver and the modelling layer."""

import numpy as np
import pytest

from conic import (
    INFEASIBLE, AffineMatrix, ConicProblem, CvxpyBackend, InteriorPoint,
    Model, PSDBlock, SolverSettings, bmat, solve
)
from errors import (ShapeError)
from linalg import (min_eig)
from test_helpers import (SCALAR_PSTAR)


def scalar_lmi() -> tuple[Model, AffineMatrix]:
    """max p s.t. [[2p + 1, p], [p, 1]] >= 0, solved by 1 + sqrt(2)."""
    m = Model("scalar")
    p = m.sym(1, "p")
    m.psd(bmat([[2 * p + 1.0, p], [p, np.eye(1)]]), "care")
    m.maximize(p)
    return m, p


# SECTION Interior-point method

def test_trace_minimization() -> None:
    """min tr P s.t. P >= I is attained at P = I."""
    m = Model()
    P = m.sym(2, "P")
    m.psd(P - np.eye(2))
    m.minimize(P.trace())
    sol = m.solve()
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(sol.value(P), np.eye(2), atol=1e-6)


def test_smallest_eigenvalue() -> None:
    """min <C, X> over tr X = 1, X >= 0 is the smallest eigenvalue of C."""
    C = np.array([[2.0, 1.0], [1.0, 2.0]])
    m = Model()
    X = m.sym(2, "X")
    m.psd(X)
    m.equal(X.trace(), 1.0)
    m.minimize((C @ X).trace())
    sol = m.solve()
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    v = np.array([1.0, -1.0]) / np.sqrt(2)
    assert np.allclose(sol.value(X), np.outer(v, v), atol=1e-4)


def test_scalar_riccati_lmi() -> None:
    """The LMI bound equals the CARE solution."""
    m, p = scalar_lmi()
    sol = m.solve()
    assert sol.objective == pytest.approx(SCALAR_PSTAR, abs=1e-6)
    assert sol.value(p)[0, 0] == pytest.approx(SCALAR_PSTAR, abs=1e-6)


def test_dual_certificate() -> None:
    """Zero duality gap and PSD dual blocks at the optimum."""
    m, _ = scalar_lmi()
    sol = m.solve().solution
    assert sol.optimal
    assert sol.objective == pytest.approx(sol.dual_objective, abs=1e-6)
    for D in sol.duals:
        assert min_eig(D) >= -1e-8
    assert max(sol.primal_residual, sol.dual_residual, sol.gap) <= 1e-8


def test_infeasible_lmi() -> None:
    """x >= 0 and x <= -1 cannot both hold."""
    m = Model()
    x = m.sym(1, "x")
    m.psd(x)
    m.psd(-x - 1.0)
    m.minimize(x)
    assert m.solve().status == INFEASIBLE


def test_inconsistent_equalities() -> None:
    """Presolve detects x = 1 and x = 2."""
    m = Model()
    x = m.mat(1, 1, "x")
    m.equal(x, 1.0)
    m.equal(x, 2.0)
    m.minimize(x)
    assert m.solve().status == INFEASIBLE


def test_presolve_reductions() -> None:
    """Duplicate equalities and unseen variables do not disturb the solve."""
    m = Model()
    unused = m.mat(2, 1, "unused")
    x = m.sym(1, "x")
    m.equal(x, 3.0)
    m.equal(2 * x, 6.0)
    m.psd(bmat([[x, np.zeros((1, 1))], [np.zeros((1, 1)), np.zeros((1, 1))]]))
    m.minimize(x)
    sol = m.solve()
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(3.0, abs=1e-7)
    assert np.allclose(sol.value(unused), 0.0)


def test_problem_shapes_are_checked() -> None:
    """Mismatched equalities and blocks are refused."""
    with pytest.raises(ShapeError):
        ConicProblem(np.zeros(2), np.zeros((1, 3)), np.zeros(1))
    with pytest.raises(ShapeError):
        PSDBlock(2, np.zeros(2), np.zeros((2, 1)))


def test_settings_validation() -> None:
    """Tolerances must be positive and the step fraction below one."""
    with pytest.raises(ValueError):
        SolverSettings(tol=0.0)
    with pytest.raises(ValueError):
        SolverSettings(step_fraction=1.0)


def test_explicit_backend() -> None:
    """solve() defaults to the interior-point backend."""
    m, _ = scalar_lmi()
    problem = m.problem()
    a = solve(problem)
    b = InteriorPoint().solve(problem)
    assert np.array_equal(a.x, b.x)


def test_cvxpy_backend() -> None:
    """cvxpy agrees with the built-in backend."""
    pytest.importorskip("cvxpy")
    m, p = scalar_lmi()
    sol = m.solve(backend=CvxpyBackend())
    assert sol.value(p)[0, 0] == pytest.approx(SCALAR_PSTAR, abs=1e-4)

# !SECTION


# SECTION Modelling layer

def test_affine_arithmetic() -> None:
    """Sums, products, transposes and traces evaluate pointwise."""
    m = Model()
    X = m.mat(2, 2, "X")
    x = np.array([1.0, 2.0, 3.0, 4.0])
    value = X.value(x)
    assert np.array_equal(value, [[1.0, 3.0], [2.0, 4.0]])

    M = np.array([[0.0, 1.0], [2.0, 0.0]])
    expr = (2 * X + np.eye(2)) @ M - X.T
    assert np.allclose(expr.value(x), (2 * value + np.eye(2)) @ M - value.T)
    assert np.allclose((M @ X).value(x), M @ value)
    assert (X.trace().value(x))[0, 0] == 5.0
    assert np.allclose((1.0 - X).value(x), 1.0 - value)


def test_symmetric_variable() -> None:
    """sym() has vech(n) free entries."""
    m = Model()
    S = m.sym(3, "S")
    assert m.N == 6
    v = S.value(np.arange(6.0))
    assert np.array_equal(v, v.T)


def test_modelling_errors() -> None:
    """Non-affine products, shape mismatches and asymmetric LMIs."""
    m = Model()
    X = m.mat(2, 2, "X")
    Y = m.mat(2, 2, "Y")
    with pytest.raises(TypeError):
        X @ Y
    with pytest.raises(TypeError):
        X * np.eye(2)
    with pytest.raises(ShapeError):
        X + np.zeros((3, 3))
    with pytest.raises(ShapeError):
        bmat([[X, np.zeros((3, 1))]])
    with pytest.raises(ValueError, match="not symmetric"):
        m.psd(X)
    with pytest.raises(ShapeError):
        m.minimize(X)


def test_dump() -> None:
    """The listing names the sense and the variables."""
    m, _ = scalar_lmi()
    text = m.dump()
    assert "maximize" in text
    assert "# var p x0..x0" in text
    assert "block 0 care dim 2" in text

# !SECTION
