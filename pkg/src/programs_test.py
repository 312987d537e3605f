"""Test the semidefinite programs."""

import numpy as np
import pytest

from conic import (CvxpyBackend)
from errors import (DegenerateError)
from programs import (
    PROGRAMS, _checked_inverse, build_cl3, build_irl1, solve_irl1,
    solve_model_pair
)
from test_helpers import (
    _Test, collect_tests, double_integrator, double_integrator_case,
    scalar_case, scalar_system
)

# cl1 recovers K through Y^-1 at the boundary of the cone
GAIN_TOL = {"cl1": 1e-2}


def check_program(name: str) -> _Test:
    """Gain (and value, when recovered) of program `name` on both plants."""
    kind, solver = PROGRAMS[name]
    tol = GAIN_TOL.get(name, 1e-4)

    def test(_: object) -> None:
        for case in (scalar_case(), double_integrator_case()):
            data = case.experiment.cl if kind == "cl" \
                else case.experiment.irl
            res = solver(data, case.sys.Q, case.sys.R)
            assert res.solution.optimal
            assert np.allclose(res.K, case.care.Kstar, atol=tol), \
                f"{name}: K = {res.K}, K* = {case.care.Kstar}"
            if name in ("cl3", "irl1", "irl2"):
                assert res.P is not None
                assert np.allclose(res.P, case.care.Pstar, atol=1e-4)
                assert res.objective == pytest.approx(
                    np.trace(case.care.Pstar), abs=1e-4)
    return test


TestPrograms = collect_tests(
    (name, check_program(name)) for name in PROGRAMS
)


def test_cl1_value() -> None:
    """min tr(QY) + tr(S) equals the optimal cost tr(P*)."""
    case = double_integrator_case()
    res = PROGRAMS["cl1"][1](case.experiment.cl, case.sys.Q, case.sys.R)
    assert res.objective == pytest.approx(np.trace(case.care.Pstar),
                                          rel=1e-3)
    # Y is feasible for the data equation Y = Xtilde Z
    Y, Z = res.extras["Y"], res.extras["Z"]
    assert np.allclose(Y, case.experiment.cl.Xtilde @ Z, atol=1e-6)


def test_irl1_schur_slack() -> None:
    """Z = W R^-1 W^T at the optimum."""
    case = double_integrator_case()
    res = solve_irl1(case.experiment.irl, case.sys.Q, case.sys.R)
    assert np.linalg.norm(res.extras["slack"]) <= 1e-5
    assert np.allclose(res.extras["W"], case.care.Pstar @ case.sys.B,
                       atol=1e-4)


def test_model_pair() -> None:
    """Primal and dual agree with each other and with the CARE."""
    sys = double_integrator()
    primal, dual = solve_model_pair(sys)
    trace = np.trace(np.array([[np.sqrt(3), 1.0], [1.0, np.sqrt(3)]]))
    assert primal.objective == pytest.approx(trace, abs=1e-5)
    assert dual.objective == pytest.approx(trace, rel=1e-4)
    assert np.allclose(primal.K, [[1.0, np.sqrt(3)]], atol=1e-4)
    assert np.allclose(dual.K, primal.K, atol=1e-2)


def test_scalar_model_pair() -> None:
    """a = 0: P* = 1 from both sides."""
    primal, dual = solve_model_pair(scalar_system(a=0.0))
    assert primal.P is not None
    assert primal.P[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert dual.objective == pytest.approx(1.0, rel=1e-4)


def test_degenerate_optimizer() -> None:
    """A singular recovered matrix is reported."""
    with pytest.raises(DegenerateError, match="singular"):
        _checked_inverse(np.diag([1.0, 0.0]), "Y")
    assert np.allclose(_checked_inverse(2 * np.eye(2), "Y"), np.eye(2) / 2)


def test_model_listing() -> None:
    """Built programs name their blocks and window equalities."""
    case = scalar_case()
    text = build_cl3(case.experiment.cl, case.sys.Q, case.sys.R).model.dump()
    assert "F(P)" in text
    irl1 = build_irl1(case.experiment.irl, case.sys.Q, case.sys.R)
    assert irl1.model.problem().A.shape[0] == case.experiment.irl.T


def test_cvxpy_agrees() -> None:
    """cvxpy finds the same cl3 optimum."""
    pytest.importorskip("cvxpy")
    case = scalar_case()
    _, solver = PROGRAMS["cl3"]
    res = solver(case.experiment.cl, case.sys.Q, case.sys.R,
                 backend=CvxpyBackend())
    assert res.P is not None
    assert res.P[0, 0] == pytest.approx(case.care.Pstar[0, 0], abs=1e-4)
