"""Test the closed-loop data parameterization."""

import numpy as np
import pytest

from clparam import (ClosedLoop)
from errors import (FeasibilityError, UnstableError)
from iteration import (FlowSettings, StepSchedule, StopRule)
from linalg import (is_hurwitz, min_eig, pinv, sym)
from oracle import (care_residual, evaluate_gain, kleinman_pi,
                    riccati_flow_model)
from sim import (ls_identify)
from test_helpers import (
    DOUBLE_INTEGRATOR_KSTAR, DOUBLE_INTEGRATOR_PSTAR, SCALAR_PSTAR,
    benchmark_case, double_integrator_case, finite_difference, make_case,
    random_psd, scalar_case, scalar_system
)


def closed_loop(case) -> ClosedLoop:  # type: ignore[no-untyped-def]
    """CL solvers on a test case."""
    return ClosedLoop(case.experiment.cl, case.sys.Q, case.sys.R)


def random_kernel_element(cl: ClosedLoop,
                          rng: np.random.Generator) -> np.ndarray:
    """N with [Utilde; Xtilde] N = 0."""
    return cl.data.kernel_projector @ rng.standard_normal(
        (cl.data.T, cl.data.n))


# SECTION Policies and evaluation

def test_particular_solution() -> None:
    """G^p solves the data equation and has minimal norm."""
    case = benchmark_case(0)
    cl = closed_loop(case)
    pol = cl.particular_solution(case.care.Kstar)
    assert np.allclose(pol.K, case.care.Kstar, atol=1e-9)
    assert cl.feasibility(pol) <= 1e-9
    rng = np.random.default_rng(0)
    for _ in range(50):
        N = random_kernel_element(cl, rng)
        other = cl.policy(pol.G + N)
        assert np.allclose(other.Acl, pol.Acl, atol=1e-9)
        assert np.allclose(other.K, pol.K, atol=1e-9)
        assert np.linalg.norm(pol.G) <= np.linalg.norm(other.G) + 1e-12


def test_membership() -> None:
    """Infeasible and unstable policies are rejected."""
    case = scalar_case()
    cl = closed_loop(case)
    with pytest.raises(FeasibilityError, match="violates"):
        cl.check_member(cl.policy(2 * cl.particular_solution([[2.0]]).G))
    with pytest.raises(UnstableError, match="not stabilizing"):
        cl.evaluate(cl.particular_solution([[0.5]]))


def test_membership_tolerance_scales_with_g() -> None:
    """A large kernel component keeps G a member despite rounding."""
    case = benchmark_case(0)
    cl = closed_loop(case)
    pol = cl.particular_solution(case.K0)
    N = random_kernel_element(cl, np.random.default_rng(1))
    big = cl.policy(pol.G + 1e6 * N / np.linalg.norm(N))
    assert cl.feasibility_bound(big) > cl.feasibility_bound(pol)
    assert cl.feasibility(big) <= cl.feasibility_bound(big)
    cl.check_member(big)


def test_evaluation_scalar() -> None:
    """a = 0, K = 1: P = (q + k^2 r) / 2 = 1."""
    case = make_case(scalar_system(a=0.0), [[1.0]], seed=3)
    cl = closed_loop(case)
    ev = cl.evaluate(cl.particular_solution([[1.0]]))
    assert ev.P[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert ev.cost == pytest.approx(1.0, abs=1e-9)


def test_evaluation_double_integrator() -> None:
    """At K* the value is the closed-form P*."""
    case = double_integrator_case()
    cl = closed_loop(case)
    ev = cl.evaluate(cl.particular_solution(DOUBLE_INTEGRATOR_KSTAR))
    assert np.allclose(ev.P, DOUBLE_INTEGRATOR_PSTAR, atol=1e-8)


def test_evaluation_matches_model() -> None:
    """CL evaluation equals the model-based Lyapunov solution."""
    for index in range(5):
        case = benchmark_case(index)
        cl = closed_loop(case)
        for K in (case.K0, case.care.Kstar):
            ev = cl.evaluate(cl.particular_solution(K), with_gramian=True)
            assert np.allclose(ev.P, evaluate_gain(case.sys, K), atol=1e-7)
            assert min_eig(ev.Y) > 0


def test_cost_invariant_along_kernel() -> None:
    """f(G + sN) is constant although |G + sN| grows without bound."""
    case = benchmark_case(1)
    cl = closed_loop(case)
    pol = cl.particular_solution(case.K0)
    N = random_kernel_element(cl, np.random.default_rng(1))
    base = cl.cost(pol)
    for s in (1.0, 10.0, 1000.0):
        assert cl.cost(cl.policy(pol.G + s * N)) == \
            pytest.approx(base, rel=1e-9)

# !SECTION


# SECTION Improvement and policy iteration

def test_improvement() -> None:
    """-Utilde G_hat = R^-1 B^T P, and the zero value gives a zero gain."""
    case = benchmark_case(2)
    cl = closed_loop(case)
    pol = cl.improve(case.care.Pstar)
    assert np.allclose(pol.K, case.care.Kstar, atol=1e-8)
    assert cl.feasibility(pol) <= 1e-9
    zero = cl.improve(np.zeros((4, 4)))
    assert np.allclose(zero.K, 0.0, atol=1e-9)
    assert cl.feasibility(zero) <= 1e-9

    sc = closed_loop(scalar_case())
    gain = sc.improve(np.array([[SCALAR_PSTAR]])).K
    assert gain[0, 0] == pytest.approx(SCALAR_PSTAR, abs=1e-8)


def test_pi_analytic() -> None:
    """PI recovers the analytic solutions."""
    for case, Pstar in ((scalar_case(), [[SCALAR_PSTAR]]),
                        (double_integrator_case(),
                         DOUBLE_INTEGRATOR_PSTAR)):
        cl = closed_loop(case)
        h = cl.policy_iteration(cl.particular_solution(case.K0),
                                StopRule(1e-8, 50))
        assert h.converged
        assert np.allclose(h.final.P, Pstar, atol=1e-5)
        assert np.allclose(h.final.K, case.care.Kstar, atol=1e-5)


def test_pi_matches_kleinman() -> None:
    """Same iterates as the model-based iteration from the same K0."""
    case = benchmark_case(3)
    cl = closed_loop(case)
    stop = StopRule(1e-10, 10)
    h = cl.policy_iteration(cl.particular_solution(case.K0), stop)
    ref = kleinman_pi(case.sys, case.K0, stop)
    for a, b in zip(h.gains(), ref.gains()):
        assert np.allclose(a, b, atol=1e-8)
    values = h.values()
    for P, Pn in zip(values, values[1:]):
        assert np.linalg.eigvalsh(sym(Pn - P))[-1] <= 1e-8
    for it in h.iterates:
        assert it.G is not None
        assert is_hurwitz(case.experiment.cl.Xbar @ it.G)


def test_pi_benchmark_residual() -> None:
    """Normalized residual <= 1e-6 within ten iterations."""
    case = benchmark_case(4)
    cl = closed_loop(case)
    h = cl.policy_iteration(cl.particular_solution(case.K0),
                            StopRule(1e-10, 10))
    scale = np.linalg.norm(case.K0 - case.care.Kstar)
    assert np.linalg.norm(h.final.K - case.care.Kstar) / scale <= 1e-6


def test_pi_fixed_point() -> None:
    """Started at K*, one improvement step leaves K unchanged."""
    case = benchmark_case(0)
    cl = closed_loop(case)
    h = cl.policy_iteration(cl.particular_solution(case.care.Kstar),
                            StopRule(1e-7, 5))
    assert len(h) == 2
    assert np.allclose(h.final.K, case.care.Kstar, atol=1e-9)

# !SECTION


# SECTION Riccati equations

def test_identification() -> None:
    """The data-driven CARE coefficients are the least-squares model."""
    case = benchmark_case(1)
    cl = closed_loop(case)
    A, B = ls_identify(case.experiment.cl)
    assert np.allclose(cl.A_dd, A, atol=1e-8)
    assert np.allclose(cl.B_dd, B, atol=1e-8)
    assert np.allclose(cl.A_dd, case.sys.A, atol=1e-8)
    assert np.allclose(cl.B_dd, case.sys.B, atol=1e-8)

    res, _, _ = cl.care_residual_ls(case.care.Pstar)
    assert np.linalg.norm(res) <= 1e-7
    res, _, _ = cl.care_residual_ls(np.zeros((4, 4)))
    assert np.allclose(res, case.sys.Q)


def test_care_view() -> None:
    """J compresses F(P); its residual is the model residual."""
    case = benchmark_case(2)
    cl = closed_loop(case)
    view = cl.care_residual_F(case.care.Pstar)
    assert np.linalg.norm(view.residual) <= 1e-7
    assert np.allclose(view.gain, case.care.Kstar, atol=1e-7)

    view = cl.care_residual_F(np.zeros((4, 4)))
    assert np.allclose(view.J11, case.sys.Q, atol=1e-9)
    assert np.allclose(view.J22, case.sys.R, atol=1e-9)
    assert np.allclose(view.residual, case.sys.Q, atol=1e-9)

    rng = np.random.default_rng(2)
    for _ in range(10):
        P = random_psd(rng, 4)
        view = cl.care_residual_F(P)
        assert np.allclose(view.J, view.J.T, atol=1e-9)
        assert np.allclose(view.J21, case.sys.B.T @ P, atol=1e-7)
        assert np.allclose(view.residual, care_residual(case.sys, P),
                           atol=1e-6)


def test_moore_penrose_identities() -> None:
    """(Pi M Pi)^+ = (U Pi)^+ R^-1 (U Pi)^+T and (Pi M Pi)^+ M = (U Pi)^+ U."""
    for index in range(5):
        case = benchmark_case(index)
        cl = closed_loop(case)
        d = case.experiment.cl
        PMP = pinv(d.Pi @ cl.M @ d.Pi)
        left = d.UPi_dagger @ cl.R_inv @ d.UPi_dagger.T
        assert np.allclose(PMP, left, atol=1e-9)
        assert np.allclose(PMP @ cl.M, d.UPi_dagger @ d.Utilde, atol=1e-9)


def test_riccati_flow_matches_model() -> None:
    """The data-driven flow tracks the model flow at checkpoints."""
    case = benchmark_case(0)
    cl = closed_loop(case)
    settings = FlowSettings(2.0, 1e-3, 100)
    h = cl.riccati_flow(np.zeros((4, 4)), settings)
    ref = riccati_flow_model(case.sys, np.zeros((4, 4)), settings)
    for a, b in zip(h.values(), ref.values()):
        assert np.allclose(a, b, atol=1e-5)


def test_riccati_flow_scalar_and_equilibrium() -> None:
    """Scalar flow from 0 reaches 1 + sqrt(2); P* is an equilibrium."""
    cl = closed_loop(scalar_case())
    h = cl.riccati_flow(np.zeros((1, 1)), FlowSettings(10.0, 1e-3))
    assert h.final.P[0, 0] == pytest.approx(SCALAR_PSTAR, abs=1e-6)

    case = double_integrator_case()
    cl = closed_loop(case)
    h = cl.riccati_flow(DOUBLE_INTEGRATOR_PSTAR, FlowSettings(1.0, 1e-3))
    for P in h.values():
        assert np.allclose(P, DOUBLE_INTEGRATOR_PSTAR, atol=1e-6)


def test_value_iteration() -> None:
    """Scalar VI converges; P* is a fixed point."""
    cl = closed_loop(scalar_case())
    h = cl.value_iteration(np.zeros((1, 1)), StepSchedule(0.5, 0.8),
                           max_iter=5000, record_every=100)
    assert h.final.P[0, 0] == pytest.approx(SCALAR_PSTAR, abs=1e-3)

    h = cl.value_iteration(np.array([[SCALAR_PSTAR]]),
                           StepSchedule(0.5, 0.8), max_iter=10)
    for P in h.values():
        assert P[0, 0] == pytest.approx(SCALAR_PSTAR, abs=1e-8)

# !SECTION


# SECTION Gradient and flows

def test_gradient_feasible_directions() -> None:
    """<grad, D> matches central differences for D in ker(Xtilde)."""
    case = benchmark_case(3)
    cl = closed_loop(case)
    pol = cl.particular_solution(case.K0)
    g = cl.gradient(pol)
    rng = np.random.default_rng(3)
    for _ in range(20):
        D = case.experiment.cl.Pi @ rng.standard_normal(pol.G.shape)
        fd = finite_difference(lambda G: cl.cost(cl.policy(G)), pol.G, D)
        assert np.sum(g * D) == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_gradient_vanishes_at_optimum() -> None:
    """Pi grad f = 0 at the optimal policy."""
    case = benchmark_case(4)
    cl = closed_loop(case)
    pol = cl.particular_solution(case.care.Kstar)
    assert np.linalg.norm(case.experiment.cl.Pi @ cl.gradient(pol)) <= 1e-6


def test_projected_gradient_flow() -> None:
    """Feasible, stabilizing and descending; gain error shrinks."""
    case = double_integrator_case()
    cl = closed_loop(case)
    G0 = cl.particular_solution(case.K0)
    h = cl.projected_gradient_flow(G0, alpha=200.0,
                                   settings=FlowSettings(1.0, 1e-3))
    costs = [np.trace(P) for P in h.values()]
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))
    for it in h.iterates:
        assert cl.feasibility(cl.policy(it.G)) <= 1e-7
    err0 = np.linalg.norm(case.K0 - case.care.Kstar)
    assert np.linalg.norm(h.final.K - case.care.Kstar) < 0.5 * err0

    # implicit regularization: no kernel component ever appears
    Pk = case.experiment.cl.kernel_projector
    for it in h.iterates:
        assert np.linalg.norm(Pk @ it.G) <= 1e-6


def test_regularized_flow() -> None:
    """The norm penalty removes a kernel component of G0."""
    case = double_integrator_case()
    cl = closed_loop(case)
    d = case.experiment.cl
    G0 = cl.particular_solution(case.K0)
    N = random_kernel_element(cl, np.random.default_rng(5))
    start = cl.policy(G0.G + N / np.linalg.norm(N))
    h = cl.projected_gradient_flow(start, alpha=200.0,
                                   settings=FlowSettings(0.5, 1e-3),
                                   lam=0.5)
    first = np.linalg.norm(d.kernel_projector @ h.iterates[0].G)
    last = np.linalg.norm(d.kernel_projector @ h.final.G)
    assert last < first
    assert cl.feasibility(cl.policy(h.final.G)) <= 1e-7


def test_flow_rejects_bad_gains() -> None:
    """alpha must be positive."""
    case = scalar_case()
    cl = closed_loop(case)
    with pytest.raises(ValueError):
        cl.projected_gradient_flow(cl.particular_solution(case.K0), 0.0)

# !SECTION
