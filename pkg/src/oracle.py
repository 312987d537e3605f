"""Model-based LQR, the ground truth for the data-driven solvers."""

from __future__ import annotations

import logging
from dataclasses import (dataclass)
from typing import (Optional)

import numpy as np

from errors import (CareError, SolverError, UnstableError)
from iteration import (
    BoundingSets, FlowSettings, History, Iterate, StepSchedule, StopRule,
    integrate_flow, policy_iteration, value_iteration
)
from linalg import (Matrix, is_hurwitz, solve_lyapunov, spectral, sym)
from sim import (LinearSystem)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CareSolution:
    """Stabilizing solution of the CARE and the optimal gain."""

    Pstar: Matrix
    Kstar: Matrix
    residual: float


def care_residual(sys: LinearSystem, P: Matrix) -> Matrix:
    """A^T P + P A - P B R^-1 B^T P + Q."""
    A, B, Q, R = sys.A, sys.B, sys.Q, sys.R
    PB = P @ B
    return sym(A.T @ P + P @ A - PB @ np.linalg.solve(R, PB.T) + Q)


def _care_scale(sys: LinearSystem, P: Matrix) -> float:
    nP = float(np.linalg.norm(P))
    S = sys.B @ np.linalg.solve(sys.R, sys.B.T)
    return float(np.linalg.norm(sys.Q) + 2 * np.linalg.norm(sys.A) * nP
                 + np.linalg.norm(S) * nP ** 2)


def optimal_gain(sys: LinearSystem, P: Matrix) -> Matrix:
    """R^-1 B^T P."""
    return np.linalg.solve(sys.R, sys.B.T @ P)


def evaluate_gain(sys: LinearSystem, K: Matrix) -> Matrix:
    """P_K from (A - BK)^T P + P (A - BK) + Q + K^T R K = 0."""
    try:
        return solve_lyapunov(sys.A - sys.B @ K, sys.Q + K.T @ sys.R @ K)
    except UnstableError as err:
        raise UnstableError("policy not stabilizing") from err


def care_solve(sys: LinearSystem, refinements: int = 2) -> CareSolution:
    """
    Solve the CARE through the stable invariant subspace of the Hamiltonian.

    The eigenvector solution is polished with Kleinman steps: at least
    `refinements` of them, more while the residual is above 1e-12 of its
    scale.
    """
    A, B, Q, R = sys.A, sys.B, sys.Q, sys.R
    n = sys.n
    S = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -S], [-Q, -A.T]])
    eigs, V = np.linalg.eig(H)
    if np.min(np.abs(eigs.real)) <= 1e-9 * max(1.0, np.linalg.norm(H)):
        raise CareError("CARE ill-posed")
    stable = V[:, eigs.real < 0]
    if stable.shape[1] != n:
        raise CareError("CARE ill-posed")
    X1, X2 = stable[:n], stable[n:]
    try:
        P = sym(np.real(np.linalg.solve(X1.T, X2.T).T))
    except np.linalg.LinAlgError as err:
        raise CareError("CARE ill-posed") from err

    for k in range(refinements + 8):
        res = float(np.linalg.norm(care_residual(sys, P)))
        if k >= refinements and res <= 1e-12 * _care_scale(sys, P):
            break
        K = optimal_gain(sys, P)
        try:
            P = evaluate_gain(sys, K)
        except UnstableError as err:
            raise CareError("CARE ill-posed") from err

    K = optimal_gain(sys, P)
    if not is_hurwitz(A - B @ K):
        raise CareError("CARE solution is not stabilizing")
    res = float(np.linalg.norm(care_residual(sys, P)))
    logger.debug("CARE solved, residual %.3e", res)
    return CareSolution(P, K, res)


def kleinman_pi(sys: LinearSystem, K0: Matrix,
                stop: StopRule = StopRule()) -> History:
    """Kleinman's policy iteration from a stabilizing K0."""
    return policy_iteration(
        K0,
        evaluate=lambda K: (evaluate_gain(sys, K), K),
        improve=lambda P: optimal_gain(sys, P),
        stop=stop,
    )


def lqr_cost(sys: LinearSystem, K: Matrix) -> float:
    """tr(P_K), the cost averaged over initial states with covariance I."""
    return float(np.trace(evaluate_gain(sys, K)))


def gradient(sys: LinearSystem, K: Matrix) -> Matrix:
    """2 (R K - B^T P_K) Y_K with Y_K the closed-loop Gramian."""
    P = evaluate_gain(sys, K)
    Y = solve_lyapunov((sys.A - sys.B @ K).T, np.eye(sys.n))
    return 2 * (sys.R @ K - sys.B.T @ P) @ Y


def riccati_flow_model(sys: LinearSystem, P0: Matrix,
                       settings: FlowSettings = FlowSettings()) -> History:
    """Integrate dP/dt = A^T P + P A - P B R^-1 B^T P + Q."""
    return integrate_flow(
        lambda P: care_residual(sys, P), sym(P0), settings,
        snapshot=lambda t, P, ns: Iterate(t, P, optimal_gain(sys, P), ns),
        after_step=sym,
    )


def vi_model(sys: LinearSystem, P0: Matrix,
             schedule: StepSchedule = StepSchedule(),
             bounds: BoundingSets = BoundingSets(),
             max_iter: int = 5000, tol: float = 1e-12,
             record_every: int = 1) -> History:
    """Value iteration on the model-based Riccati residual."""
    return value_iteration(lambda P: care_residual(sys, P), P0, schedule,
                           bounds, max_iter, tol,
                           gain=lambda P: optimal_gain(sys, P),
                           record_every=record_every)


def gradient_flow_model(sys: LinearSystem, K0: Matrix,
                        settings: FlowSettings = FlowSettings(),
                        beta: float = 1.0) -> History:
    """Integrate dK/dt = -beta grad f(K)."""
    return integrate_flow(
        lambda K: -beta * gradient(sys, K), K0, settings,
        snapshot=lambda t, K, ns: Iterate(t, evaluate_gain(sys, K), K, ns),
    )


def stabilizing_gain_search(sys: LinearSystem, seed: int,
                            max_draws: int = 10_000, margin: float = 1e-6,
                            care: Optional[CareSolution] = None) -> Matrix:
    """
    Draw standard Gaussian gains until A - BK is Hurwitz.

    After max_draws failures, fall back to perturbing K* by 0.5 times a
    Gaussian matrix. The fallback uses the model and is only meant for
    benchmark set-up.
    """
    rng = np.random.default_rng(seed)
    m, n = sys.m, sys.n
    for _ in range(max_draws):
        K = rng.standard_normal((m, n))
        if spectral(sys.A - sys.B @ K).abscissa < -margin:
            return K

    logger.warning("no Gaussian gain stabilizes after %d draws, "
                   "perturbing K*", max_draws)
    Kstar = (care or care_solve(sys)).Kstar
    for _ in range(100):
        K = Kstar + 0.5 * rng.standard_normal((m, n))
        if spectral(sys.A - sys.B @ K).abscissa < -margin:
            return K
    raise SolverError("no stabilizing gain found")
