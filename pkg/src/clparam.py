"""LQR through the closed-loop data parameterization.

A gain is represented by a T x n matrix G with Xtilde G = I; then
K = -Utilde G and A - BK = Xbar G. Everything here uses the data
(Xbar, Utilde, Xtilde) and the weights (Q, R) only.
"""

from __future__ import annotations

import logging
from dataclasses import (dataclass)
from typing import (Optional)

import numpy as np

from errors import (FeasibilityError, UnstableError)
from iteration import (
    BoundingSets, FlowSettings, History, Iterate, StepSchedule, StopRule,
    integrate_flow, policy_iteration, value_iteration
)
from linalg import (Matrix, is_hurwitz, solve_lyapunov, sym)
from sim import (CLData)

logger = logging.getLogger(__name__)

# relative to max(1, |Xtilde| |G|)
FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class CLPolicy:
    """A data matrix G with its gain and closed-loop matrix."""

    G: Matrix
    K: Matrix
    Acl: Matrix

    @classmethod
    def of(cls, data: CLData, G: Matrix) -> CLPolicy:
        """Derive K = -Utilde G and Acl = Xbar G."""
        return cls(G, -data.Utilde @ G, data.Xbar @ G)


@dataclass(frozen=True, eq=False)
class CLEvaluation:
    """Value matrix and cost of a policy, plus its Gramian on request."""

    P: Matrix
    cost: float
    Y: Optional[Matrix] = None


@dataclass(frozen=True, eq=False)
class CLCareView:
    """The compressed matrix J of F(P), the Riccati residual and the gain."""

    J: Matrix
    residual: Matrix
    gain: Matrix
    n: int

    @property
    def J11(self) -> Matrix:
        """State block."""
        return self.J[:self.n, :self.n]

    @property
    def J12(self) -> Matrix:
        """Off-diagonal block (P B)."""
        return self.J[:self.n, self.n:]

    @property
    def J21(self) -> Matrix:
        """Off-diagonal block (B^T P)."""
        return self.J[self.n:, :self.n]

    @property
    def J22(self) -> Matrix:
        """Input block (R)."""
        return self.J[self.n:, self.n:]


class ClosedLoop:
    """LQR solvers acting on closed-loop data only."""

    def __init__(self, data: CLData, Q: Matrix, R: Matrix):
        """Check the data and precompute the data-only matrices."""
        data.validate()
        self.data = data
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.R_inv = np.linalg.inv(self.R)
        self.M = data.Utilde.T @ self.R @ data.Utilde

        # coefficients of the data-driven Riccati equation
        I = np.eye(data.T)
        self.A_dd = data.Xbar @ (I - data.UPi_dagger @ data.Utilde) \
            @ data.Xtilde_dagger
        self.B_dd = data.Xbar @ data.UPi_dagger

        # [Xtilde; Utilde] W = I, so J(P) only needs these products
        W = data.xu_dagger
        self._XtW = data.Xtilde @ W
        self._XbW = data.Xbar @ W
        self._UW = data.Utilde @ W

    # SECTION Policies

    def policy(self, G: Matrix) -> CLPolicy:
        """Wrap G as a policy."""
        return CLPolicy.of(self.data, G)

    def particular_solution(self, K: Matrix) -> CLPolicy:
        """Minimum-norm G with [-K; I] = [Utilde; Xtilde] G."""
        n = self.data.n
        rhs = np.vstack([-np.asarray(K, dtype=float), np.eye(n)])
        return self.policy(self.data.stacked_dagger @ rhs)

    def feasibility(self, pol: CLPolicy) -> float:
        """|Xtilde G - I|_F."""
        return float(np.linalg.norm(self.data.Xtilde @ pol.G
                                    - np.eye(self.data.n)))

    def feasibility_bound(self, pol: CLPolicy) -> float:
        """Largest |Xtilde G - I|_F still read as Xtilde G = I."""
        scale = np.linalg.norm(self.data.Xtilde, 2) * np.linalg.norm(pol.G, 2)
        return FEASIBILITY_TOL * max(1.0, float(scale))

    def check_member(self, pol: CLPolicy) -> None:
        """Raise unless Xtilde G = I and Xbar G is Hurwitz."""
        gap = self.feasibility(pol)
        if gap > self.feasibility_bound(pol):
            raise FeasibilityError(f"G violates Xtilde G = I by {gap:.2e}")
        if not is_hurwitz(pol.Acl):
            raise UnstableError("policy not stabilizing")

    # !SECTION

    # SECTION Evaluation and improvement

    def evaluate(self, pol: CLPolicy,
                 with_gramian: bool = False) -> CLEvaluation:
        """Solve (Xbar G)^T P + P Xbar G + Q + G^T M G = 0."""
        self.check_member(pol)
        P = solve_lyapunov(pol.Acl, self.Q + pol.G.T @ self.M @ pol.G)
        Y = solve_lyapunov(pol.Acl.T, np.eye(self.data.n)) \
            if with_gramian else None
        return CLEvaluation(P, float(np.trace(P)), Y)

    def cost(self, pol: CLPolicy) -> float:
        """f(G) = tr(P_G)."""
        return self.evaluate(pol).cost

    def improve(self, P: Matrix) -> CLPolicy:
        """Minimum-norm improved policy for the value matrix P."""
        d = self.data
        G = d.Xtilde_dagger - d.UPi_dagger @ (
            d.Utilde @ d.Xtilde_dagger
            + self.R_inv @ d.UPi_dagger.T @ (P @ d.Xbar).T
        )
        return self.policy(G)

    def policy_iteration(self, G0: CLPolicy,
                         stop: StopRule = StopRule()) -> History:
        """Policy iteration over G, stopping on the gain step."""
        def evaluate(pol: CLPolicy) -> tuple[Matrix, Matrix]:
            return self.evaluate(pol).P, pol.K

        return policy_iteration(G0, evaluate, self.improve, stop,
                                record_state=lambda pol: pol.G)

    # !SECTION

    # SECTION Data-driven Riccati equations

    def care_residual_ls(self, P: Matrix) -> tuple[Matrix, Matrix, Matrix]:
        """Riccati residual with the least-squares coefficients."""
        A, B = self.A_dd, self.B_dd
        PB = P @ B
        res = sym(A.T @ P + P @ A - PB @ self.R_inv @ PB.T + self.Q)
        return res, A, B

    def F(self, P: Matrix) -> Matrix:
        """The T x T matrix F(P)."""
        d = self.data
        XtPXb = d.Xtilde.T @ P @ d.Xbar
        return sym(XtPXb + XtPXb.T + self.M + d.Xtilde.T @ self.Q @ d.Xtilde)

    def _J(self, P: Matrix) -> Matrix:
        XtPXb = self._XtW.T @ P @ self._XbW
        return sym(XtPXb + XtPXb.T + self._UW.T @ self.R @ self._UW
                   + self._XtW.T @ self.Q @ self._XtW)

    def care_residual_F(self, P: Matrix) -> CLCareView:
        """Compress F(P) to J and form J11 - J12 R^-1 J21."""
        n = self.data.n
        J = self._J(P)
        J12, J21 = J[:n, n:], J[n:, :n]
        res = sym(J[:n, :n] - J12 @ self.R_inv @ J21)
        return CLCareView(J, res, self.R_inv @ J21, n)

    def _residual(self, P: Matrix) -> Matrix:
        return self.care_residual_F(P).residual

    def _gain(self, P: Matrix) -> Matrix:
        return self.care_residual_F(P).gain

    def riccati_flow(self, P0: Matrix,
                     settings: FlowSettings = FlowSettings()) -> History:
        """Integrate dP/dt = J11 - J12 R^-1 J21."""
        return integrate_flow(
            self._residual, sym(P0), settings,
            snapshot=lambda t, P, ns: Iterate(t, P, self._gain(P), ns),
            after_step=sym,
        )

    def value_iteration(self, P0: Matrix,
                        schedule: StepSchedule = StepSchedule(),
                        bounds: BoundingSets = BoundingSets(),
                        max_iter: int = 5000, tol: float = 1e-12,
                        record_every: int = 1) -> History:
        """Value iteration on the data-driven Riccati residual."""
        return value_iteration(self._residual, P0, schedule, bounds,
                               max_iter, tol, gain=self._gain,
                               record_every=record_every)

    # !SECTION

    # SECTION Policy gradient

    def gradient(self, pol: CLPolicy) -> Matrix:
        """2 (Utilde^T R Utilde G + Xbar^T P_G) Y_G."""
        ev = self.evaluate(pol, with_gramian=True)
        assert ev.Y is not None
        return 2 * (self.M @ pol.G + self.data.Xbar.T @ ev.P) @ ev.Y

    def projected_gradient_flow(self, G0: CLPolicy, alpha: float = 200.0,
                                settings: FlowSettings = FlowSettings(1.0),
                                lam: float = 0.0) -> History:
        """
        Integrate dG/dt = -alpha Pi grad, optionally with a norm regularizer.

        With lam > 0 the objective is f(G) + lam |Pi~ G|_F where Pi~
        projects onto ker([Utilde; Xtilde]). After every step G is moved
        back onto Xtilde G = I.
        """
        if alpha <= 0 or lam < 0:
            raise ValueError("need alpha > 0 and lam >= 0")
        self.check_member(G0)
        d = self.data
        Pi, Pk = d.Pi, d.kernel_projector
        I = np.eye(d.n)

        def rhs(G: Matrix) -> Matrix:
            try:
                g = self.gradient(self.policy(G))
            except UnstableError as err:
                raise UnstableError(
                    "flow left the stabilizing set, reduce the step") from err
            if lam > 0:
                PkG = Pk @ G
                norm = np.linalg.norm(PkG)
                if norm > 1e-14:
                    g = g + lam * PkG / norm
            return -alpha * (Pi @ g)

        def reproject(G: Matrix) -> Matrix:
            return G - d.Xtilde_dagger @ (d.Xtilde @ G - I)

        def snapshot(t: float, G: Matrix, ns: int) -> Iterate:
            pol = self.policy(G)
            return Iterate(t, self.evaluate(pol).P, pol.K, ns, G)

        return integrate_flow(rhs, G0.G, settings, snapshot, reproject)

    # !SECTION
