"""LQR through the integral reinforcement learning parameterization.

Every method here reads the quadratic integrals of one trajectory
(Gamma^dx, Gamma^xx, Gamma^ux) and the weights (Q, R). A gain K is
evaluated by the regression Phi theta = b with theta = [vech P; vec B^T P];
a value matrix P is mapped to (A^T P + P A, R^-1 B^T P) by a second
regression that does not depend on any gain.
"""

from __future__ import annotations

import logging
from dataclasses import (dataclass)
from functools import (cached_property)
from typing import (Callable, Optional)

import numpy as np
from scipy import linalg as sla

from errors import (NotInformativeError, UnstableError)
from iteration import (
    BoundingSets, FlowSettings, History, Iterate, StepSchedule, StopRule,
    integrate_flow, policy_iteration, value_iteration
)
from linalg import (
    Matrix, Vector, duplication_matrix, min_eig, pinv, rank, sym, unvec,
    unvech, vec, vech_dim
)
from sim import (IRLData)

logger = logging.getLogger(__name__)

# Relative regression residual above which a warning is logged.
RESIDUAL_WARN = 1e-6

Certificate = Callable[[Matrix], bool]


@dataclass(frozen=True, eq=False)
class IRLRegression:
    """The regressors of the evaluation of one gain."""

    PhiBar: Matrix
    Phi: Matrix
    b: Vector
    K: Matrix


@dataclass(frozen=True, eq=False)
class IRLEvaluation:
    """Estimated value matrix, B^T P and the stacked regression solution."""

    P_hat: Matrix
    BtP: Matrix
    theta: Vector
    residual: float = 0.0

    @property
    def cost(self) -> float:
        """tr(P_hat)."""
        return float(np.trace(self.P_hat))


@dataclass(frozen=True, eq=False)
class Lse2Solution:
    """H = A^T P + P A and Kplus = R^-1 B^T P recovered from data."""

    H: Matrix
    Kplus: Matrix


def positive_definite(P: Matrix) -> bool:
    """Data-driven stability certificate: P_hat > 0 (valid for Q > 0)."""
    return min_eig(P) > 0.0


class IntegralRL:
    """LQR solvers acting on integral reinforcement learning data only."""

    def __init__(self, data: IRLData, Q: Matrix, R: Matrix,
                 certify: Optional[Certificate] = None):
        """
        Check the data and precompute the gain-independent products.

        `certify` decides whether a gain is stabilizing. It defaults to
        the data-only test P_hat > 0; benchmark runs pass an oracle.
        """
        data.validate()
        self.data = data
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.R_inv = np.linalg.inv(self.R)
        self.certify = certify
        n, m = data.n, data.m
        self._p = vech_dim(n)
        self._D = duplication_matrix(n)
        self._GdxD = data.GammaDx @ self._D
        self._I = np.eye(n)
        assert data.GammaUX.shape == (data.T, m * n), \
            "Gamma^ux must have mn columns"

    # SECTION Policy evaluation

    def _E(self, K: Matrix) -> Matrix:
        # E(K) = Gamma^ux + Gamma^xx (I kron K^T)
        return self.data.GammaUX + self.data.GammaXX @ np.kron(self._I, K.T)

    def build_regression(self, K: Matrix) -> IRLRegression:
        """Phi = [Gamma^dx D, -2 E(K)] and b = -Gamma^xx vec(Q + K^T R K)."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        E2 = -2 * self._E(K)
        return IRLRegression(
            PhiBar=np.hstack([self.data.GammaDx, E2]),
            Phi=np.hstack([self._GdxD, E2]),
            b=-self.data.GammaXX @ vec(self.Q + K.T @ self.R @ K),
            K=K,
        )

    def evaluate(self, K: Matrix, check: bool = True) -> IRLEvaluation:
        """
        Solve Phi theta = b by QR least squares.

        With `check`, a gain that fails the stability certificate raises
        UnstableError.
        """
        reg = self.build_regression(K)
        n, m, p = self.data.n, self.data.m, self._p
        if rank(reg.Phi) < p + m * n:
            raise NotInformativeError("data not informative (IRL)")

        Qf, Rf = np.linalg.qr(reg.Phi)
        theta = sla.solve_triangular(Rf, Qf.T @ reg.b)
        res = float(np.linalg.norm(reg.b - reg.Phi @ theta))
        scale = float(np.linalg.norm(reg.b))
        if res > RESIDUAL_WARN * scale:
            logger.warning("IRL regression residual %.3e (|b| = %.3e): "
                           "gain may not be stabilizing", res, scale)

        ev = IRLEvaluation(sym(unvech(theta[:p])), unvec(theta[p:], m, n),
                           theta, res)
        if check:
            ok = self.certify(reg.K) if self.certify is not None \
                else positive_definite(ev.P_hat)
            if not ok:
                raise UnstableError("policy not stabilizing")
        return ev

    def cost(self, K: Matrix) -> float:
        """Data-driven cost tr(P_hat_K)."""
        return self.evaluate(K).cost

    def policy_iteration(self, K0: Matrix,
                         stop: StopRule = StopRule()) -> History:
        """Policy iteration with K_{k+1} = R^-1 (B^T P)_k."""
        BtP: list[Matrix] = []

        def evaluate(K: Matrix) -> tuple[Matrix, Matrix]:
            ev = self.evaluate(K)
            BtP.append(ev.BtP)
            return ev.P_hat, K

        # improve consumes the B^T P of the evaluation just made
        def improve(_: Matrix) -> Matrix:
            return self.R_inv @ BtP[-1]

        return policy_iteration(np.atleast_2d(np.asarray(K0, dtype=float)),
                                evaluate, improve, stop)

    # !SECTION

    # SECTION Data-driven Riccati equations

    @cached_property
    def _lse2_dagger(self) -> Matrix:
        n, m = self.data.n, self.data.m
        Phi = np.hstack([
            self.data.GammaXX @ self._D,
            2 * self.data.GammaUX @ np.kron(self._I, self.R),
        ])
        if rank(Phi) < self._p + m * n:
            raise NotInformativeError("data not informative (IRL)")
        return pinv(Phi)

    def solve_lse2(self, P: Matrix) -> Lse2Solution:
        """Regress Gamma^dx vec(P) on [Gamma^xx D, 2 Gamma^ux (I kron R)]."""
        theta = self._lse2_dagger @ (self.data.GammaDx @ vec(P))
        p = self._p
        return Lse2Solution(unvech(theta[:p]),
                            unvec(theta[p:], self.data.m, self.data.n))

    def care_residual(self, P: Matrix) -> Matrix:
        """H - Kplus^T R Kplus + Q."""
        sol = self.solve_lse2(P)
        return sym(sol.H - sol.Kplus.T @ self.R @ sol.Kplus + self.Q)

    def _gain(self, P: Matrix) -> Matrix:
        return self.solve_lse2(P).Kplus

    def riccati_flow(self, P0: Matrix,
                     settings: FlowSettings = FlowSettings()) -> History:
        """Integrate dP/dt = H - Kplus^T R Kplus + Q."""
        return integrate_flow(
            self.care_residual, sym(P0), settings,
            snapshot=lambda t, P, ns: Iterate(t, P, self._gain(P), ns),
            after_step=sym,
        )

    def value_iteration(self, P0: Matrix,
                        schedule: StepSchedule = StepSchedule(),
                        bounds: BoundingSets = BoundingSets(),
                        max_iter: int = 5000, tol: float = 1e-12,
                        record_every: int = 1) -> History:
        """Value iteration with one LSE2 solve per step."""
        return value_iteration(self.care_residual, P0, schedule, bounds,
                               max_iter, tol, gain=self._gain,
                               record_every=record_every)

    def f(self, P: Matrix, W: Matrix) -> Vector:
        """All f_i(P, W) at once, one entry per window."""
        d = self.data
        return (d.GammaDx @ vec(P) + d.GammaXX @ vec(self.Q)
                - d.GammaXX @ vec(W @ self.R_inv @ W.T)
                - 2 * d.GammaXU @ vec(W))

    def f_i(self, i: int, P: Matrix, W: Matrix) -> float:
        """
        tr(P r_dx) + tr(Q r_xx) - tr(W R^-1 W^T r_xx) - 2 tr(W^T r_xu).

        At the CARE solution P* with W = P* B it vanishes on every window.
        """
        r_dx, r_xx, r_xu = self.data.window(i)
        return float(np.trace(P @ r_dx) + np.trace(self.Q @ r_xx)
                     - np.trace(W @ self.R_inv @ W.T @ r_xx)
                     - 2 * np.trace(W.T @ r_xu))

    # !SECTION

    # SECTION Policy gradient

    def l_matrix(self, K: Matrix) -> Matrix:
        """
        The matrix L with vec(L) = (Psi PhiBar^+ Gamma^xx)^T vec(I).

        Psi keeps the first n^2 rows. PhiBar is rank deficient by the
        antisymmetric directions, so the minimum-norm pseudoinverse is
        used. L equals -Y_K for a stabilizing K.
        """
        reg = self.build_regression(K)
        n, m = self.data.n, self.data.m
        if rank(reg.PhiBar) < self._p + m * n:
            raise NotInformativeError("data not informative (IRL)")
        rows = pinv(reg.PhiBar)[:n * n] @ self.data.GammaXX
        return unvec(rows.T @ vec(self._I), n, n)

    def gradient(self, K: Matrix) -> Matrix:
        """2 ((B^T P)_K - R K) L."""
        K = np.atleast_2d(np.asarray(K, dtype=float))
        ev = self.evaluate(K)
        return 2 * (ev.BtP - self.R @ K) @ self.l_matrix(K)

    def gradient_flow(self, K0: Matrix, beta: float = 1.5,
                      settings: FlowSettings = FlowSettings(1.0)) -> History:
        """Integrate dK/dt = -beta grad f(K)."""
        if beta <= 0:
            raise ValueError("need beta > 0")
        K0 = np.atleast_2d(np.asarray(K0, dtype=float))
        self.evaluate(K0)

        def rhs(K: Matrix) -> Matrix:
            try:
                return -beta * self.gradient(K)
            except UnstableError as err:
                raise UnstableError(
                    "flow left the stabilizing set, reduce the step") from err

        def snapshot(t: float, K: Matrix, ns: int) -> Iterate:
            return Iterate(t, self.evaluate(K).P_hat, K.copy(), ns)

        return integrate_flow(rhs, K0, settings, snapshot)

    # !SECTION
