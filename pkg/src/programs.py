"""Semidefinite programs whose solutions give the LQR gain.

Three programs use closed-loop data, two use integral reinforcement
learning data, and a model-based primal/dual pair serves as a reference.
Each `build_*` returns the model with handles to its variables and each
`solve_*` solves it and recovers the gain.
"""

from __future__ import annotations

import logging
from dataclasses import (dataclass, field)
from typing import (Callable, Optional)

import numpy as np

from clparam import (ClosedLoop)
from conic import (
    AffineMatrix, Backend, ConicSolution, Model, SolverSettings, bmat
)
from errors import (DegenerateError, SolverError)
from linalg import (Matrix, sqrt_psd, sym)
from sim import (CLData, IRLData, LinearSystem)

logger = logging.getLogger(__name__)

# Matrices that are inverted after the solve must be this well conditioned.
MAX_CONDITION = 1e12


@dataclass(eq=False)
class Program:
    """A model and handles to the variables a gain is recovered from."""

    model: Model
    variables: dict[str, AffineMatrix]


@dataclass(frozen=True, eq=False)
class ProgramResult:
    """Recovered gain, value matrix when there is one, and the raw solve."""

    K: Matrix
    P: Optional[Matrix]
    objective: float
    solution: ConicSolution
    extras: dict[str, Matrix] = field(default_factory=dict)


def _solve(program: Program, settings: SolverSettings,
           backend: Optional[Backend]) -> tuple[float, dict[str, Matrix],
                                                ConicSolution]:
    sol = program.model.solve(settings, backend)
    if not sol.solution.optimal:
        raise SolverError(f"{program.model.name}: solver ended "
                          f"{sol.status}")
    values = {k: sol.value(v) for k, v in program.variables.items()}
    return sol.objective, values, sol.solution


def _checked_inverse(M: Matrix, what: str) -> Matrix:
    M = sym(M)
    if np.linalg.cond(M) > MAX_CONDITION or np.linalg.eigvalsh(M)[0] <= 0:
        raise DegenerateError(f"degenerate optimizer: {what} is singular")
    return np.linalg.inv(M)


def _weights(Q: Matrix, R: Matrix) -> tuple[Matrix, Matrix]:
    return np.asarray(Q, dtype=float), np.asarray(R, dtype=float)


# SECTION Closed-loop data

def build_cl1(data: CLData, Q: Matrix, R: Matrix,
              settings: SolverSettings = SolverSettings()) -> Program:
    """
    min tr(Q Y) + tr(S) s.t. [[S, R^(1/2) U Z], [., Y]] >= 0,
    Xbar Z + Z^T Xbar^T + I <= 0, Y = Xtilde Z, Y >= eps I.
    """
    Q, R = _weights(Q, R)
    n, m, T = data.n, data.m, data.T
    model = Model("cl1")
    Y = model.sym(n, "Y")
    Z = model.mat(T, n, "Z")
    S = model.sym(m, "S")
    RUZ = sqrt_psd(R) @ data.Utilde @ Z
    model.psd(bmat([[S, RUZ], [RUZ.T, Y]]), "schur")
    XZ = data.Xbar @ Z
    model.psd(-(XZ + XZ.T + np.eye(n)), "lyapunov")
    model.equal(Y, data.Xtilde @ Z, name="Y = Xtilde Z")
    model.psd(Y - settings.psd_shift * np.eye(n), "Y > 0")
    model.minimize((Q @ Y).trace() + S.trace())
    return Program(model, {"Y": Y, "Z": Z, "S": S})


def solve_cl1(data: CLData, Q: Matrix, R: Matrix,
              settings: SolverSettings = SolverSettings(),
              backend: Optional[Backend] = None) -> ProgramResult:
    """K = -Utilde Z Y^-1."""
    obj, v, sol = _solve(build_cl1(data, Q, R, settings), settings, backend)
    G = v["Z"] @ _checked_inverse(v["Y"], "Y")
    return ProgramResult(-data.Utilde @ G, None, obj, sol,
                         {"Y": sym(v["Y"]), "Z": v["Z"], "S": sym(v["S"]),
                          "G": G})


def build_cl2(data: CLData, Q: Matrix, R: Matrix,
              settings: SolverSettings = SolverSettings()) -> Program:
    """
    max tr(S) s.t. the Riccati inequality in (Z, S) after the change of
    variables Z = G P^-1, S = P^-1, stationarity on ker(Xtilde) and
    S = Xtilde Z >= eps I.
    """
    Q, R = _weights(Q, R)
    n, m, T = data.n, data.m, data.T
    model = Model("cl2")
    Z = model.mat(T, n, "Z")
    S = model.sym(n, "S")
    XZ = data.Xbar @ Z
    UZ = data.Utilde @ Z
    QS = sqrt_psd(Q) @ S
    model.psd(-bmat([
        [XZ + XZ.T, UZ.T, QS.T],
        [UZ, -np.linalg.inv(R), np.zeros((m, n))],
        [QS, np.zeros((n, m)), -np.eye(n)],
    ]), "riccati")
    N = data.N
    M = data.Utilde.T @ R @ data.Utilde
    model.equal(N.T @ M @ Z, -N.T @ data.Xbar.T, name="stationarity")
    model.equal(S, data.Xtilde @ Z, name="S = Xtilde Z")
    model.psd(S - settings.psd_shift * np.eye(n), "S > 0")
    model.maximize(S.trace())
    return Program(model, {"Z": Z, "S": S})


def solve_cl2(data: CLData, Q: Matrix, R: Matrix,
              settings: SolverSettings = SolverSettings(),
              backend: Optional[Backend] = None) -> ProgramResult:
    """P = S^-1 and K = -Utilde Z S^-1."""
    obj, v, sol = _solve(build_cl2(data, Q, R, settings), settings, backend)
    P = _checked_inverse(v["S"], "S")
    return ProgramResult(-data.Utilde @ v["Z"] @ P, sym(P), obj, sol,
                         {"Z": v["Z"], "S": sym(v["S"])})


def build_cl3(data: CLData, Q: Matrix, R: Matrix,
              settings: SolverSettings = SolverSettings()) -> Program:
    """max tr(P) s.t. F(P) >= 0, P >= 0, with the T x T matrix F."""
    Q, R = _weights(Q, R)
    model = Model("cl3")
    P = model.sym(data.n, "P")
    E = data.Xtilde.T @ P @ data.Xbar
    F0 = data.Utilde.T @ R @ data.Utilde + data.Xtilde.T @ Q @ data.Xtilde
    model.psd(E + E.T + sym(F0), "F(P)")
    model.psd(P, "P")
    model.maximize(P.trace())
    return Program(model, {"P": P})


def solve_cl3(data: CLData, Q: Matrix, R: Matrix,
              settings: SolverSettings = SolverSettings(),
              backend: Optional[Backend] = None) -> ProgramResult:
    """K = R^-1 J21 of the compressed F(P*)."""
    obj, v, sol = _solve(build_cl3(data, Q, R, settings), settings, backend)
    P = sym(v["P"])
    view = ClosedLoop(data, Q, R).care_residual_F(P)
    return ProgramResult(view.gain, P, obj, sol, {"J": view.J})

# !SECTION


# SECTION Integral reinforcement learning data

def build_irl1(data: IRLData, Q: Matrix, R: Matrix,
               settings: SolverSettings = SolverSettings()) -> Program:
    """
    max tr(P) s.t. the linear form of f_i(P, W) in (P, W, Z) vanishes
    on every window, [[Z, W], [W^T, R]] >= 0 and P >= 0.
    """
    Q, R = _weights(Q, R)
    n, m = data.n, data.m
    model = Model("irl1")
    P = model.sym(n, "P")
    W = model.mat(n, m, "W")
    Z = model.sym(n, "Z")
    for i in range(data.T):
        r_dx, r_xx, r_xu = data.window(i)
        model.equal((P @ r_dx).trace() - (Z @ r_xx).trace()
                    - 2 * (W.T @ r_xu).trace(),
                    -np.trace(Q @ r_xx), name=f"window {i}")
    model.psd(bmat([[Z, W], [W.T, R]]), "schur")
    model.psd(P, "P")
    model.maximize(P.trace())
    return Program(model, {"P": P, "W": W, "Z": Z})


def solve_irl1(data: IRLData, Q: Matrix, R: Matrix,
               settings: SolverSettings = SolverSettings(),
               backend: Optional[Backend] = None) -> ProgramResult:
    """K = R^-1 W^T; the Schur slack Z - W R^-1 W^T is returned too."""
    obj, v, sol = _solve(build_irl1(data, Q, R, settings), settings,
                         backend)
    R_inv = np.linalg.inv(np.asarray(R, dtype=float))
    W = v["W"]
    slack = sym(v["Z"] - W @ R_inv @ W.T)
    return ProgramResult(R_inv @ W.T, sym(v["P"]), obj, sol,
                         {"W": W, "Z": sym(v["Z"]), "slack": slack})


def build_irl2(data: IRLData, Q: Matrix, R: Matrix,
               settings: SolverSettings = SolverSettings()) -> Program:
    """
    max tr(P) s.t. [[H + Q, Kplus^T], [Kplus, R^-1]] >= 0, the (H, Kplus)
    regression holds on every window and P >= eps I.
    """
    Q, R = _weights(Q, R)
    n, m = data.n, data.m
    model = Model("irl2")
    P = model.sym(n, "P")
    H = model.sym(n, "H")
    Kp = model.mat(m, n, "Kplus")
    for i in range(data.T):
        r_dx, r_xx, r_xu = data.window(i)
        model.equal((P @ r_dx).trace() - (H @ r_xx).trace()
                    - 2 * (R @ Kp @ r_xu).trace(), name=f"window {i}")
    model.psd(bmat([[H + Q, Kp.T], [Kp, np.linalg.inv(R)]]), "schur")
    model.psd(P - settings.psd_shift * np.eye(n), "P > 0")
    model.maximize(P.trace())
    return Program(model, {"P": P, "H": H, "Kplus": Kp})


def solve_irl2(data: IRLData, Q: Matrix, R: Matrix,
               settings: SolverSettings = SolverSettings(),
               backend: Optional[Backend] = None) -> ProgramResult:
    """K = Kplus."""
    obj, v, sol = _solve(build_irl2(data, Q, R, settings), settings,
                         backend)
    return ProgramResult(v["Kplus"], sym(v["P"]), obj, sol,
                         {"H": sym(v["H"]), "Kplus": v["Kplus"]})

# !SECTION


# SECTION Model-based pair

def model_primal_program(sys: LinearSystem) -> Program:
    """max tr(P) s.t. [[A^T P + P A + Q, P B], [B^T P, R]] >= 0, P >= 0."""
    model = Model("model-primal")
    P = model.sym(sys.n, "P")
    PB = P @ sys.B
    model.psd(bmat([[sys.A.T @ P + P @ sys.A + sys.Q, PB],
                    [PB.T, sys.R]]), "riccati")
    model.psd(P, "P")
    model.maximize(P.trace())
    return Program(model, {"P": P})


def model_dual_program(sys: LinearSystem) -> Program:
    """
    min tr(Q Y) + tr(S) s.t. [[S, R^(1/2) Z], [., Y]] >= 0 and
    A Y + Y A^T - B Z - Z^T B^T + I <= 0; the gain is Z Y^-1.
    """
    n, m = sys.n, sys.m
    model = Model("model-dual")
    Y = model.sym(n, "Y")
    Z = model.mat(m, n, "Z")
    S = model.sym(m, "S")
    RZ = sqrt_psd(sys.R) @ Z
    model.psd(bmat([[S, RZ], [RZ.T, Y]]), "schur")
    AY = sys.A @ Y - sys.B @ Z
    model.psd(-(AY + AY.T + np.eye(n)), "lyapunov")
    model.minimize((sys.Q @ Y).trace() + S.trace())
    return Program(model, {"Y": Y, "Z": Z, "S": S})


def solve_model_pair(sys: LinearSystem,
                     settings: SolverSettings = SolverSettings(),
                     backend: Optional[Backend] = None) \
        -> tuple[ProgramResult, ProgramResult]:
    """Solve both; their optimal values agree at tr(P*)."""
    obj_p, vp, sol_p = _solve(model_primal_program(sys), settings, backend)
    P = sym(vp["P"])
    primal = ProgramResult(np.linalg.solve(sys.R, sys.B.T @ P), P, obj_p,
                           sol_p)
    obj_d, vd, sol_d = _solve(model_dual_program(sys), settings, backend)
    K = vd["Z"] @ _checked_inverse(vd["Y"], "Y")
    dual = ProgramResult(K, None, obj_d, sol_d, {"Y": sym(vd["Y"])})
    logger.info("model programs: primal %.9g, dual %.9g", obj_p, obj_d)
    return primal, dual

# !SECTION


Solver = Callable[..., ProgramResult]

PROGRAMS: dict[str, tuple[str, Solver]] = {
    "cl1": ("cl", solve_cl1),
    "cl2": ("cl", solve_cl2),
    "cl3": ("cl", solve_cl3),
    "irl1": ("irl", solve_irl1),
    "irl2": ("irl", solve_irl2),
}
