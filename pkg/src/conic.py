"""Dense conic optimization over products of PSD cones.

A problem is

    minimize    c^T x + c0
    subject to  A x = b
                F_j(x) = F_j0 + sum_i x_i F_ji >= 0   for every block j

with the symmetric blocks stored through vech coordinates. The built-in
backend is a primal-dual interior-point method (HKM direction, Mehrotra
predictor-corrector, infeasible start) preceded by a presolve. A small
modelling layer builds such problems from matrix expressions.
"""

from __future__ import annotations

import logging
from dataclasses import (dataclass, field)
from typing import (Optional, Protocol, Sequence, Union)

import numpy as np
import numpy.typing as npt
from scipy import linalg as sla

from errors import (ShapeError)
from linalg import (
    Matrix, Vector, duplication_matrix, sym, unvech, vech_dim, vech_indices
)

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"
NUMERICAL = "numerical"

BLOWUP = 1e12


# SECTION Problems and solutions

@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and limits of a conic solve."""

    tol: float = 1e-8
    max_iter: int = 200
    # shift used where a strict inequality is later inverted
    psd_shift: float = 1e-9
    step_fraction: float = 0.95
    rank_tol: float = 1e-9
    refinement: int = 3
    phase_one: bool = True

    def __post_init__(self) -> None:
        """Validate the settings."""
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class PSDBlock:
    """The constraint F0 + sum_i x_i F_i >= 0 in vech coordinates."""

    dim: int
    offset: Vector
    operator: Matrix
    name: str = ""

    def __post_init__(self) -> None:
        """Check that offset and operator have vech_dim(dim) rows."""
        p = vech_dim(self.dim)
        if self.offset.shape != (p,) or self.operator.ndim != 2 \
                or self.operator.shape[0] != p:
            raise ShapeError(f"block {self.name!r} of dimension {self.dim} "
                             f"needs {p} vech rows")

    def matrices(self) -> tuple[Matrix, npt.NDArray[np.float64]]:
        """F0 and the stack of coefficient matrices F_i, shape (N, d, d)."""
        d = self.dim
        N = self.operator.shape[1]
        vecs = duplication_matrix(d) @ self.operator
        Fs = vecs.T.reshape(N, d, d).transpose(0, 2, 1)
        return unvech(self.offset), np.ascontiguousarray(Fs)


@dataclass(frozen=True, eq=False)
class ConicProblem:
    """Linear objective, affine equalities and PSD blocks."""

    c: Vector
    A: Matrix
    b: Vector
    blocks: tuple[PSDBlock, ...] = ()
    c0: float = 0.0

    def __post_init__(self) -> None:
        """Check the dimensions."""
        N = self.c.shape[0]
        if self.A.shape != (self.b.shape[0], N):
            raise ShapeError(f"equalities have shape {self.A.shape}, "
                             f"expected ({self.b.shape[0]}, {N})")
        for blk in self.blocks:
            if blk.operator.shape[1] != N:
                raise ShapeError(f"block {blk.name!r} acts on "
                                 f"{blk.operator.shape[1]} variables, not {N}")

    @property
    def N(self) -> int:
        """Number of scalar variables."""
        return self.c.shape[0]

    def objective(self, x: Vector) -> float:
        """c^T x + c0."""
        return float(self.c @ x + self.c0)

    def dump(self) -> str:
        """Human-readable listing of objective, equalities and blocks."""
        def fmt(v: float) -> str:
            return format(float(v), '.17g')

        def terms(row: Vector) -> str:
            nz = [f"{fmt(a)}*x{k}" for k, a in enumerate(row) if a != 0.0]
            return " + ".join(nz) if nz else "0"

        lines = [f"# {self.N} variables, {self.b.shape[0]} equalities, "
                 f"{len(self.blocks)} psd blocks",
                 f"minimize {terms(self.c)} + {fmt(self.c0)}",
                 "equalities"]
        lines += [f"  {terms(row)} = {fmt(rhs)}"
                  for row, rhs in zip(self.A, self.b)]
        for j, blk in enumerate(self.blocks):
            lines.append(f"block {j} {blk.name} dim {blk.dim} (vech rows)")
            lines += [f"  {fmt(f0)} + {terms(row)}"
                      for f0, row in zip(blk.offset, blk.operator)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class ConicSolution:
    """Outcome of a solve with its KKT residuals."""

    status: str
    x: Vector
    y: Vector
    duals: tuple[Matrix, ...]
    objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        """Whether the solve ended optimal."""
        return self.status == OPTIMAL


class Backend(Protocol):
    """Anything that solves a ConicProblem."""

    name: str

    def solve(self, problem: ConicProblem,
              settings: SolverSettings) -> ConicSolution:
        """Solve the problem."""
        ...

# !SECTION


# SECTION Presolve

@dataclass(eq=False)
class _Dense:
    c: Vector
    A: Matrix
    b: Vector
    F0: list[Matrix]
    Fs: list[npt.NDArray[np.float64]]


@dataclass(eq=False)
class _Presolved:
    dense: _Dense
    V: Matrix
    U_eq: Matrix
    bases: list[Optional[Matrix]]
    consistent: bool = True


def _range_basis(M: Matrix, tol: float) -> Matrix:
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((M.shape[0], 0))
    return U[:, s > tol * s[0]]


def _presolve(problem: ConicProblem, settings: SolverSettings) -> _Presolved:
    """
    Shrink the problem without changing its solution set.

    Each block is restricted to the joint range of its coefficient
    matrices, variable directions that neither the objective, the
    equalities nor any block sees are dropped, and linearly dependent
    equalities are removed.
    """
    tol = settings.rank_tol
    F0s, Fss, bases = [], [], []
    for blk in problem.blocks:
        F0, Fs = blk.matrices()
        d = blk.dim
        U = _range_basis(np.hstack([F0] + list(Fs)), tol)
        if U.shape[1] == 0:
            bases.append(None)
            continue
        if U.shape[1] < d:
            logger.debug("block %s reduced from %d to %d", blk.name, d,
                         U.shape[1])
        F0s.append(sym(U.T @ F0 @ U))
        Fss.append(np.einsum('ak,iab,bl->ikl', U, Fs, U))
        bases.append(U)

    N = problem.N
    rows = [problem.c[None, :], problem.A]
    rows += [Fs.reshape(N, Fs.shape[1] ** 2).T for Fs in Fss]
    V = _range_basis(np.vstack(rows).T, tol)

    Az = problem.A @ V
    if Az.size:
        U, s, Wt = np.linalg.svd(Az, full_matrices=False)
        r = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    else:
        U, s, Wt, r = np.zeros((Az.shape[0], 0)), np.zeros(0), \
            np.zeros((0, Az.shape[1])), 0
    U_eq = U[:, :r]
    b = U_eq.T @ problem.b
    off = problem.b - U_eq @ b
    consistent = bool(np.linalg.norm(off) <=
                      1e-8 * max(1.0, float(np.linalg.norm(problem.b))))

    dense = _Dense(
        c=V.T @ problem.c,
        A=s[:r, None] * Wt[:r],
        b=b,
        F0=F0s,
        Fs=[np.einsum('iab,ik->kab', Fs, V) for Fs in Fss],
    )
    logger.debug("presolve: %d -> %d variables, %d -> %d equalities",
                 N, V.shape[1], problem.A.shape[0], r)
    return _Presolved(dense, V, U_eq, bases, consistent)

# !SECTION


# SECTION Interior-point method

@dataclass(eq=False)
class _IPMResult:
    status: str
    z: Vector
    y: Vector
    Lam: list[Matrix]
    iterations: int
    pres: float
    dres: float
    gap: float


def _apply(Fs: npt.NDArray[np.float64], z: Vector) -> Matrix:
    return np.tensordot(z, Fs, axes=1) if z.size else \
        np.zeros(Fs.shape[1:])


def _adjoint(Fs: npt.NDArray[np.float64], X: Matrix) -> Vector:
    return np.einsum('iab,ab->i', Fs, X)


def _max_step(X: Matrix, dX: Matrix) -> float:
    """Largest a with X + a dX >= 0, for X > 0."""
    L = np.linalg.cholesky(X)
    W = sla.solve_triangular(L, dX, lower=True)
    M = sla.solve_triangular(L, W.T, lower=True)
    lam = float(np.linalg.eigvalsh(sym(M))[0])
    return np.inf if lam >= 0 else -1.0 / lam


class _KKT:
    """Factorization of [[H, A^T], [A, 0]] with regularization."""

    def __init__(self, H: Matrix, A: Matrix, refinement: int):
        r, p = H.shape[0], A.shape[0]
        self.K = np.block([[H, A.T], [A, np.zeros((p, p))]])
        delta = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)),
                                              initial=0.0)))
        reg = np.concatenate([np.full(r, delta), np.full(p, -delta)])
        self.size = r + p
        self.refinement = refinement
        if self.size:
            self.lu = sla.lu_factor(self.K + np.diag(reg))

    def solve(self, rhs: Vector) -> Vector:
        if not self.size:
            return np.zeros(0)
        sol = sla.lu_solve(self.lu, rhs)
        for _ in range(self.refinement):
            sol = sol + sla.lu_solve(self.lu, rhs - self.K @ sol)
        return sol


def _ipm(P: _Dense, settings: SolverSettings) -> _IPMResult:
    """Primal-dual path following on the presolved problem."""
    r, p = P.c.size, P.b.size
    dims = [F0.shape[0] for F0 in P.F0]
    nu = max(sum(dims), 1)
    tau = settings.step_fraction

    z = np.linalg.pinv(P.A) @ P.b if p else np.zeros(r)
    xi = 10 * max([1.0, float(np.max(np.abs(P.c), initial=0.0))]
                  + [float(np.linalg.norm(F0)) for F0 in P.F0])
    S = [xi * np.eye(d) for d in dims]
    Lam = [xi * np.eye(d) for d in dims]
    y = np.zeros(p)

    bscale = 1 + float(np.linalg.norm(P.b))
    cscale = 1 + float(np.linalg.norm(P.c))
    fscale = 1 + max([float(np.linalg.norm(F0)) for F0 in P.F0], default=0.0)

    status = MAX_ITER
    pres = dres = gap = np.inf
    it = 0
    for it in range(settings.max_iter + 1):
        rp = [F0 + _apply(Fs, z) - Sj for F0, Fs, Sj in zip(P.F0, P.Fs, S)]
        re = P.b - P.A @ z
        rd = P.c - P.A.T @ y
        for Fs, Lj in zip(P.Fs, Lam):
            rd = rd - _adjoint(Fs, Lj)
        comp = sum(float(np.sum(Sj * Lj)) for Sj, Lj in zip(S, Lam))
        mu = comp / nu
        pobj = float(P.c @ z)
        dobj = float(P.b @ y) - sum(float(np.sum(F0 * Lj))
                                    for F0, Lj in zip(P.F0, Lam))
        pres = max([float(np.linalg.norm(re)) / bscale]
                   + [float(np.linalg.norm(R)) / fscale for R in rp])
        dres = float(np.linalg.norm(rd)) / cscale
        gap = max(abs(pobj - dobj), comp) / (1 + abs(pobj) + abs(dobj))
        logger.debug("ipm %3d: pobj %+.9e dobj %+.9e pres %.2e dres %.2e "
                     "gap %.2e", it, pobj, dobj, pres, dres, gap)

        if max(pres, dres, gap) <= settings.tol:
            status = OPTIMAL
            break
        if it == settings.max_iter:
            break
        if max([float(np.linalg.norm(y)), float(np.linalg.norm(z))]
               + [float(np.linalg.norm(Lj)) for Lj in Lam]) > BLOWUP:
            status = NUMERICAL
            break

        try:
            Sinv = [sla.cho_solve(sla.cho_factor(Sj), np.eye(Sj.shape[0]))
                    for Sj in S]
        except np.linalg.LinAlgError:
            status = NUMERICAL
            break
        H = np.zeros((r, r))
        for Fs, Si, Lj in zip(P.Fs, Sinv, Lam):
            H += np.einsum('iab,kab->ik', Fs, Si @ Fs @ Lj)
        kkt = _KKT(sym(H), P.A, settings.refinement)

        def direction(sigma_mu: float, corr: Optional[list[Matrix]]) \
                -> tuple[Vector, Vector, list[Matrix], list[Matrix]]:
            targets = []
            for j, (Si, Lj, Rj) in enumerate(zip(Sinv, Lam, rp)):
                T = sigma_mu * Si - Lj - Si @ Rj @ Lj
                if corr is not None:
                    T = T - corr[j]
                targets.append(T)
            g = np.zeros(r)
            for Fs, T in zip(P.Fs, targets):
                g += _adjoint(Fs, T)
            sol = kkt.solve(np.concatenate([g - rd, re]))
            dz, dy = sol[:r], -sol[r:]
            dS = [_apply(Fs, dz) + Rj for Fs, Rj in zip(P.Fs, rp)]
            dL = [sym(T) - sym(Si @ dSj @ Lj)
                  for T, Si, dSj, Lj in zip(targets, Sinv, dS, Lam)]
            return dz, dy, dS, dL

        try:
            _, _, dS, dL = direction(0.0, None)
            ap = min([1.0] + [_max_step(Sj, d) for Sj, d in zip(S, dS)])
            ad = min([1.0] + [_max_step(Lj, d) for Lj, d in zip(Lam, dL)])
            mu_aff = sum(float(np.sum((Sj + ap * a) * (Lj + ad * b)))
                         for Sj, a, Lj, b in zip(S, dS, Lam, dL)) / nu
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
            corr = [Si @ a @ b for Si, a, b in zip(Sinv, dS, dL)]
            dz, dy, dS, dL = direction(sigma * mu, corr)
            ap = min([1.0] + [tau * _max_step(Sj, d) for Sj, d in zip(S, dS)])
            ad = min([1.0] + [tau * _max_step(Lj, d)
                              for Lj, d in zip(Lam, dL)])
        except (np.linalg.LinAlgError, ValueError):
            status = NUMERICAL
            break
        if ap < 1e-10 and ad < 1e-10:
            status = NUMERICAL
            break

        z = z + ap * dz
        S = [sym(Sj + ap * d) for Sj, d in zip(S, dS)]
        y = y + ad * dy
        Lam = [sym(Lj + ad * d) for Lj, d in zip(Lam, dL)]

    return _IPMResult(status, z, y, Lam, it, pres, dres, gap)


def _phase_one(P: _Dense, settings: SolverSettings) -> Optional[float]:
    """min t s.t. A z = b, F_j(z) + t I >= 0, t >= -1; None if unsolved."""
    r = P.c.size
    F0 = P.F0 + [np.ones((1, 1))]
    Fs = [np.concatenate([Fs, np.eye(Fs.shape[1])[None]], axis=0)
          for Fs in P.Fs]
    t_only = np.zeros((r + 1, 1, 1))
    t_only[r] = 1.0
    Fs.append(t_only)
    aux = _Dense(c=np.concatenate([np.zeros(r), [1.0]]),
                 A=np.hstack([P.A, np.zeros((P.A.shape[0], 1))]),
                 b=P.b, F0=F0, Fs=Fs)
    res = _ipm(aux, settings)
    if res.status != OPTIMAL:
        return None
    return float(res.z[-1])


class InteriorPoint:
    """The built-in dense primal-dual interior-point backend."""

    name = "ipm"

    def solve(self, problem: ConicProblem,
              settings: SolverSettings = SolverSettings()) -> ConicSolution:
        """Presolve, run the interior-point method and map back."""
        pre = _presolve(problem, settings)
        dense = pre.dense
        if not pre.consistent:
            logger.info("conic solve: inconsistent equalities")
            res = _IPMResult(INFEASIBLE, np.zeros(dense.c.size),
                             np.zeros(dense.b.size),
                             [np.zeros_like(F0) for F0 in dense.F0],
                             0, np.inf, np.inf, np.inf)
        else:
            res = _ipm(dense, settings)
            if res.status != OPTIMAL and settings.phase_one:
                t = _phase_one(dense, settings)
                scale = 1 + max([float(np.linalg.norm(F0))
                                 for F0 in dense.F0], default=0.0)
                if t is not None and t > 1e-6 * scale:
                    logger.debug("phase one: min t = %.3e", t)
                    res.status = INFEASIBLE

        x = pre.V @ res.z
        duals, k = [], 0
        for blk, U in zip(problem.blocks, pre.bases):
            if U is None:
                duals.append(np.zeros((blk.dim, blk.dim)))
            else:
                duals.append(sym(U @ res.Lam[k] @ U.T))
                k += 1
        y = pre.U_eq @ res.y
        dobj = float(problem.b @ y) + problem.c0 - sum(
            float(np.sum(unvech(blk.offset) * D))
            for blk, D in zip(problem.blocks, duals))
        sol = ConicSolution(
            status=res.status, x=x, y=y, duals=tuple(duals),
            objective=problem.objective(x), dual_objective=dobj,
            primal_residual=res.pres, dual_residual=res.dres, gap=res.gap,
            iterations=res.iterations,
        )
        logger.info("conic solve: %s after %d iterations, objective %.9g",
                    sol.status, sol.iterations, sol.objective)
        return sol


class CvxpyBackend:
    """Solve through cvxpy, for cross-validation. Needs cvxpy installed."""

    name = "cvxpy"

    def __init__(self, solver: Optional[str] = None):
        """Import cvxpy; `solver` is passed on to Problem.solve."""
        import cvxpy
        self._cp = cvxpy
        self.solver = solver

    def solve(self, problem: ConicProblem,
              settings: SolverSettings = SolverSettings()) -> ConicSolution:
        """Build the problem in cvxpy and read the solution back."""
        cp = self._cp
        N = problem.N
        x = cp.Variable(N)
        constraints = []
        if problem.b.size:
            constraints.append(problem.A @ x == problem.b)
        lmis = []
        for blk in problem.blocks:
            F0, Fs = blk.matrices()
            d = blk.dim
            flat = Fs.reshape(N, d * d).T
            M = cp.reshape(F0.reshape(-1) + flat @ x, (d, d), order='C')
            lmis.append((M + M.T) / 2 >> 0)
        prob = cp.Problem(cp.Minimize(problem.c @ x), constraints + lmis)
        prob.solve(solver=self.solver)

        status = {"optimal": OPTIMAL, "infeasible": INFEASIBLE}.get(
            prob.status, NUMERICAL)
        xv = np.zeros(N) if x.value is None else np.asarray(x.value)
        duals = tuple(np.zeros((b.dim, b.dim)) if c.dual_value is None
                      else np.asarray(c.dual_value)
                      for b, c in zip(problem.blocks, lmis))
        y = np.zeros(problem.b.size)
        if constraints and constraints[0].dual_value is not None:
            y = np.asarray(constraints[0].dual_value).reshape(-1)
        pres = max([float(np.linalg.norm(problem.A @ xv - problem.b))]
                   + [max(0.0, -float(np.linalg.eigvalsh(
                       F0 + np.tensordot(xv, Fs, axes=1))[0]))
                      for F0, Fs in (b.matrices() for b in problem.blocks)])
        return ConicSolution(
            status=status, x=xv, y=y, duals=duals,
            objective=problem.objective(xv), dual_objective=np.nan,
            primal_residual=pres, dual_residual=np.nan, gap=np.nan,
        )


def solve(problem: ConicProblem, settings: SolverSettings = SolverSettings(),
          backend: Optional[Backend] = None) -> ConicSolution:
    """Solve with `backend`, the interior-point method by default."""
    return (backend or InteriorPoint()).solve(problem, settings)

# !SECTION


# SECTION Modelling layer

Operand = Union["AffineMatrix", npt.ArrayLike]


class AffineMatrix:
    """A matrix const + sum_k x_k lin[:, :, k] affine in the variables."""

    # let numpy arrays defer to the reflected operators
    __array_ufunc__ = None

    def __init__(self, const: npt.ArrayLike,
                 lin: Optional[npt.NDArray[np.float64]] = None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        if lin is None:
            lin = np.zeros(self.const.shape + (0,))
        self.lin = np.asarray(lin, dtype=float)
        assert self.lin.shape[:2] == self.const.shape, \
            "coefficients must match the constant's shape"

    @property
    def shape(self) -> tuple[int, int]:
        """Matrix shape."""
        return self.const.shape

    @property
    def N(self) -> int:
        """Number of variables the expression is defined over."""
        return self.lin.shape[2]

    def widen(self, N: int) -> AffineMatrix:
        """The same expression over N >= self.N variables."""
        if N == self.N:
            return self
        pad = np.zeros(self.shape + (N - self.N,))
        return AffineMatrix(self.const, np.concatenate([self.lin, pad], 2))

    @staticmethod
    def lift(value: Operand) -> AffineMatrix:
        """Wrap a constant as an expression."""
        if isinstance(value, AffineMatrix):
            return value
        return AffineMatrix(value)

    def _pair(self, other: Operand) -> tuple[AffineMatrix, AffineMatrix]:
        o = AffineMatrix.lift(other)
        if np.ndim(other) == 0 and not isinstance(other, AffineMatrix):
            o = AffineMatrix(np.full(self.shape, float(other)))
        N = max(self.N, o.N)
        a, b = self.widen(N), o.widen(N)
        if a.shape != b.shape:
            raise ShapeError(f"shapes {a.shape} and {b.shape} do not match")
        return a, b

    def __add__(self, other: Operand) -> AffineMatrix:
        a, b = self._pair(other)
        return AffineMatrix(a.const + b.const, a.lin + b.lin)

    __radd__ = __add__

    def __neg__(self) -> AffineMatrix:
        return AffineMatrix(-self.const, -self.lin)

    def __sub__(self, other: Operand) -> AffineMatrix:
        return self + (-AffineMatrix.lift(other) if isinstance(
            other, AffineMatrix) else -np.asarray(other, dtype=float))

    def __rsub__(self, other: Operand) -> AffineMatrix:
        return -self + other

    def __mul__(self, scalar: float) -> AffineMatrix:
        if np.ndim(scalar) != 0:
            raise TypeError("only scalar multiples; use @ for products")
        return AffineMatrix(scalar * self.const, scalar * self.lin)

    __rmul__ = __mul__

    def __matmul__(self, other: Operand) -> AffineMatrix:
        if isinstance(other, AffineMatrix):
            if other.N and np.any(other.lin):
                if self.N and np.any(self.lin):
                    raise TypeError("product of two affine expressions "
                                    "is not affine")
                return other.__rmatmul__(self.const)
            other = other.const
        M = np.atleast_2d(np.asarray(other, dtype=float))
        if self.shape[1] != M.shape[0]:
            raise ShapeError(f"cannot multiply {self.shape} by {M.shape}")
        return AffineMatrix(self.const @ M,
                            np.einsum('rck,cd->rdk', self.lin, M))

    def __rmatmul__(self, other: npt.ArrayLike) -> AffineMatrix:
        M = np.atleast_2d(np.asarray(other, dtype=float))
        if M.shape[1] != self.shape[0]:
            raise ShapeError(f"cannot multiply {M.shape} by {self.shape}")
        return AffineMatrix(M @ self.const,
                            np.einsum('ar,rck->ack', M, self.lin))

    @property
    def T(self) -> AffineMatrix:
        """Transpose."""
        return AffineMatrix(self.const.T, self.lin.transpose(1, 0, 2))

    def trace(self) -> AffineMatrix:
        """Trace as a 1 x 1 expression."""
        if self.shape[0] != self.shape[1]:
            raise ShapeError(f"trace of a {self.shape} matrix")
        return AffineMatrix([[np.trace(self.const)]],
                            np.trace(self.lin, axis1=0, axis2=1)[None, None])

    def value(self, x: Vector) -> Matrix:
        """Evaluate at the variable vector x."""
        return self.const + self.lin @ np.asarray(x)[:self.N]


def bmat(rows: Sequence[Sequence[Operand]]) -> AffineMatrix:
    """Assemble a block matrix of expressions and constants."""
    exprs = [[AffineMatrix.lift(e) for e in row] for row in rows]
    N = max(e.N for row in exprs for e in row)
    exprs = [[e.widen(N) for e in row] for row in exprs]
    try:
        const = np.block([[e.const for e in row] for row in exprs])
        lin = np.concatenate([np.concatenate([e.lin for e in row], axis=1)
                              for row in exprs], axis=0)
    except ValueError as err:
        raise ShapeError(f"block shapes do not fit: {err}") from err
    return AffineMatrix(const, lin)


@dataclass(frozen=True, eq=False)
class ModelSolution:
    """A conic solution read back in the model's own sense."""

    solution: ConicSolution
    sense: int

    @property
    def status(self) -> str:
        """Solver status."""
        return self.solution.status

    @property
    def objective(self) -> float:
        """Objective value, maximized or minimized as stated."""
        return self.sense * self.solution.objective

    def value(self, expr: AffineMatrix) -> Matrix:
        """Value of an expression at the solution."""
        return expr.value(self.solution.x)


@dataclass
class Model:
    """Incremental builder of a ConicProblem."""

    name: str = ""
    N: int = 0
    variables: list[tuple[str, int, int]] = field(default_factory=list)
    _rows: list[tuple[AffineMatrix, str]] = field(default_factory=list)
    _blocks: list[tuple[AffineMatrix, str]] = field(default_factory=list)
    _objective: Optional[AffineMatrix] = None
    _sense: int = 1

    def _new(self, count: int, name: str) -> int:
        start = self.N
        self.N += count
        self.variables.append((name, start, count))
        return start

    def sym(self, n: int, name: str = "") -> AffineMatrix:
        """A new symmetric n x n matrix variable."""
        count = vech_dim(n)
        start = self._new(count, name)
        lin = np.zeros((n, n, self.N))
        i, j = vech_indices(n)
        k = start + np.arange(count)
        lin[i, j, k] = 1.0
        lin[j, i, k] = 1.0
        return AffineMatrix(np.zeros((n, n)), lin)

    def mat(self, rows: int, cols: int, name: str = "") -> AffineMatrix:
        """A new rows x cols matrix variable, columns stacked."""
        start = self._new(rows * cols, name)
        lin = np.zeros((rows, cols, self.N))
        i, j = np.indices((rows, cols))
        lin[i, j, start + i + j * rows] = 1.0
        return AffineMatrix(np.zeros((rows, cols)), lin)

    def psd(self, expr: AffineMatrix, name: str = "") -> None:
        """Require expr >= 0; expr must be symmetric."""
        r, c = expr.shape
        if r != c:
            raise ShapeError(f"psd block {name!r} is {r}x{c}")
        scale = max(1.0, float(np.max(np.abs(expr.lin), initial=0.0)),
                    float(np.max(np.abs(expr.const), initial=0.0)))
        asym = max(float(np.max(np.abs(expr.const - expr.const.T))),
                   float(np.max(np.abs(expr.lin - expr.lin.transpose(1, 0, 2)),
                                initial=0.0)))
        if asym > 1e-9 * scale:
            raise ValueError(f"psd block {name!r} is not symmetric")
        self._blocks.append((AffineMatrix(sym(expr.const), (
            expr.lin + expr.lin.transpose(1, 0, 2)) / 2), name))

    def equal(self, lhs: Operand, rhs: Operand = 0.0,
              symmetric: bool = False, name: str = "") -> None:
        """Require lhs = rhs entrywise, or on the lower triangle."""
        e = AffineMatrix.lift(lhs) - rhs
        r, c = e.shape
        if symmetric:
            if r != c:
                raise ShapeError(f"symmetric equality {name!r} is {r}x{c}")
            i, j = vech_indices(r)
            e = AffineMatrix(e.const[i, j][:, None], e.lin[i, j][:, None])
        else:
            e = AffineMatrix(e.const.T.reshape(-1, 1),
                             e.lin.transpose(1, 0, 2).reshape(r * c, 1, e.N))
        self._rows.append((e, name))

    def minimize(self, expr: AffineMatrix) -> None:
        """Set a 1 x 1 objective to minimize."""
        if expr.shape != (1, 1):
            raise ShapeError("objective must be 1 x 1")
        self._objective, self._sense = expr, 1

    def maximize(self, expr: AffineMatrix) -> None:
        """Set a 1 x 1 objective to maximize."""
        self.minimize(expr)
        self._sense = -1

    def problem(self) -> ConicProblem:
        """The ConicProblem over all variables created so far."""
        N = self.N
        obj = (self._objective or AffineMatrix([[0.0]])).widen(N)
        rows = [e.widen(N) for e, _ in self._rows]
        A = np.vstack([e.lin[:, 0, :] for e in rows]) if rows \
            else np.zeros((0, N))
        b = np.concatenate([-e.const[:, 0] for e in rows]) if rows \
            else np.zeros(0)
        blocks = []
        for expr, name in self._blocks:
            e = expr.widen(N)
            i, j = vech_indices(e.shape[0])
            blocks.append(PSDBlock(e.shape[0], e.const[i, j], e.lin[i, j],
                                   name))
        return ConicProblem(c=self._sense * obj.lin[0, 0],
                            A=A, b=b, blocks=tuple(blocks),
                            c0=self._sense * float(obj.const[0, 0]))

    def solve(self, settings: SolverSettings = SolverSettings(),
              backend: Optional[Backend] = None) -> ModelSolution:
        """Solve and wrap the solution."""
        return ModelSolution(solve(self.problem(), settings, backend),
                             self._sense)

    def dump(self) -> str:
        """Variable table followed by the problem listing."""
        sense = "maximize" if self._sense < 0 else "minimize"
        head = [f"# model {self.name} ({sense}, stored as minimize)"]
        head += [f"# var {name} x{start}..x{start + count - 1}"
                 for name, start, count in self.variables]
        return "\n".join(head) + "\n" + self.problem().dump()

# !SECTION
