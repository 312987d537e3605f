"""Dense linear algebra kernels used by the rest of the package.

Matrices are plain numpy arrays. Vectorization is column-major
throughout, so vec(M) stacks the columns of M and vech(M) stacks the
columns of the lower triangle.
"""

from __future__ import annotations

import logging
from dataclasses import (dataclass)
from typing import (Literal)

import numpy as np
import numpy.typing as npt
from scipy import linalg as sla

from errors import (RankError, ShapeError, SolverError, UnstableError)

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

# Singular values below RANK_TOL * sigma_max count as zero.
RANK_TOL = 1e-8
# Eigenvalues with real part in (-HURWITZ_MARGIN, 0] are not stable.
HURWITZ_MARGIN = 1e-9
SYMMETRY_TOL = 1e-8


# SECTION Structured reshapes

def vec(M: npt.ArrayLike) -> Vector:
    """Stack the columns of M into a vector."""
    return np.asarray(M, dtype=float).reshape(-1, order='F')


def unvec(v: npt.ArrayLike, rows: int, cols: int) -> Matrix:
    """Inverse of vec for a rows x cols matrix."""
    v = np.asarray(v, dtype=float)
    if v.size != rows * cols:
        raise ShapeError(f"cannot reshape {v.size} entries to {rows}x{cols}")
    return v.reshape((rows, cols), order='F')


def vech_indices(n: int) \
        -> tuple[npt.NDArray[np.intp], npt.NDArray[np.intp]]:
    """Row and column indices of the vech entries, in vech order."""
    # triu_indices walks (r, c) with r <= c row by row; swapping the
    # roles gives the lower triangle column by column.
    r, c = np.triu_indices(n)
    return c, r


def sym(M: npt.ArrayLike) -> Matrix:
    """Symmetric part of M."""
    M = np.asarray(M, dtype=float)
    return (M + M.T) / 2


def check_symmetric(M: Matrix, name: str = "matrix") -> None:
    """Raise ValueError if M is not symmetric to SYMMETRY_TOL."""
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {M.shape}")
    if np.linalg.norm(M - M.T) > SYMMETRY_TOL * np.linalg.norm(M):
        raise ValueError(f"{name} is not symmetric")


def vech(M: npt.ArrayLike) -> Vector:
    """Stack the columns of the lower triangle of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    check_symmetric(M)
    i, j = vech_indices(M.shape[0])
    return M[i, j]


def unvech(v: npt.ArrayLike) -> Matrix:
    """Rebuild the symmetric matrix whose vech is v."""
    v = np.asarray(v, dtype=float)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != v.size:
        raise ShapeError(f"{v.size} is not a triangular number")
    i, j = vech_indices(n)
    M = np.zeros((n, n))
    M[i, j] = v
    M[j, i] = v
    return M


def vech_dim(n: int) -> int:
    """Length of vech of an n x n matrix."""
    return n * (n + 1) // 2


def duplication_matrix(n: int) -> Matrix:
    """The 0/1 matrix D with vec(P) = D vech(P) for symmetric P."""
    assert n >= 1, "dimension must be positive"
    D = np.zeros((n * n, vech_dim(n)))
    for k, (i, j) in enumerate(zip(*vech_indices(n))):
        D[i + j * n, k] = 1.0
        D[j + i * n, k] = 1.0
    return D


def commutation_matrix(m: int, n: int) -> Matrix:
    """The permutation C with C vec(M) = vec(M^T) for every m x n M."""
    assert m >= 1 and n >= 1, "dimensions must be positive"
    C = np.zeros((m * n, m * n))
    for i in range(m):
        for j in range(n):
            C[j + i * n, i + j * m] = 1.0
    return C


def kron(A: npt.ArrayLike, B: npt.ArrayLike) -> Matrix:
    """Kronecker product; block (i, j) is A[i, j] * B."""
    return np.kron(np.asarray(A, dtype=float), np.asarray(B, dtype=float))

# !SECTION


# SECTION Pseudoinverses and kernels

def pinv(M: npt.ArrayLike, tol: float = RANK_TOL) -> Matrix:
    """Moore-Penrose pseudoinverse through the SVD."""
    return np.linalg.pinv(np.asarray(M, dtype=float), rcond=tol)


def rank(M: npt.ArrayLike, tol: float = RANK_TOL) -> int:
    """Numerical rank with singular values below tol * sigma_max dropped."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def null_basis(M: npt.ArrayLike, tol: float = RANK_TOL) -> Matrix:
    """Orthonormal basis of ker(M), one basis vector per column."""
    return sla.null_space(np.atleast_2d(np.asarray(M, dtype=float)),
                          rcond=tol)


def nullspace_projector(M: npt.ArrayLike, tol: float = RANK_TOL) -> Matrix:
    """Orthogonal projector I - M^+ M onto ker(M) for full row rank M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    r = rank(M, tol)
    if r < M.shape[0]:
        raise RankError(
            f"projector needs full row rank, rank is {r} < {M.shape[0]}")
    Pi = np.eye(M.shape[1]) - pinv(M, tol) @ M
    return sym(Pi)

# !SECTION


# SECTION Spectra

@dataclass(frozen=True)
class SpectralReport:
    """Eigenvalues of a square matrix and its stability verdict."""

    eigenvalues: npt.NDArray[np.complex128]
    abscissa: float
    hurwitz: bool
    margin: float = HURWITZ_MARGIN


def spectral(M: npt.ArrayLike, margin: float = HURWITZ_MARGIN) \
        -> SpectralReport:
    """Compute the spectrum of M and decide whether it is Hurwitz."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"spectrum needs a square matrix, got {M.shape}")
    try:
        eigs = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as err:
        raise SolverError(f"eigenvalue iteration failed: {err}") from err
    abscissa = float(np.max(eigs.real))
    return SpectralReport(eigs, abscissa, abscissa < -margin, margin)


def is_hurwitz(M: npt.ArrayLike, margin: float = HURWITZ_MARGIN) -> bool:
    """Test whether every eigenvalue of M has real part below -margin."""
    return spectral(M, margin).hurwitz


def min_eig(M: Matrix) -> float:
    """Smallest eigenvalue of the symmetric part of M."""
    return float(np.linalg.eigvalsh(sym(M))[0])


def is_psd(M: Matrix, tol: float = 0.0) -> bool:
    """Test M >= -tol * I."""
    return min_eig(M) >= -tol


def sqrt_psd(M: Matrix) -> Matrix:
    """Symmetric square root of a positive semidefinite matrix."""
    w, V = np.linalg.eigh(sym(M))
    return sym((V * np.sqrt(np.clip(w, 0.0, None))) @ V.T)

# !SECTION


# SECTION Lyapunov equations

LyapunovMethod = Literal["vectorized", "bartels-stewart"]


def solve_lyapunov(Acl: npt.ArrayLike, W: npt.ArrayLike,
                   method: LyapunovMethod = "vectorized",
                   check_stable: bool = True) -> Matrix:
    """
    Solve Acl^T P + P Acl + W = 0 for symmetric P.

    The default method solves the n^2-dimensional vectorized system
    (I kron Acl^T + Acl^T kron I) vec(P) = -vec(W). The Bartels-Stewart
    method goes through scipy's Schur-based solver.
    """
    Acl = np.asarray(Acl, dtype=float)
    W = np.asarray(W, dtype=float)
    n = Acl.shape[0]
    if Acl.shape != (n, n) or W.shape != (n, n):
        raise ShapeError(
            f"Lyapunov shapes do not match: {Acl.shape} and {W.shape}")
    if check_stable and not is_hurwitz(Acl):
        raise UnstableError("unstable closed loop")

    if method == "vectorized":
        I = np.eye(n)
        L = np.kron(I, Acl.T) + np.kron(Acl.T, I)
        try:
            P = unvec(np.linalg.solve(L, -vec(W)), n, n)
        except np.linalg.LinAlgError as err:
            raise SolverError("singular Lyapunov operator") from err
    elif method == "bartels-stewart":
        # scipy solves a X + X a^H = q
        P = sla.solve_continuous_lyapunov(Acl.T, -W)
    else:
        raise ValueError(f"unknown Lyapunov method {method!r}")

    P = sym(P)
    res = np.linalg.norm(Acl.T @ P + P @ Acl + W)
    scale = np.linalg.norm(W) + np.linalg.norm(P) * np.linalg.norm(Acl)
    if res > 1e-9 * max(scale, 1.0):
        logger.warning("Lyapunov residual %.3e exceeds tolerance", res)
    return P

# !SECTION


def expm(M: npt.ArrayLike) -> Matrix:
    """Matrix exponential by scaling and squaring with a Pade approximant."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"expm needs a square matrix, got {M.shape}")
    return sla.expm(M)
