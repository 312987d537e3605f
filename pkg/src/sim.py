"""Simulation of the plant and collection of integrated trajectory data.

A trajectory is propagated exactly under a zero-order-hold input: the
state, its running integral and the running input integral are states
of one augmented linear system whose transition over a fine step is a
single matrix exponential. Both parameterizations read their data from
the same trajectory.
"""

from __future__ import annotations

import logging
from dataclasses import (dataclass, field, replace)
from functools import (cached_property)
from pathlib import (Path)
from typing import (Optional)

import numpy as np
import numpy.typing as npt
from scipy import integrate

from errors import (DivergenceError, NotInformativeError, RankError,
                    ShapeError)
from linalg import (
    RANK_TOL, Matrix, commutation_matrix, expm, is_psd, null_basis,
    nullspace_projector, pinv, rank, sqrt_psd, sym, unvec, vec, vech_dim
)

logger = logging.getLogger(__name__)

BLOWUP_NORM = 1e9


# SECTION Plant

def _pbh_full_rank(M: npt.NDArray[np.complex128], n: int) -> bool:
    s = np.linalg.svd(M, compute_uv=False)
    return s[0] > 0 and int(np.sum(s > RANK_TOL * s[0])) == n


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """The plant dx/dt = Ax + Bu with cost weights Q and R."""

    A: Matrix
    B: Matrix
    Q: Matrix
    R: Matrix

    def __post_init__(self) -> None:
        """Coerce to float arrays and check shapes and definiteness."""
        for name in ('A', 'B', 'Q', 'R'):
            object.__setattr__(self, name,
                               np.atleast_2d(np.asarray(getattr(self, name),
                                                        dtype=float)))
        n, m = self.B.shape
        if self.A.shape != (n, n) or self.Q.shape != (n, n) \
                or self.R.shape != (m, m):
            raise ShapeError(
                f"inconsistent plant shapes A{self.A.shape} B{self.B.shape} "
                f"Q{self.Q.shape} R{self.R.shape}")
        if not np.allclose(self.Q, self.Q.T) or not is_psd(self.Q, 1e-12):
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(self.R, self.R.T) or \
                np.linalg.eigvalsh(sym(self.R))[0] <= 0:
            raise ValueError("R must be symmetric positive definite")

    @property
    def n(self) -> int:
        """State dimension."""
        return self.A.shape[0]

    @property
    def m(self) -> int:
        """Input dimension."""
        return self.B.shape[1]

    def _unstable_modes(self) -> npt.NDArray[np.complex128]:
        eigs = np.linalg.eigvals(self.A)
        return eigs[eigs.real >= 0]

    def stabilizable(self) -> bool:
        """PBH test of [A - lambda I, B] at every non-stable eigenvalue."""
        I = np.eye(self.n)
        return all(
            _pbh_full_rank(np.hstack([self.A - lam * I, self.B]), self.n)
            for lam in self._unstable_modes()
        )

    def detectable(self) -> bool:
        """PBH test of [A - lambda I; Q^(1/2)] at non-stable eigenvalues."""
        I = np.eye(self.n)
        Qh = sqrt_psd(self.Q)
        return all(
            _pbh_full_rank(np.vstack([self.A - lam * I, Qh]), self.n)
            for lam in self._unstable_modes()
        )

    def satisfies_assumptions(self) -> bool:
        """Stabilizable and detectable, so the CARE has a stabilizing root."""
        return self.stabilizable() and self.detectable()

# !SECTION


# SECTION Excitation and sampling

@dataclass(frozen=True)
class ExcitationConfig:
    """Piecewise-constant Gaussian excitation."""

    hold_interval: float = 0.01
    amplitude_scale: float = 1.0
    seed: int = 0
    input_law: str = "gaussian-hold"
    x0_scale: float = 1.0

    def __post_init__(self) -> None:
        """Validate the excitation parameters."""
        if self.hold_interval <= 0:
            raise ValueError("hold interval must be positive")
        if self.input_law != "gaussian-hold":
            raise ValueError(f"unknown input law {self.input_law!r}")


@dataclass(frozen=True)
class SampleSchedule:
    """Integration windows [t_i, t_i + window_length]."""

    window_starts: tuple[float, ...]
    window_length: float
    substeps_per_hold: int = 10

    def __post_init__(self) -> None:
        """Validate the windows."""
        if len(self.window_starts) < 1:
            raise ValueError("need at least one window")
        if self.window_length <= 0:
            raise ValueError("window length must be positive")
        if min(self.window_starts) < 0:
            raise ValueError("windows must start at non-negative times")

    @classmethod
    def consecutive(cls, T: int, delta: float,
                    substeps_per_hold: int = 10) -> SampleSchedule:
        """T back-to-back windows of length delta starting at 0."""
        return cls(tuple(i * delta for i in range(T)), delta,
                   substeps_per_hold)

    @property
    def T(self) -> int:
        """Number of windows."""
        return len(self.window_starts)

    @property
    def horizon(self) -> float:
        """End of the last window."""
        return max(self.window_starts) + self.window_length


def _divides(a: float, b: float) -> bool:
    q = b / a
    return abs(q - round(q)) <= 1e-9 * max(1.0, abs(q))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fine-grid samples of a ZOH trajectory.

    x, xi and eta hold the state, int x and int u at every grid point;
    u[k] is the input applied on [t[k], t[k+1]).
    """

    t: Matrix
    x: Matrix
    xi: Matrix
    eta: Matrix
    u: Matrix
    step: float
    hold_interval: float

    @property
    def horizon(self) -> float:
        """Final time."""
        return float(self.t[-1])

    def index(self, time: float) -> int:
        """Grid index of a time that must lie on the grid."""
        k = int(round(time / self.step))
        if abs(k * self.step - time) > 1e-9 * max(1.0, abs(time)) \
                or not 0 <= k < len(self.t):
            raise ValueError(f"time {time} is not on the simulation grid")
        return k


def simulate_zoh(sys: LinearSystem, excitation: ExcitationConfig,
                 horizon: float, substeps_per_hold: int = 10,
                 x0: Optional[npt.ArrayLike] = None,
                 inputs: Optional[npt.ArrayLike] = None) -> Trajectory:
    """
    Propagate the plant exactly under a zero-order-hold input.

    Unless given, the initial state and the per-hold input amplitudes are
    drawn from the excitation's seeded generator, in that order. `inputs`
    has one row per hold interval.
    """
    n, m = sys.n, sys.m
    hold = excitation.hold_interval
    if not _divides(hold, horizon):
        raise ValueError("horizon must be a whole number of hold intervals")
    holds = int(round(horizon / hold))
    h = hold / substeps_per_hold

    rng = np.random.default_rng(excitation.seed)
    x0 = excitation.x0_scale * rng.standard_normal(n) if x0 is None \
        else np.asarray(x0, dtype=float).reshape(n)
    if inputs is None:
        inputs = excitation.amplitude_scale * \
            rng.standard_normal((holds, m))
    inputs = np.asarray(inputs, dtype=float).reshape(holds, m)

    # augmented state z = [x; int x; int u; u] with du/dt = 0
    d = 2 * n + 2 * m
    M = np.zeros((d, d))
    M[:n, :n] = sys.A
    M[:n, 2 * n + m:] = sys.B
    M[n:2 * n, :n] = np.eye(n)
    M[2 * n:2 * n + m, 2 * n + m:] = np.eye(m)
    E = expm(M * h)

    steps = holds * substeps_per_hold
    Z = np.empty((steps + 1, d))
    z = np.zeros(d)
    z[:n] = x0
    Z[0] = z
    k = 0
    for j in range(holds):
        z[2 * n + m:] = inputs[j]
        for _ in range(substeps_per_hold):
            z = E @ z
            k += 1
            Z[k] = z
        if np.linalg.norm(z[:n]) > BLOWUP_NORM:
            raise DivergenceError("trajectory blow-up")

    return Trajectory(
        t=np.arange(steps + 1) * h,
        x=Z[:, :n], xi=Z[:, n:2 * n], eta=Z[:, 2 * n:2 * n + m],
        u=np.repeat(inputs, substeps_per_hold, axis=0),
        step=h, hold_interval=hold,
    )

# !SECTION


# SECTION Closed-loop data

@dataclass(frozen=True, eq=False)
class CLData:
    """State differences, input integrals and state integrals per window."""

    Xbar: Matrix
    Utilde: Matrix
    Xtilde: Matrix

    @property
    def n(self) -> int:
        """State dimension."""
        return self.Xbar.shape[0]

    @property
    def m(self) -> int:
        """Input dimension."""
        return self.Utilde.shape[0]

    @property
    def T(self) -> int:
        """Number of windows."""
        return self.Xbar.shape[1]

    def is_informative(self) -> bool:
        """Rank condition rank([U; X]) = n + m."""
        return rank(self.stacked) == self.n + self.m

    def validate(self) -> None:
        """Raise NotInformativeError unless the rank condition holds."""
        if not self.is_informative():
            raise NotInformativeError("data not informative (CL)")

    @cached_property
    def stacked(self) -> Matrix:
        """[Utilde; Xtilde]."""
        return np.vstack([self.Utilde, self.Xtilde])

    @cached_property
    def stacked_dagger(self) -> Matrix:
        """[Utilde; Xtilde]^+."""
        return pinv(self.stacked)

    @cached_property
    def xu_dagger(self) -> Matrix:
        """[Xtilde; Utilde]^+, the state block first."""
        return pinv(np.vstack([self.Xtilde, self.Utilde]))

    @cached_property
    def Xtilde_dagger(self) -> Matrix:
        """Xtilde^+."""
        return pinv(self.Xtilde)

    @cached_property
    def Pi(self) -> Matrix:
        """Projector onto ker(Xtilde)."""
        try:
            return nullspace_projector(self.Xtilde)
        except RankError as err:
            raise NotInformativeError("data not informative (CL)") from err

    @cached_property
    def N(self) -> Matrix:
        """Orthonormal basis of ker(Xtilde)."""
        return null_basis(self.Xtilde)

    @cached_property
    def UPi_dagger(self) -> Matrix:
        """(Utilde Pi)^+."""
        return pinv(self.Utilde @ self.Pi)

    @cached_property
    def kernel_projector(self) -> Matrix:
        """Projector onto ker([Utilde; Xtilde])."""
        return sym(np.eye(self.T) - self.stacked_dagger @ self.stacked)


def _window_indices(traj: Trajectory, schedule: SampleSchedule) \
        -> list[tuple[int, int]]:
    if schedule.horizon > traj.horizon + 1e-9:
        raise ValueError("trajectory does not cover every window")
    if not _divides(traj.hold_interval, schedule.window_length):
        raise ValueError("hold interval must divide the window length")
    return [(traj.index(s), traj.index(s + schedule.window_length))
            for s in schedule.window_starts]


def collect_cl_data(traj: Trajectory, schedule: SampleSchedule,
                    validate: bool = True) -> CLData:
    """Build (Xbar, Utilde, Xtilde) with one column per window."""
    idx = _window_indices(traj, schedule)
    k0 = np.array([i for i, _ in idx])
    k1 = np.array([j for _, j in idx])
    data = CLData(
        Xbar=(traj.x[k1] - traj.x[k0]).T,
        Utilde=(traj.eta[k1] - traj.eta[k0]).T,
        Xtilde=(traj.xi[k1] - traj.xi[k0]).T,
    )
    if validate:
        data.validate()
    return data


def ls_identify(data: CLData) -> tuple[Matrix, Matrix]:
    """Least-squares (A, B) from Xbar = [B A][Utilde; Xtilde]."""
    data.validate()
    BA = data.Xbar @ data.stacked_dagger
    return BA[:, data.m:], BA[:, :data.m]

# !SECTION


# SECTION Integral reinforcement learning data

@dataclass(frozen=True, eq=False)
class IRLData:
    """Quadratic integrals of the trajectory, one row per window."""

    GammaDx: Matrix
    GammaXX: Matrix
    GammaUX: Matrix
    GammaXU: Matrix
    n: int
    m: int

    @property
    def T(self) -> int:
        """Number of windows."""
        return self.GammaDx.shape[0]

    def is_informative(self) -> bool:
        """Rank condition rank([Gxx Gux]) = n(n+1)/2 + mn."""
        full = vech_dim(self.n) + self.m * self.n
        return rank(np.hstack([self.GammaXX, self.GammaUX])) == full

    def validate(self) -> None:
        """Raise NotInformativeError unless the rank condition holds."""
        if not self.is_informative():
            raise NotInformativeError("data not informative (IRL)")

    def window(self, i: int) -> tuple[Matrix, Matrix, Matrix]:
        """(r_dx, r_xx, r_xu) of window i as matrices."""
        n, m = self.n, self.m
        return (unvec(self.GammaDx[i], n, n), unvec(self.GammaXX[i], n, n),
                unvec(self.GammaXU[i], n, m))


def collect_irl_data(traj: Trajectory, schedule: SampleSchedule,
                     validate: bool = True) -> IRLData:
    """
    Build the Gamma matrices.

    r_xx is integrated with composite Simpson on the fine grid. r_xu is
    exact: u is constant on every fine step and int x is a state.
    """
    n, m = traj.x.shape[1], traj.u.shape[1]
    idx = _window_indices(traj, schedule)
    Gdx = np.empty((len(idx), n * n))
    Gxx = np.empty((len(idx), n * n))
    Gux = np.empty((len(idx), m * n))
    Gxu = np.empty((len(idx), n * m))
    for i, (k0, k1) in enumerate(idx):
        x = traj.x[k0:k1 + 1]
        r_dx = np.outer(x[-1], x[-1]) - np.outer(x[0], x[0])
        r_xx = sym(integrate.simpson(x[:, :, None] * x[:, None, :],
                                     dx=traj.step, axis=0))
        r_xu = np.diff(traj.xi[k0:k1 + 1], axis=0).T @ traj.u[k0:k1]
        Gdx[i], Gxx[i] = vec(r_dx), vec(r_xx)
        Gux[i], Gxu[i] = vec(r_xu.T), vec(r_xu)

    assert np.allclose(Gxu, Gux @ commutation_matrix(m, n).T), \
        "Gamma^xu must be the commuted Gamma^ux"
    data = IRLData(Gdx, Gxx, Gux, Gxu, n, m)
    if validate:
        data.validate()
    return data


def kronecker_sum_operators(A: Matrix, B: Matrix) -> tuple[Matrix, Matrix]:
    """
    Operators of the extended system for vectorized quadratic integrals.

    With these, vec(r_dx) = calA vec(r_xx) + calB vec(r_xu) for every
    window, where calA = I kron A + A kron I and
    calB = (I kron B) C + B kron I with C vec(r_xu) = vec(r_xu^T).
    """
    n, m = B.shape
    I = np.eye(n)
    calA = np.kron(I, A) + np.kron(A, I)
    calB = np.kron(I, B) @ commutation_matrix(n, m) + np.kron(B, I)
    return calA, calB


def structured_identify(data: IRLData) -> tuple[Matrix, Matrix]:
    """Identify (A, B) by regressing vec(r_dx) on the Kronecker sums."""
    n, m = data.n, data.m
    I = np.eye(n)
    Cnn, Cnm = commutation_matrix(n, n), commutation_matrix(n, m)
    rows, rhs = [], []
    for i in range(data.T):
        r_dx, r_xx, r_xu = data.window(i)
        rows.append(np.hstack([
            np.kron(r_xx, I) + np.kron(I, r_xx) @ Cnn,
            np.kron(r_xu, I) + np.kron(I, r_xu) @ Cnm,
        ]))
        rhs.append(vec(r_dx))
    Phi = np.vstack(rows)
    if rank(Phi) < n * n + n * m:
        raise NotInformativeError("data not informative (IRL)")
    theta, *_ = np.linalg.lstsq(Phi, np.concatenate(rhs), rcond=None)
    return unvec(theta[:n * n], n, n), unvec(theta[n * n:], n, m)

# !SECTION


# SECTION Experiments

@dataclass(frozen=True, eq=False)
class Experiment:
    """One excitation run and the data of both parameterizations."""

    trajectory: Trajectory
    cl: CLData
    irl: IRLData
    excitation: ExcitationConfig = field(repr=False)


def run_experiment(sys: LinearSystem, excitation: ExcitationConfig,
                   schedule: SampleSchedule, retries: int = 5) -> Experiment:
    """Simulate once and collect both data sets, retrying on rank failure."""
    last: Optional[NotInformativeError] = None
    for attempt in range(retries + 1):
        exc = replace(excitation, seed=excitation.seed + 1_000_003 * attempt)
        traj = simulate_zoh(sys, exc, schedule.horizon,
                            schedule.substeps_per_hold)
        try:
            return Experiment(traj, collect_cl_data(traj, schedule),
                              collect_irl_data(traj, schedule), exc)
        except NotInformativeError as err:
            logger.warning("attempt %d: %s, retrying with a fresh seed",
                           attempt, err)
            last = err
    assert last is not None
    raise last

# !SECTION


# SECTION CSV export and import

def save_matrix(path: Path, M: npt.ArrayLike, name: str = "") -> None:
    """Write a matrix as CSV, one matrix row per line."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    header = (f"{name} {M.shape[0]}x{M.shape[1]}; rows as lines, "
              "vec() stacks columns (column-major)")
    np.savetxt(path, M, delimiter=",", header=header, fmt="%.17g")


def load_matrix(path: Path) -> Matrix:
    """Read a matrix written by save_matrix."""
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def save_trajectory(path: Path, traj: Trajectory) -> None:
    """Write t, x1..xn, u1..um per grid point (u repeats at the end)."""
    n, m = traj.x.shape[1], traj.u.shape[1]
    u = np.vstack([traj.u, traj.u[-1:]])
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(n)]
                      + [f"u{j + 1}" for j in range(m)])
    np.savetxt(path, np.column_stack([traj.t, traj.x, u]), delimiter=",",
               header=header, comments="", fmt="%.17g")


CL_FILES = {"Xbar": "Xbar.csv", "Utilde": "Utilde.csv",
            "Xtilde": "Xtilde.csv"}
IRL_FILES = {"GammaDx": "GammaDx.csv", "GammaXX": "GammaXX.csv",
             "GammaUX": "GammaUX.csv", "GammaXU": "GammaXU.csv"}


def save_data(out: Path, cl: CLData, irl: IRLData) -> None:
    """Write every data matrix to its own CSV file in out."""
    out.mkdir(parents=True, exist_ok=True)
    for name, fname in CL_FILES.items():
        save_matrix(out / fname, getattr(cl, name), name)
    for name, fname in IRL_FILES.items():
        save_matrix(out / fname, getattr(irl, name), name)


def load_cl_data(src: Path) -> CLData:
    """Read CL data saved by save_data."""
    return CLData(**{name: load_matrix(src / fname)
                     for name, fname in CL_FILES.items()})


def load_irl_data(src: Path, n: int, m: int) -> IRLData:
    """Read IRL data saved by save_data."""
    return IRLData(**{name: load_matrix(src / fname)
                      for name, fname in IRL_FILES.items()}, n=n, m=m)


def load_data(src: Path) -> tuple[CLData, IRLData]:
    """Read both data sets, taking n and m from the CL matrices."""
    cl = load_cl_data(src)
    return cl, load_irl_data(src, cl.n, cl.m)

# !SECTION
