"""Helper functions for testing."""

from collections.abc import Callable, Iterable
from functools import lru_cache

import numpy as np
import numpy.typing as npt

from bench import (SystemCase, prepare_case)
from config import (ExperimentConfig)
from linalg import (Matrix, spectral)
from oracle import (care_solve)
from sim import (ExcitationConfig, LinearSystem, SampleSchedule,
                 run_experiment)

# Underscored to prevent pytest from instantiating it.
_Test = Callable[..., None]


def collect_tests(tests: Iterable[tuple[str, _Test]]) -> type:
    """Wrap a list of tests into a class that contains them."""
    return type(
        '__generated_class__',
        (object,),
        {
            ('test_' + name): method
            for name, method in tests
        }
    )


# SECTION Random matrices

def random_symmetric(rng: np.random.Generator, n: int) -> Matrix:
    """A symmetric matrix with standard normal entries."""
    M = rng.standard_normal((n, n))
    return (M + M.T) / 2


def random_psd(rng: np.random.Generator, n: int,
               floor: float = 0.1) -> Matrix:
    """A positive definite matrix with smallest eigenvalue >= floor."""
    M = rng.standard_normal((n, n))
    return M @ M.T + floor * np.eye(n)


def random_hurwitz(rng: np.random.Generator, n: int,
                   margin: float = 0.1) -> Matrix:
    """A Gaussian matrix shifted so its spectral abscissa is -margin."""
    M = rng.standard_normal((n, n))
    return M - (spectral(M).abscissa + margin) * np.eye(n)

# !SECTION


# SECTION Analytic plants

SCALAR_PSTAR = 1 + np.sqrt(2)
DOUBLE_INTEGRATOR_PSTAR = np.array([[np.sqrt(3), 1.0], [1.0, np.sqrt(3)]])
DOUBLE_INTEGRATOR_KSTAR = np.array([[1.0, np.sqrt(3)]])


def scalar_system(a: float = 1.0, b: float = 1.0, q: float = 1.0,
                  r: float = 1.0) -> LinearSystem:
    """dx/dt = a x + b u with weights q and r."""
    return LinearSystem([[a]], [[b]], [[q]], [[r]])


def double_integrator() -> LinearSystem:
    """Position and velocity driven by a force, Q = I, R = 1."""
    return LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]],
                        np.eye(2), [[1.0]])


def make_case(sys: LinearSystem, K0: npt.ArrayLike, seed: int = 0,
              T: int = 20, delta: float = 0.1,
              hold: float = 0.01) -> SystemCase:
    """Collect noise-free data from `sys` and pair it with its CARE."""
    experiment = run_experiment(
        sys, ExcitationConfig(hold_interval=hold, seed=seed),
        SampleSchedule.consecutive(T, delta))
    return SystemCase(-1, sys, care_solve(sys),
                      np.atleast_2d(np.asarray(K0, dtype=float)),
                      experiment)


@lru_cache(maxsize=None)
def scalar_case() -> SystemCase:
    """a = b = q = r = 1 from K0 = 2."""
    return make_case(scalar_system(), [[2.0]], seed=11)


@lru_cache(maxsize=None)
def double_integrator_case() -> SystemCase:
    """The double integrator from K0 = [1, 2]."""
    return make_case(double_integrator(), [[1.0, 2.0]], seed=12)


@lru_cache(maxsize=None)
def benchmark_case(index: int) -> SystemCase:
    """System `index` of the default benchmark configuration."""
    return prepare_case(ExperimentConfig(), index)

# !SECTION


# SECTION Numerical checks

def finite_difference(f: Callable[[Matrix], float], X: Matrix,
                      D: Matrix, h: float = 1e-6) -> float:
    """Central difference of f at X in direction D."""
    return (f(X + h * D) - f(X - h * D)) / (2 * h)


def relative_error(actual: npt.ArrayLike, expected: npt.ArrayLike) -> float:
    """|actual - expected|_F / max(1, |expected|_F)."""
    expected = np.asarray(expected, dtype=float)
    diff = np.asarray(actual, dtype=float) - expected
    return float(np.linalg.norm(diff)) / max(1.0,
                                             float(np.linalg.norm(expected)))


def check_close(actual: npt.ArrayLike, expected: npt.ArrayLike,
                tol: float, what: str = "value") -> None:
    """Assert a relative error of at most tol."""
    err = relative_error(actual, expected)
    assert err <= tol, f"{what}: relative error {err:.3e} > {tol:.1e}"

# !SECTION
