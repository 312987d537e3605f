"""Iteration schemes shared by the model-based and data-driven solvers.

Policy iteration, value iteration and fixed-step flows only differ
between parameterizations in how a policy is evaluated, improved or
differentiated, so the loops live here and take those pieces as
callables.
"""

from __future__ import annotations

import logging
import time
from dataclasses import (dataclass, field)
from typing import (Callable, Optional, TypeVar)

import numpy as np

from errors import (DivergenceError, UnstableError)
from linalg import (Matrix, min_eig, sym)

logger = logging.getLogger(__name__)

State = TypeVar('State')

BLOWUP_NORM = 1e9


# SECTION Stopping rules and step schedules

@dataclass(frozen=True)
class StopRule:
    """Stop when successive gains differ by at most tol, or at max_iter."""

    tol: float = 1e-10
    max_iter: int = 50


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes eps_k = c / (k + 1)^p."""

    c: float = 40.0
    p: float = 0.8

    def __post_init__(self) -> None:
        """Keep sum eps_k infinite and sum eps_k^2 finite."""
        if self.c <= 0 or not 0.5 < self.p <= 1.0:
            raise ValueError("need c > 0 and 1/2 < p <= 1")

    def __call__(self, k: int) -> float:
        """Step size of iteration k."""
        return self.c / (k + 1) ** self.p


@dataclass(frozen=True)
class BoundingSets:
    """Nested sets B_q = {P >= 0 : |P|_F <= slope (q + 1)}."""

    slope: float = 5.0

    def radius(self, q: int) -> float:
        """Frobenius radius of B_q."""
        return self.slope * (q + 1)

    def contains(self, P: Matrix, q: int) -> bool:
        """Test P in B_q."""
        norm = float(np.linalg.norm(P))
        return norm <= self.radius(q) and \
            min_eig(P) >= -1e-12 * max(1.0, norm)

# !SECTION


# SECTION Histories

@dataclass(eq=False)
class Iterate:
    """One recorded iterate: iteration index or time, value, gain."""

    at: float
    P: Optional[Matrix]
    K: Optional[Matrix]
    wall_ns: int = 0
    G: Optional[Matrix] = None


@dataclass(eq=False)
class History:
    """Iterates of a run and how it ended."""

    iterates: list[Iterate] = field(default_factory=list)
    status: str = "running"
    resets: list[int] = field(default_factory=list)

    def append(self, it: Iterate) -> None:
        """Record an iterate."""
        self.iterates.append(it)

    @property
    def final(self) -> Iterate:
        """The last recorded iterate."""
        return self.iterates[-1]

    @property
    def converged(self) -> bool:
        """Whether the stop rule was met."""
        return self.status == "converged"

    def points(self) -> list[float]:
        """Iteration indices or times."""
        return [it.at for it in self.iterates]

    def gains(self) -> list[Matrix]:
        """Recorded gains."""
        return [it.K for it in self.iterates if it.K is not None]

    def values(self) -> list[Matrix]:
        """Recorded value matrices."""
        return [it.P for it in self.iterates if it.P is not None]

    def __len__(self) -> int:
        """Number of recorded iterates."""
        return len(self.iterates)

# !SECTION


# SECTION Policy iteration

def policy_iteration(start: State,
                     evaluate: Callable[[State], tuple[Matrix, Matrix]],
                     improve: Callable[[Matrix], State],
                     stop: StopRule = StopRule(),
                     record_state: Optional[Callable[[State], Matrix]] = None,
                     ) -> History:
    """
    Alternate policy evaluation and improvement.

    `evaluate` maps a policy to its value matrix and gain and raises
    UnstableError for a policy that is not stabilizing; `improve` maps a
    value matrix to the next policy. `record_state` picks the matrix
    stored as Iterate.G.
    """
    history = History()
    P, K = evaluate(start)
    history.append(Iterate(0, P, K, 0,
                           record_state(start) if record_state else None))

    for k in range(1, stop.max_iter + 1):
        t0 = time.perf_counter_ns()
        state = improve(P)
        try:
            P_new, K_new = evaluate(state)
        except UnstableError as err:
            history.status = "unstable"
            raise UnstableError(f"iterate {k} is not stabilizing",
                                history) from err
        wall = time.perf_counter_ns() - t0
        history.append(Iterate(k, P_new, K_new, wall,
                               record_state(state) if record_state else None))

        increase = float(np.linalg.eigvalsh(sym(P_new - P))[-1])
        if increase > 1e-8 * max(1.0, float(np.linalg.norm(P))):
            logger.warning("value increased by %.3e at iteration %d",
                           increase, k)
        step = float(np.linalg.norm(K_new - K))
        logger.debug("policy iteration %d: gain step %.3e", k, step)
        P, K = P_new, K_new
        if step <= stop.tol:
            history.status = "converged"
            break
    else:
        history.status = "max_iter"

    logger.info("policy iteration: %s after %d iterations",
                history.status, len(history) - 1)
    return history

# !SECTION


# SECTION Value iteration

def value_iteration(residual: Callable[[Matrix], Matrix], P0: Matrix,
                    schedule: StepSchedule = StepSchedule(),
                    bounds: BoundingSets = BoundingSets(),
                    max_iter: int = 5000, tol: float = 1e-12,
                    gain: Optional[Callable[[Matrix], Matrix]] = None,
                    record_every: int = 1) -> History:
    """
    Stochastic-approximation value iteration with resets.

    Each step moves P along the Riccati residual with step eps_k. A
    candidate outside B_q is replaced by P0 and q is incremented.
    """
    P0 = sym(P0)
    P = P0.copy()
    q = 0
    history = History()
    history.append(Iterate(0, P, gain(P) if gain else None))
    t0 = time.perf_counter_ns()

    for k in range(max_iter):
        candidate = sym(P + schedule(k) * residual(P))
        reset = not bounds.contains(candidate, q)
        if reset:
            logger.debug("value iteration %d: reset, radius now %g",
                         k, bounds.radius(q + 1))
            candidate = P0.copy()
            q += 1
            history.resets.append(k + 1)
        step = float(np.linalg.norm(candidate - P))
        P = candidate
        if not np.all(np.isfinite(P)):
            history.status = "diverged"
            raise DivergenceError("value iteration diverged", history)

        done = not reset and step <= tol * max(1.0, float(np.linalg.norm(P)))
        if (k + 1) % record_every == 0 or done or k + 1 == max_iter:
            now = time.perf_counter_ns()
            history.append(Iterate(k + 1, P, gain(P) if gain else None,
                                   now - t0))
            t0 = now
        if done:
            history.status = "converged"
            break
    else:
        history.status = "not converged"

    logger.info("value iteration: %s after %d iterations, %d resets",
                history.status, history.final.at, len(history.resets))
    return history

# !SECTION


# SECTION Fixed-step flows

def rk4_step(rhs: Callable[[Matrix], Matrix], y: Matrix, h: float) -> Matrix:
    """One classical Runge-Kutta step of dy/dt = rhs(y)."""
    k1 = rhs(y)
    k2 = rhs(y + h / 2 * k1)
    k3 = rhs(y + h / 2 * k2)
    k4 = rhs(y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class FlowSettings:
    """Horizon, step and checkpoint stride of a fixed-step flow."""

    horizon: float = 10.0
    step: float = 1e-3
    record_every: int = 10

    def __post_init__(self) -> None:
        """Validate the settings."""
        if self.horizon < 0 or self.step <= 0 or self.record_every < 1:
            raise ValueError("invalid flow settings")

    @property
    def steps(self) -> int:
        """Number of integration steps."""
        return int(round(self.horizon / self.step))


def integrate_flow(rhs: Callable[[Matrix], Matrix], y0: Matrix,
                   settings: FlowSettings,
                   snapshot: Callable[[float, Matrix, int], Iterate],
                   after_step: Optional[Callable[[Matrix], Matrix]] = None,
                   ) -> History:
    """
    Integrate dy/dt = rhs(y) with fixed-step RK4.

    `after_step` may correct each new state (symmetrize, re-project) and
    may raise to abort. Checkpoints every `record_every` steps are turned
    into iterates by `snapshot(t, y, wall_ns)`.
    """
    history = History()
    y = y0.copy()
    history.append(snapshot(0.0, y, 0))
    t0 = time.perf_counter_ns()
    n = settings.steps
    for k in range(1, n + 1):
        y = rk4_step(rhs, y, settings.step)
        if after_step is not None:
            y = after_step(y)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > BLOWUP_NORM:
            history.status = "diverged"
            raise DivergenceError(
                f"flow diverged at t = {k * settings.step:g}", history)
        if k % settings.record_every == 0 or k == n:
            now = time.perf_counter_ns()
            history.append(snapshot(k * settings.step, y, now - t0))
            t0 = now
    history.status = "horizon"
    logger.info("flow integrated to t = %g in %d steps", settings.horizon, n)
    return history

# !SECTION
