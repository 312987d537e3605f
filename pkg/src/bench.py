"""The benchmark suite: random plants, every method, residuals and timings.

Each system gets its own seed stream derived from (seed, index). One
excitation run feeds both parameterizations; the model is only used to
draw the initial gain, to compute the reference solution and, for the
IRL methods, to certify stability of a gain.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import (ProcessPoolExecutor)
from dataclasses import (dataclass, field)
from itertools import (repeat)
from typing import (Callable, Optional, Union)

import numpy as np

from clparam import (ClosedLoop)
from config import (METHODS, ExperimentConfig)
from errors import (DDLQRError, SolverError)
from irlparam import (Certificate, IntegralRL)
from iteration import (History, rk4_step)
from linalg import (Matrix, is_hurwitz, sym)
from oracle import (CareSolution, care_solve, stabilizing_gain_search)
from programs import (PROGRAMS, ProgramResult)
from sim import (CLData, Experiment, IRLData, LinearSystem, run_experiment)

logger = logging.getLogger(__name__)

MAX_REDRAWS = 100

# Failures recorded in a run's status instead of aborting the suite.
RUN_ERRORS = (DDLQRError, ValueError, ArithmeticError,
              np.linalg.LinAlgError)

# How ||K - K*|| is normalized per method family.
BY_INITIAL = "initial"
BY_OPTIMAL = "optimal"
ABSOLUTE = "absolute"

NORMALIZATION = {
    "pi": BY_INITIAL, "flow": BY_INITIAL,
    "vi": BY_OPTIMAL, "ricflow": BY_OPTIMAL,
    "sdp": ABSOLUTE,
}

# The residual a family is judged by: gain for PI, flows and programs,
# value matrix for VI and the Riccati flow.
TRACKED = {
    "pi": "K", "flow": "K", "sdp": "K",
    "vi": "P", "ricflow": "P",
}

# What one timing sample measures, per method family.
UNITS = {
    "pi": "iteration", "vi": "iteration",
    "flow": "rk4 step", "ricflow": "rk4 step",
    "sdp": "solve",
}


def family(method: str) -> str:
    """'pi-cl' -> 'pi', 'sdp-irl2' -> 'sdp'."""
    return method.split("-", 1)[0]


def parameterization(method: str) -> str:
    """'pi-cl' -> 'cl', 'sdp-irl2' -> 'irl'."""
    tail = method.split("-", 1)[1]
    return "irl" if tail.startswith("irl") else "cl"


# SECTION Systems

@dataclass(frozen=True)
class SystemSeeds:
    """Independent seeds for the plant, the excitation and K0."""

    plant: int
    excitation: int
    gain: int

    @classmethod
    def of(cls, seed: int, index: int) -> SystemSeeds:
        """Spawn the three streams of system `index`."""
        children = np.random.SeedSequence([seed, index]).spawn(3)
        plant, excitation, gain = (int(c.generate_state(1)[0])
                                   for c in children)
        return cls(plant, excitation, gain)


def random_system(config: ExperimentConfig, index: int) -> LinearSystem:
    """
    Sparse Gaussian (A, B): each entry is zero with probability
    `sparsity`, else standard normal. Plants failing the PBH tests are
    redrawn.
    """
    rng = np.random.default_rng(SystemSeeds.of(config.seed, index).plant)
    n, m = config.n, config.m

    def draw(shape: tuple[int, int]) -> Matrix:
        return rng.standard_normal(shape) * \
            (rng.random(shape) >= config.sparsity)

    for attempt in range(MAX_REDRAWS + 1):
        sys = LinearSystem(draw((n, n)), draw((n, m)), config.Q, config.R)
        if sys.satisfies_assumptions():
            return sys
        logger.debug("system %d: draw %d not stabilizable", index, attempt)
    raise SolverError(f"system {index}: no stabilizable plant after "
                      f"{MAX_REDRAWS} redraws")


@dataclass(frozen=True, eq=False)
class DataProblem:
    """What a data-driven method may see: data, weights and K0."""

    cl: CLData
    irl: IRLData
    Q: Matrix
    R: Matrix
    K0: Matrix
    certify: Optional[Certificate] = None

    @property
    def n(self) -> int:
        """State dimension."""
        return self.cl.n

    def closed_loop(self) -> ClosedLoop:
        """CL solvers on this data."""
        return ClosedLoop(self.cl, self.Q, self.R)

    def integral_rl(self) -> IntegralRL:
        """IRL solvers on this data."""
        return IntegralRL(self.irl, self.Q, self.R, certify=self.certify)


@dataclass(frozen=True, eq=False)
class SystemCase:
    """A plant, its reference solution, K0 and the collected data."""

    index: int
    sys: LinearSystem
    care: CareSolution
    K0: Matrix
    experiment: Experiment

    def problem(self) -> DataProblem:
        """The data-only view, with a model-based IRL certificate."""
        A, B = self.sys.A, self.sys.B
        return DataProblem(self.experiment.cl, self.experiment.irl,
                           self.sys.Q, self.sys.R, self.K0,
                           certify=lambda K: is_hurwitz(A - B @ K))


def prepare_case(config: ExperimentConfig, index: int) -> SystemCase:
    """Draw system `index`, solve its CARE, draw K0 and collect data."""
    seeds = SystemSeeds.of(config.seed, index)
    sys = random_system(config, index)
    care = care_solve(sys)
    K0 = stabilizing_gain_search(sys, seeds.gain, care=care)
    experiment = run_experiment(sys, config.excitation(seeds.excitation),
                                config.schedule())
    return SystemCase(index, sys, care, K0, experiment)

# !SECTION


# SECTION Records

@dataclass(eq=False)
class RunRecord:
    """Residual series and outcome of one method on one system."""

    system_id: int
    method: str
    points: list[float] = field(default_factory=list)
    residual_K: list[float] = field(default_factory=list)
    residual_P: list[float] = field(default_factory=list)
    wall_ns: list[int] = field(default_factory=list)
    status: str = "ok"
    value: float = math.nan

    @property
    def failed(self) -> bool:
        """Whether the run raised."""
        return self.status.startswith("error")

    @property
    def series(self) -> list[float]:
        """The tracked residual series of this method's family."""
        if TRACKED.get(family(self.method)) == "P":
            return self.residual_P
        return self.residual_K

    @property
    def final_residual(self) -> float:
        """Last tracked residual, NaN for a run without iterates."""
        return self.series[-1] if self.series else math.nan

    @property
    def total_ns(self) -> int:
        """Wall time summed over the series."""
        return sum(self.wall_ns)

    def __len__(self) -> int:
        """Number of points."""
        return len(self.points)


@dataclass(frozen=True)
class TimingRecord:
    """Wall-clock samples of one measured unit of one method."""

    system_id: int
    method: str
    unit: str
    samples_ns: tuple[int, ...]


def _relative(M: Optional[Matrix], ref: Matrix, scale: float) -> float:
    if M is None:
        return math.nan
    return float(np.linalg.norm(M - ref)) / scale


def _denominator(method: str, case: SystemCase) -> float:
    kind = NORMALIZATION[family(method)]
    if kind == BY_INITIAL:
        d = float(np.linalg.norm(case.K0 - case.care.Kstar))
    elif kind == BY_OPTIMAL:
        d = float(np.linalg.norm(case.care.Kstar))
    else:
        d = 1.0
    return d if d > 0 else 1.0


def record_history(case: SystemCase, method: str,
                   history: History) -> RunRecord:
    """Turn iterates into normalized residual series."""
    kd = _denominator(method, case)
    Pstar = case.care.Pstar
    pd = float(np.linalg.norm(Pstar))
    rec = RunRecord(case.index, method, status=history.status)
    for it in history.iterates:
        rec.points.append(float(it.at))
        rec.residual_K.append(_relative(it.K, case.care.Kstar, kd))
        rec.residual_P.append(_relative(it.P, Pstar, pd))
        rec.wall_ns.append(int(it.wall_ns))
    return rec


def record_program(case: SystemCase, method: str, result: ProgramResult,
                   wall_ns: int) -> RunRecord:
    """A one-point record of an SDP solve."""
    Pstar = case.care.Pstar
    return RunRecord(
        case.index, method, [0.0],
        [_relative(result.K, case.care.Kstar, 1.0)],
        [_relative(result.P, Pstar, float(np.linalg.norm(Pstar)))],
        [wall_ns], result.solution.status, program_value(result),
    )


def program_value(result: ProgramResult) -> float:
    """tr(P) of a program with a value matrix, else its objective."""
    if result.P is None:
        return result.objective
    return float(np.trace(result.P))

# !SECTION


# SECTION Methods

Outcome = Union[History, tuple[ProgramResult, int]]
Runner = Callable[[DataProblem, ExperimentConfig], Outcome]


def _zeros(problem: DataProblem) -> Matrix:
    return np.zeros((problem.n, problem.n))


def _pi_cl(problem: DataProblem, config: ExperimentConfig) -> Outcome:
    cl = problem.closed_loop()
    return cl.policy_iteration(cl.particular_solution(problem.K0),
                               config.stop_rule())


def _pi_irl(problem: DataProblem, config: ExperimentConfig) -> Outcome:
    return problem.integral_rl().policy_iteration(problem.K0,
                                                  config.stop_rule())


def _vi(solver: Union[ClosedLoop, IntegralRL], problem: DataProblem,
        config: ExperimentConfig) -> History:
    return solver.value_iteration(
        _zeros(problem), config.step_schedule(), config.bounds(),
        config.vi_iterations, config.vi_tol, config.record_every)


def _vi_cl(problem: DataProblem, config: ExperimentConfig) -> Outcome:
    return _vi(problem.closed_loop(), problem, config)


def _vi_irl(problem: DataProblem, config: ExperimentConfig) -> Outcome:
    return _vi(problem.integral_rl(), problem, config)


def _flow_cl(problem: DataProblem, config: ExperimentConfig) -> Outcome:
    cl = problem.closed_loop()
    return cl.projected_gradient_flow(cl.particular_solution(problem.K0),
                                      config.alpha, config.gradient_flow())


def _flow_irl(problem: DataProblem, config: ExperimentConfig) -> Outcome:
    return problem.integral_rl().gradient_flow(problem.K0, config.beta,
                                               config.gradient_flow())


def _ricflow_cl(problem: DataProblem, config: ExperimentConfig) -> Outcome:
    return problem.closed_loop().riccati_flow(_zeros(problem),
                                              config.riccati_flow())


def _ricflow_irl(problem: DataProblem, config: ExperimentConfig) -> Outcome:
    return problem.integral_rl().riccati_flow(_zeros(problem),
                                              config.riccati_flow())


def _program(name: str) -> Callable[[DataProblem], ProgramResult]:
    kind, solve = PROGRAMS[name]

    def run(problem: DataProblem) -> ProgramResult:
        data = problem.cl if kind == "cl" else problem.irl
        return solve(data, problem.Q, problem.R)

    return run


def _sdp(name: str) -> Runner:
    program = _program(name)

    def run(problem: DataProblem, config: ExperimentConfig) -> Outcome:
        t0 = time.perf_counter_ns()
        result = program(problem)
        return result, time.perf_counter_ns() - t0

    return run


RUNNERS: dict[str, Runner] = {
    "pi-cl": _pi_cl,
    "pi-irl": _pi_irl,
    "vi-cl": _vi_cl,
    "vi-irl": _vi_irl,
    "flow-cl": _flow_cl,
    "flow-irl": _flow_irl,
    "ricflow-cl": _ricflow_cl,
    "ricflow-irl": _ricflow_irl,
    **{f"sdp-{name}": _sdp(name) for name in PROGRAMS},
}
assert set(RUNNERS) == set(METHODS), "every method id needs a runner"


def describe(err: Exception) -> str:
    """Status text of a failure; foreign exceptions keep their type."""
    if isinstance(err, DDLQRError):
        return str(err)
    return f"{type(err).__name__}: {err}"


def solve_method(problem: DataProblem, method: str,
                 config: ExperimentConfig) -> Outcome:
    """Run one method on data alone; errors propagate."""
    if method not in RUNNERS:
        raise KeyError(f"unknown method {method!r}")
    return RUNNERS[method](problem, config)


def run_method(case: SystemCase, method: str,
               config: ExperimentConfig) -> RunRecord:
    """Run one method; failures end up in the record's status."""
    try:
        outcome = solve_method(case.problem(), method, config)
    except RUN_ERRORS as err:
        logger.warning("system %d, %s: %s", case.index, method, err)
        history = getattr(err, "history", None)
        if not isinstance(history, History):
            history = None
        rec = record_history(case, method, history) \
            if history is not None else RunRecord(case.index, method)
        rec.status = f"error: {describe(err)}"
        return rec

    if isinstance(outcome, History):
        rec = record_history(case, method, outcome)
    else:
        rec = record_program(case, method, *outcome)
    logger.debug("system %d, %s: %s, final residual %.3e", case.index,
                 method, rec.status, rec.final_residual)
    return rec

# !SECTION


# SECTION Timing

def measured_unit(problem: DataProblem, method: str,
                  config: ExperimentConfig) -> Callable[[], object]:
    """One iteration, RK4 step or solve of `method`."""
    fam = family(method)
    P0 = _zeros(problem)
    if fam == "sdp":
        program = _program(method.split("-", 1)[1])
        return lambda: program(problem)

    eps = config.step_schedule()(0)
    bounds = config.bounds()
    if parameterization(method) == "cl":
        cl = problem.closed_loop()
        G0 = cl.particular_solution(problem.K0)
        Pi = problem.cl.Pi
        cl_units: dict[str, Callable[[], object]] = {
            "pi": lambda: cl.improve(cl.evaluate(G0).P),
            "vi": lambda: bounds.contains(
                sym(P0 + eps * cl.care_residual_F(P0).residual), 0),
            "flow": lambda: rk4_step(
                lambda G: -config.alpha * (Pi @ cl.gradient(cl.policy(G))),
                G0.G, config.flow_step),
            "ricflow": lambda: rk4_step(
                lambda P: cl.care_residual_F(P).residual, P0,
                config.riccati_step),
        }
        return cl_units[fam]

    irl = problem.integral_rl()
    irl_units: dict[str, Callable[[], object]] = {
        "pi": lambda: irl.R_inv @ irl.evaluate(problem.K0).BtP,
        "vi": lambda: bounds.contains(
            sym(P0 + eps * irl.care_residual(P0)), 0),
        "flow": lambda: rk4_step(lambda K: -config.beta * irl.gradient(K),
                                 problem.K0, config.flow_step),
        "ricflow": lambda: rk4_step(irl.care_residual, P0,
                                    config.riccati_step),
    }
    return irl_units[fam]


def time_method(case: SystemCase, method: str,
                config: ExperimentConfig) -> Optional[TimingRecord]:
    """Run the unit of `method` timing_repeats times."""
    try:
        unit = measured_unit(case.problem(), method, config)
        samples = []
        for _ in range(config.timing_repeats):
            t0 = time.perf_counter_ns()
            unit()
            samples.append(time.perf_counter_ns() - t0)
    except RUN_ERRORS as err:
        logger.debug("system %d, %s: not timed (%s)", case.index, method,
                     err)
        return None
    return TimingRecord(case.index, method, UNITS[family(method)],
                        tuple(samples))

# !SECTION


# SECTION Suite

@dataclass(eq=False)
class SystemResult:
    """Everything one system contributes to the suite."""

    index: int
    records: list[RunRecord] = field(default_factory=list)
    timings: list[TimingRecord] = field(default_factory=list)


def run_system(config: ExperimentConfig, index: int) -> SystemResult:
    """Prepare system `index` and run every selected method on it."""
    result = SystemResult(index)
    try:
        case = prepare_case(config, index)
    except RUN_ERRORS as err:
        logger.warning("system %d skipped: %s", index, err)
        result.records = [RunRecord(index, method,
                                    status=f"error: {describe(err)}")
                          for method in config.methods]
        return result

    for method in config.methods:
        result.records.append(run_method(case, method, config))
        if config.record_timing:
            timing = time_method(case, method, config)
            if timing is not None:
                result.timings.append(timing)
    if not config.record_timing:
        for rec in result.records:
            rec.wall_ns = [0] * len(rec.wall_ns)
    logger.info("system %d done", index)
    return result


@dataclass(eq=False)
class SuiteResult:
    """Records and timings of a whole benchmark run, in system order."""

    config: ExperimentConfig
    records: list[RunRecord]
    timings: list[TimingRecord]

    def by_method(self, method: str) -> list[RunRecord]:
        """Records of one method, in system order."""
        return [r for r in self.records if r.method == method]


def run_suite(config: ExperimentConfig) -> SuiteResult:
    """Run every system, in a process pool when workers > 1."""
    indices = range(config.num_systems)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run_system, repeat(config), indices))
    else:
        results = [run_system(config, i) for i in indices]

    records = [r for res in results for r in res.records]
    timings = [t for res in results for t in res.timings]
    failed = sum(1 for r in records if r.failed)
    logger.info("suite finished: %d systems, %d runs, %d failed",
                config.num_systems, len(records), failed)
    return SuiteResult(config, records, timings)

# !SECTION


# SECTION Statistics

@dataclass(frozen=True)
class MethodSummary:
    """Statistics of the final gain residuals of one method."""

    method: str
    runs: int
    failed: int
    mean: float
    median: float
    q1: float
    q3: float
    minimum: float
    maximum: float


def summarize(records: list[RunRecord], method: str) -> MethodSummary:
    """Mean, median and quartiles over the successful runs of `method`."""
    mine = [r for r in records if r.method == method]
    finals = np.array([r.final_residual for r in mine
                       if not r.failed], dtype=float)
    finals = finals[np.isfinite(finals)]
    failed = len(mine) - len(finals)
    if len(finals) == 0:
        nan = math.nan
        return MethodSummary(method, len(mine), failed, nan, nan, nan, nan,
                             nan, nan)
    q1, med, q3 = np.percentile(finals, [25, 50, 75])
    return MethodSummary(method, len(mine), failed, float(finals.mean()),
                         float(med), float(q1), float(q3),
                         float(finals.min()), float(finals.max()))


def iteration_gap(records: list[RunRecord], a: str, b: str) -> float:
    """Largest per-iteration gap of the tracked residuals of a and b."""
    ra = {r.system_id: r for r in records if r.method == a}
    rb = {r.system_id: r for r in records if r.method == b}
    gap = math.nan
    for sid in sorted(ra.keys() & rb.keys()):
        x, y = ra[sid].series, rb[sid].series
        k = min(len(x), len(y))
        if k == 0:
            continue
        d = float(np.max(np.abs(np.subtract(x[:k], y[:k]))))
        gap = d if math.isnan(gap) else max(gap, d)
    return gap


def value_gap(records: list[RunRecord], a: str = "sdp-cl1",
              b: str = "sdp-cl2") -> list[tuple[int, float]]:
    """Per system |value_a - value_b| where both solves succeeded."""
    ra = {r.system_id: r.value for r in records if r.method == a}
    rb = {r.system_id: r.value for r in records if r.method == b}
    return [(sid, abs(ra[sid] - rb[sid]))
            for sid in sorted(ra.keys() & rb.keys())
            if math.isfinite(ra[sid]) and math.isfinite(rb[sid])]


@dataclass(frozen=True)
class TimingSummary:
    """Mean and median of all samples of one method's unit."""

    method: str
    unit: str
    samples: int
    mean_ns: float
    median_ns: float


def summarize_timing(timings: list[TimingRecord],
                     method: str) -> Optional[TimingSummary]:
    """Pool the samples of `method` over all systems."""
    mine = [t for t in timings if t.method == method]
    if not mine:
        return None
    samples = np.array([s for t in mine for s in t.samples_ns], dtype=float)
    return TimingSummary(method, mine[0].unit, len(samples),
                         float(samples.mean()), float(np.median(samples)))

# !SECTION
