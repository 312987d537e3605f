"""Command line: generate data, solve from data, benchmark, compare."""

import argparse
import logging
import sys
from pathlib import (Path)
from typing import (Optional, Sequence, TextIO)

import numpy as np

from bench import (
    DataProblem, SystemSeeds, prepare_case, run_suite, solve_method
)
from config import (METHODS, ExperimentConfig, load_config)
from errors import (ConfigError, DDLQRError, ShapeError, SolverError)
from iteration import (History)
from linalg import (Matrix, check_symmetric, min_eig)
from report import (compare, emit)
from sim import (load_data, load_matrix, save_data, save_matrix,
                 save_trajectory)

logger = logging.getLogger("ddlqr")

REFERENCE = "reference"


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        """Print usage and exit 1."""
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _config(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(args.config, args.set or ())


def _write(out: TextIO, name: str, M: Matrix) -> None:
    np.savetxt(out, np.atleast_2d(M), delimiter=",", fmt="%.17g",
               header=name)


def cmd_gen(args: argparse.Namespace) -> int:
    """Simulate one benchmark system and write its data."""
    config = _config(args)
    out = Path(args.out or Path(config.out_dir) / "data")
    case = prepare_case(config, args.index)
    exp = case.experiment
    save_data(out, exp.cl, exp.irl)
    save_matrix(out / "Q.csv", case.sys.Q, "Q")
    save_matrix(out / "R.csv", case.sys.R, "R")
    save_matrix(out / "K0.csv", case.K0, "K0")
    save_trajectory(out / "trajectory.csv", exp.trajectory)

    # the model and its solution, for checking only; solve never reads it
    ref = out / REFERENCE
    ref.mkdir(parents=True, exist_ok=True)
    for name, M in (("A", case.sys.A), ("B", case.sys.B),
                    ("Pstar", case.care.Pstar), ("Kstar", case.care.Kstar)):
        save_matrix(ref / f"{name}.csv", M, name)
    (out / "config.txt").write_text(config.dumps())
    seeds = SystemSeeds.of(config.seed, args.index)
    logger.info("system %d (excitation seed %d) written to %s",
                args.index, seeds.excitation, out)
    return 0


def _check_weights(Q: Matrix, R: Matrix, K0: Matrix, n: int,
                   m: int) -> None:
    for name, M, k in (("Q", Q, n), ("R", R, m)):
        if M.shape != (k, k):
            raise ShapeError(f"{name} must be {k} x {k}, got {M.shape}")
        check_symmetric(M, name)
    if min_eig(Q) < 0 or min_eig(R) <= 0:
        raise ValueError("need Q >= 0 and R > 0")
    if K0.shape != (m, n):
        raise ShapeError(f"K0 must be {m} x {n}, got {K0.shape}")


def _load_problem(src: Path) -> DataProblem:
    if not src.is_dir():
        raise ConfigError(f"no data directory {src}")
    try:
        cl, irl = load_data(src)
        Q, R, K0 = (load_matrix(src / f"{name}.csv")
                    for name in ("Q", "R", "K0"))
        _check_weights(Q, R, K0, cl.n, cl.m)
    except OSError as err:
        raise ConfigError(f"cannot read data in {src}: {err}") from err
    except ValueError as err:
        raise ConfigError(f"bad data in {src}: {err}") from err
    return DataProblem(cl, irl, Q, R, K0)


def cmd_solve(args: argparse.Namespace) -> int:
    """Run one method on a data directory and print K (and P)."""
    config = _config(args)
    problem = _load_problem(Path(args.data))
    outcome = solve_method(problem, args.method, config)
    if isinstance(outcome, History):
        final = outcome.final
        K, P = final.K, final.P
        logger.info("%s: %s at %g", args.method, outcome.status, final.at)
    else:
        result, wall_ns = outcome
        K, P = result.K, result.P
        logger.info("%s: objective %.9g in %.3f ms", args.method,
                    result.objective, wall_ns / 1e6)
    assert K is not None, "every method reports a gain"
    _write(sys.stdout, "K", K)
    if P is not None:
        _write(sys.stdout, "P", P)

    kstar = Path(args.data) / REFERENCE / "Kstar.csv"
    if kstar.exists():
        logger.info("|K - K*|_F = %.3e",
                    np.linalg.norm(K - load_matrix(kstar)))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    """Run the benchmark suite and write its results."""
    config = _config(args)
    out = Path(args.out or config.out_dir)
    suite = run_suite(config)
    emit(suite, out)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    """Summarize a finished benchmark run."""
    sys.stdout.write(compare(Path(args.out)))
    return 0


def build_parser() -> ArgumentParser:
    """The ddlqr argument parser."""
    parser = ArgumentParser(
        prog="ddlqr",
        description="Data-driven continuous-time LQR from trajectory data")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true",
                           help="log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true",
                           help="log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser, required: bool) -> None:
        p.add_argument("--config", type=Path, required=required,
                       help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one configuration key")

    gen = sub.add_parser("gen", help="simulate one system and write data")
    with_config(gen, required=True)
    gen.add_argument("--out", type=Path, help="output directory")
    gen.add_argument("--index", type=int, default=0,
                     help="benchmark system index")
    gen.set_defaults(func=cmd_gen)

    solve = sub.add_parser("solve", help="run one method on saved data")
    solve.add_argument("--method", required=True, choices=METHODS)
    solve.add_argument("--data", type=Path, required=True,
                       help="directory written by gen")
    with_config(solve, required=False)
    solve.set_defaults(func=cmd_solve)

    bench = sub.add_parser("bench", help="run the benchmark suite")
    with_config(bench, required=True)
    bench.add_argument("--out", type=Path, required=True,
                       help="results directory")
    bench.set_defaults(func=cmd_bench)

    cmp = sub.add_parser("compare", help="summarize benchmark results")
    cmp.add_argument("--out", type=Path, required=True,
                     help="results directory of a bench run")
    cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, configure logging and dispatch."""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else \
        logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except DDLQRError as err:
        logger.error("%s", err)
        return err.exit_code
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        logger.error("numerical failure: %s", err)
        return SolverError.exit_code


if __name__ == '__main__':
    sys.exit(main())
