import argparse
import asyncio
import logging
import sys
from pathlib import Path

from icabench.aggregator import SOLVER_REGISTRY, Aggregator, RunSpec, build_solver
from icabench.datagen.experiments import gen_experiment
from icabench.repository.matrix_repository import save_matrix
from icabench.repository.trace_repository import load_summary
from icabench.utils.config import get_settings
from icabench.utils.errors import (
    IcaBenchError,
    InvalidConfigError,
    InvalidDataError,
    MatrixFormatError,
    RankDeficiencyError,
)
from icabench.utils.logger import get_logger, set_level
from icabench.utils.plotting import plot_summary

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FORMAT_ERROR = 2
EXIT_ALL_DIVERGED = 3
EXIT_INVALID_FLAGS = 4


class IcaBenchArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that exits with EXIT_INVALID_FLAGS instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID_FLAGS, f"{self.prog}: error: {message}\n")


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--data", type=Path, help="Matrix file (.csv or .icab) of raw signals.")
    source.add_argument("--experiment", choices=["A", "B", "C"], help="Synthetic experiment.")
    parser.add_argument("--n", type=int, help="Override the experiment's number of sources.")
    parser.add_argument("--t", type=int, help="Override the experiment's number of samples.")
    parser.add_argument("--seed", type=int, default=0, help="Base seed; repeat r uses seed + r.")
    parser.add_argument("--repeats", type=int, default=10, help="Number of repeats (default 10).")
    parser.add_argument("--precond", choices=["h1", "h2"], help="Hessian approximation (tnewton preconditioner).")
    parser.add_argument("--m", type=int, help="L-BFGS memory size.")
    parser.add_argument("--n-ls", type=int, help="Backtracking line-search tries.")
    parser.add_argument("--lambda-min", type=float, help="Eigenvalue floor of the approximation.")
    parser.add_argument("--tol", type=float, help="Gradient ∞-norm stopping tolerance.")
    parser.add_argument("--max-iter", type=int, help="Iteration cap (passes for infomax).")
    parser.add_argument("--cg-tol", type=float, help="Relative CG residual (tnewton).")
    parser.add_argument("--cg-max-iter", type=int, help="CG iteration cap (tnewton, default 10·N).")
    parser.add_argument("--no-cg-precond", action="store_true", help="Run tnewton's CG unpreconditioned.")
    parser.add_argument("--batch-size", type=int, help="Mini-batch size (infomax).")
    parser.add_argument("--alpha0", type=float, help="Initial step size (infomax).")
    parser.add_argument("--sequential", action="store_true", help="Run repeats one at a time for clean timings.")
    parser.add_argument("--out", type=Path, required=True, help="Output directory.")
    parser.add_argument("--svg", action="store_true", help="Also write figure.svg.")


def build_parser() -> argparse.ArgumentParser:
    parser = IcaBenchArgumentParser(prog="icabench", description="Benchmark of maximum-likelihood ICA solvers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="Generate a synthetic mixture and save it.")
    gen.add_argument("--experiment", choices=["A", "B", "C"], required=True)
    gen.add_argument("--n", type=int)
    gen.add_argument("--t", type=int)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True, help="Destination (.csv or .icab).")

    run = commands.add_parser("run", help="Benchmark one solver.")
    run.add_argument("--solver", choices=list(SOLVER_REGISTRY), required=True)
    _add_data_flags(run)

    compare = commands.add_parser("compare", help="Benchmark several solvers on the same data.")
    compare.add_argument("--solvers", required=True, help="Comma-separated solver ids.")
    _add_data_flags(compare)

    plot = commands.add_parser("plot", help="Redraw the figure of a summary.json.")
    plot.add_argument("--summary", type=Path, required=True)
    plot.add_argument("--out", type=Path, required=True)

    return parser


def solver_options(args: argparse.Namespace) -> dict:
    """Solver configuration overrides from the flags; flags left out stay None."""
    return {
        "memory": args.m,
        "n_ls": args.n_ls,
        "lambda_min": args.lambda_min,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "precond": args.precond,
        "cg_tol": args.cg_tol,
        "cg_max_iter": args.cg_max_iter,
        "use_precond": False if args.no_cg_precond else None,
        "batch_size": args.batch_size,
        "alpha0": args.alpha0,
    }


def build_specs(args: argparse.Namespace, solver_ids: list[str]) -> list[RunSpec]:
    """
    Builds one RunSpec per solver and validates each configuration up front.

    Raises:
        InvalidConfigError: On unknown solver ids or invalid values.
    """
    options = solver_options(args)
    specs = []
    for solver_id in solver_ids:
        build_solver(solver_id, options)
        specs.append(
            RunSpec(
                solver_id=solver_id,
                options=options,
                experiment=args.experiment,
                data_path=args.data,
                seed=args.seed,
                repeats=args.repeats,
                out_dir=args.out,
                n=args.n,
                t=args.t,
                sequential=args.sequential,
                svg=args.svg,
            )
        )
    return specs


async def run_command(args: argparse.Namespace) -> int:
    if args.command == "gen":
        problem = gen_experiment(args.experiment, args.seed, n=args.n, t=args.t)
        save_matrix(args.out, problem.observed)
        return EXIT_OK

    if args.command == "plot":
        plot_summary(load_summary(args.summary), args.out)
        return EXIT_OK

    if args.command == "run":
        solver_ids = [args.solver]
    else:
        solver_ids = [solver_id.strip() for solver_id in args.solvers.split(",") if solver_id.strip()]
        if not solver_ids:
            raise InvalidConfigError("--solvers needs at least one solver id")

    aggregator = Aggregator(build_specs(args, solver_ids))
    report = await aggregator.run(combined_csv=args.command == "compare")

    if report.all_failed:
        failed = [solver_id for solver_id, solver_report in report.reports.items() if solver_report.all_failed]
        logger.critical(f"Every repeat failed for {', '.join(failed)}")
        return EXIT_ALL_DIVERGED
    return EXIT_OK


async def main(argv: list[str] | None = None) -> int:
    """
    Main entry point of the icabench CLI. It:
      1. Parses the flags (invalid flags exit with code 4).
      2. Dispatches to gen, run, compare or plot.
      3. Maps failures to exit codes: 2 for unreadable or unusable data,
         3 when every repeat of a solver failed, 4 for invalid configuration.

    Args:
        argv (list[str], optional): Arguments without the program name; sys.argv[1:] by default.

    Returns:
        int: The exit code.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        set_level(logging.DEBUG)

    logger.info(f"Starting icabench {args.command}...")
    try:
        get_settings()
        code = await run_command(args)
    except InvalidConfigError as e:
        logger.critical(f"Invalid configuration: {e}")
        return EXIT_INVALID_FLAGS
    except (MatrixFormatError, InvalidDataError, RankDeficiencyError) as e:
        logger.critical(f"Unusable data: {e}")
        return EXIT_FORMAT_ERROR
    except FileNotFoundError as e:
        logger.critical(f"File not found: {e}")
        return EXIT_FORMAT_ERROR
    except IcaBenchError as e:
        logger.critical(f"icabench {args.command} failed: {e}", exc_info=True)
        return EXIT_ALL_DIVERGED

    logger.info(f"icabench {args.command} complete.")
    return code


if __name__ == "__main__":
    # Only run the CLI if called directly (not imported).
    sys.exit(asyncio.run(main()))
