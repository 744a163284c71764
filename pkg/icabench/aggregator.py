import asyncio
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from icabench.datagen.experiments import EXPERIMENT_SHAPES, ExperimentId, gen_experiment, recovery_index
from icabench.preprocessing.whitening import DataMatrix, WhiteningTransform, preprocess
from icabench.repository.matrix_repository import load_matrix
from icabench.repository.trace_repository import TraceRepository
from icabench.solvers.base_solver import BaseSolver, ConvergenceTrace
from icabench.solvers.gradient_solver import GradientDescentSolver
from icabench.solvers.infomax_solver import InfomaxSolver
from icabench.solvers.picard_solver import PicardSolver, VanillaLbfgsSolver
from icabench.solvers.quasi_newton_solver import SimpleQuasiNewtonSolver
from icabench.solvers.truncated_newton_solver import TruncatedNewtonSolver
from icabench.utils.config import get_settings
from icabench.utils.errors import InvalidConfigError, SolverDivergedError
from icabench.utils.logger import get_logger
from icabench.utils.plotting import plot_summary

logger = get_logger(__name__)

# Solver id -> (class, configuration fields fixed by the id).
SOLVER_REGISTRY: dict[str, tuple[type[BaseSolver], dict]] = {
    "picard-h1": (PicardSolver, {"precond": "h1"}),
    "picard-h2": (PicardSolver, {"precond": "h2"}),
    "lbfgs": (VanillaLbfgsSolver, {}),
    "sqn-h1": (SimpleQuasiNewtonSolver, {"precond": "h1"}),
    "sqn-h2": (SimpleQuasiNewtonSolver, {"precond": "h2"}),
    "tnewton": (TruncatedNewtonSolver, {}),
    "gd-oracle": (GradientDescentSolver, {}),
    "infomax": (InfomaxSolver, {}),
}

TIME_GRID_POINTS = 200
SUMMARY_THRESHOLD = 1e-6


def build_solver(solver_id: str, options: dict | None = None, seed: int | None = None) -> BaseSolver:
    """
    Instantiates a registered solver with its default configuration updated by `options`.

    Options that the solver's configuration does not have are ignored. For
    Infomax, `max_iter` sets the number of passes and `seed` the batch shuffling.

    Args:
        solver_id (str): One of SOLVER_REGISTRY.
        options (dict, optional): Configuration overrides; None values are skipped.
        seed (int, optional): Seed for stochastic solvers.

    Returns:
        BaseSolver: The configured solver.

    Raises:
        InvalidConfigError: On an unknown id or invalid configuration values.
    """
    try:
        solver_cls, fixed = SOLVER_REGISTRY[solver_id]
    except KeyError:
        raise InvalidConfigError(
            f"Unknown solver '{solver_id}', expected one of {', '.join(SOLVER_REGISTRY)}"
        ) from None

    config = solver_cls.default_config()
    names = {f.name for f in fields(config)}
    overrides = {key: value for key, value in (options or {}).items() if value is not None}

    if solver_cls is InfomaxSolver:
        if "max_iter" in overrides:
            overrides["max_passes"] = overrides.pop("max_iter")
        if seed is not None:
            overrides.setdefault("seed", seed)

    for key, value in fixed.items():
        if key in overrides and str(overrides[key]) != value:
            logger.warning(f"{solver_id} fixes {key}={value}; ignoring {key}={overrides[key]}")
        overrides[key] = value

    ignored = sorted(set(overrides) - names)
    if ignored:
        logger.debug(f"{solver_id} has no use for {', '.join(ignored)}")

    return solver_cls(replace(config, **{key: value for key, value in overrides.items() if key in names}))


@dataclass(frozen=True)
class RunSpec:
    """
    One solver benchmarked over repeated problems.

    Attributes:
        solver_id (str): Registered solver id.
        options (dict): Solver configuration overrides.
        experiment (str | None): Synthetic experiment id (A, B or C); exclusive with data_path.
        data_path (Path | None): Matrix file to load; exclusive with experiment.
        seed (int): Base seed; repeat r uses seed + r.
        repeats (int): Number of repeats.
        out_dir (Path): Output directory.
        n (int | None): Override of the experiment's N.
        t (int | None): Override of the experiment's T.
        sequential (bool): Run repeats one at a time.
        svg (bool): Also write the figure.
    """

    solver_id: str
    options: dict = field(default_factory=dict)
    experiment: str | None = None
    data_path: Path | None = None
    seed: int = 0
    repeats: int = 10
    out_dir: Path = Path("icabench-out")
    n: int | None = None
    t: int | None = None
    sequential: bool = False
    svg: bool = False

    def __post_init__(self):
        if self.repeats < 1:
            raise InvalidConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.solver_id not in SOLVER_REGISTRY:
            raise InvalidConfigError(
                f"Unknown solver '{self.solver_id}', expected one of {', '.join(SOLVER_REGISTRY)}"
            )
        if (self.n is not None and self.n < 2) or (self.t is not None and self.t < 2):
            raise InvalidConfigError(f"Experiment sizes need N >= 2 and T >= N, got N={self.n}, T={self.t}")
        if (self.experiment is None) == (self.data_path is None):
            raise InvalidConfigError("Exactly one of experiment and data_path must be given")
        if self.experiment is not None:
            try:
                object.__setattr__(self, "experiment", ExperimentId(str(self.experiment).upper()).value)
            except ValueError as e:
                raise InvalidConfigError(f"Unknown experiment '{self.experiment}', expected A, B or C") from e

    def data_key(self) -> tuple:
        return (self.experiment, self.data_path, self.seed, self.repeats, self.n, self.t)


@dataclass
class MedianCurve:
    """
    Median convergence of one solver across repeats.

    Attributes:
        solver (str): Solver id.
        iterations (np.ndarray): 0, 1, ..., L-1, with L the median trace length.
        iteration_median (np.ndarray): Pointwise median gradient norm per iteration.
        time_grid (np.ndarray): Log-spaced times shared by all runs.
        time_median (np.ndarray): Median of the runs' best-so-far gradient norm at each grid time.
        metadata (dict): n, t, experiment and seeds.
    """

    solver: str
    iterations: np.ndarray
    iteration_median: np.ndarray
    time_grid: np.ndarray
    time_median: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_traces(cls, solver: str, traces: list[ConvergenceTrace], metadata: dict | None = None) -> "MedianCurve":
        """
        Iteration medians: every trace is extended to the median length by
        repeating its last value, then the pointwise median is taken. With three
        runs the curve therefore ends where the second shortest ends.

        Time medians: each run becomes a staircase of its running minimum
        gradient norm, sampled on TIME_GRID_POINTS log-spaced times between the
        first positive and the last recorded time.
        """
        if not traces:
            raise ValueError("A median curve needs at least one trace")

        lengths = sorted(len(trace) for trace in traces)
        length = lengths[(len(lengths) - 1) // 2]
        padded = np.vstack([_carry_forward(trace.grad_norms, length) for trace in traces])
        iteration_median = np.median(padded, axis=0)

        time_grid = _time_grid(traces)
        staircases = np.vstack([_staircase(trace, time_grid) for trace in traces])
        time_median = np.median(staircases, axis=0)

        return cls(
            solver=solver,
            iterations=np.arange(length),
            iteration_median=iteration_median,
            time_grid=time_grid,
            time_median=time_median,
            metadata=dict(metadata or {}),
        )

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "iterations": self.iterations.tolist(),
            "iteration_median": self.iteration_median.tolist(),
            "time_grid": self.time_grid.tolist(),
            "time_median": self.time_median.tolist(),
            "metadata": self.metadata,
        }


def _carry_forward(values: np.ndarray, length: int) -> np.ndarray:
    if len(values) >= length:
        return values[:length]
    return np.concatenate([values, np.full(length - len(values), values[-1])])


def _time_grid(traces: list[ConvergenceTrace]) -> np.ndarray:
    times = np.concatenate([trace.column("time_s") for trace in traces])
    last = float(times.max())
    positive = times[times > 0]
    first = float(positive.min()) if positive.size else last
    if not first < last:
        return np.array([last])
    return np.geomspace(first, last, TIME_GRID_POINTS)


def _staircase(trace: ConvergenceTrace, grid: np.ndarray) -> np.ndarray:
    best = np.minimum.accumulate(trace.grad_norms)
    # Grid times before the first record take the first record's value.
    index = np.searchsorted(trace.column("time_s"), grid, side="right") - 1
    return best[np.clip(index, 0, len(best) - 1)]


@dataclass
class RunOutcome:
    """One solver run on one repeat."""

    solver: str
    repeat: int
    seed: int
    trace: ConvergenceTrace | None
    failed: bool = False
    error: str | None = None
    recovery: float | None = None
    trace_path: Path | None = None

    def to_dict(self) -> dict:
        trace = self.trace
        last = trace.records[-1] if trace and trace.records else None
        return {
            "repeat": self.repeat,
            "seed": self.seed,
            "failed": self.failed,
            "error": self.error,
            "converged": bool(trace and trace.converged),
            "stalled": bool(trace and trace.stalled),
            "n_iter": last.iter if last else None,
            "final_grad_inf": last.grad_inf if last else None,
            "final_loss": last.loss if last else None,
            "recovery_index": self.recovery,
            "trace": str(self.trace_path) if self.trace_path else None,
        }


@dataclass
class SolverReport:
    """Outcome of one solver across all repeats."""

    solver: str
    config: dict
    runs: list[RunOutcome]
    median: MedianCurve | None
    stats: dict
    warnings: list[str] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(run.failed for run in self.runs)

    @property
    def all_failed(self) -> bool:
        return self.n_failed == len(self.runs)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "runs": [run.to_dict() for run in self.runs],
            "median": self.median.to_dict() if self.median else None,
            "stats": self.stats,
            "warnings": self.warnings,
        }


@dataclass
class BenchmarkReport:
    """Everything a run or compare produced."""

    reports: dict[str, SolverReport]
    summary: dict
    summary_path: Path
    combined_csv_path: Path | None = None
    figure_path: Path | None = None

    @property
    def all_failed(self) -> bool:
        return any(report.all_failed for report in self.reports.values())


@dataclass
class _PreparedData:
    whitened: DataMatrix
    transform: WhiteningTransform
    mixing: np.ndarray | None
    seed: int


def _median_or_none(values: list[float]) -> float | None:
    if not values:
        return None
    value = float(np.median(values))
    return value if np.isfinite(value) else None


def summarize_runs(runs: list[RunOutcome], tol: float) -> dict:
    """
    Statistics of a solver across repeats, failed runs excluded: median
    iterations to reach 1e-6 and to reach tol (runs that never get there count
    as infinite), fraction of repeats reaching tol, median CG iterations per
    iteration when recorded, and median recovery index when the ground truth is known.
    """
    traces = [run.trace for run in runs if not run.failed and run.trace is not None]

    def iterations_to(threshold: float) -> list[float]:
        reached = [trace.iterations_to(threshold) for trace in traces]
        return [np.inf if k is None else float(k) for k in reached]

    n_cg = [
        record.n_cg
        for trace in traces
        for record in trace.records
        if record.n_cg is not None and record.ls_tries > 0
    ]
    recoveries = [run.recovery for run in runs if not run.failed and run.recovery is not None]

    return {
        "n_runs": len(runs),
        "n_failed": sum(run.failed for run in runs),
        "n_converged": sum(trace.converged for trace in traces),
        "fraction_converged": sum(trace.converged for trace in traces) / len(runs),
        "median_iterations_to_1e-6": _median_or_none(iterations_to(SUMMARY_THRESHOLD)),
        "median_iterations_to_tol": _median_or_none(iterations_to(tol)),
        "median_n_cg": _median_or_none(n_cg),
        "median_recovery_index": _median_or_none(recoveries),
    }


class Aggregator:
    """
    The Aggregator runs one or more solvers over the same repeated problems and
    stores the results through a TraceRepository.

    Repeat r uses seed base + r. Its data are generated (or loaded) and whitened
    once, then every solver runs on the same whitened matrix. Repeats run as
    worker threads, at most ICABENCH_THREADS at a time (one with `sequential`).

    Attributes:
        specs (list[RunSpec]): One spec per solver, sharing the data source.
        repository (TraceRepository): Where the artifacts go.
    """

    def __init__(self, specs: list[RunSpec]):
        """
        Args:
            specs (list[RunSpec]): Non-empty; all specs must share data source, seed,
                repeats and output directory.

        Raises:
            InvalidConfigError: If the specs disagree on the shared fields.
        """
        if not specs:
            raise InvalidConfigError("At least one RunSpec is needed")
        first = specs[0]
        for spec in specs[1:]:
            if spec.data_key() != first.data_key() or spec.out_dir != first.out_dir:
                raise InvalidConfigError("Compared specs must share data source, seed, repeats and output directory")
        if len({spec.solver_id for spec in specs}) != len(specs):
            raise InvalidConfigError("Compared solver ids must be distinct")

        self.specs = specs
        self.base = first
        self.repository = TraceRepository(first.out_dir)
        self._loaded: _PreparedData | None = None

    async def run(self, combined_csv: bool = False) -> BenchmarkReport:
        """
        Executes the benchmark:
          1. Loads and whitens the data file once, if the data come from a file.
          2. Runs every repeat in a worker thread, bounded by the semaphore.
          3. Aggregates medians and statistics in repeat order and writes the summary.

        Args:
            combined_csv (bool): Also write the combined per-record CSV.

        Returns:
            BenchmarkReport: Per-solver reports and the paths written.
        """
        base = self.base
        if base.data_path is not None:
            whitened, transform = preprocess(load_matrix(base.data_path))
            self._loaded = _PreparedData(whitened=whitened, transform=transform, mixing=None, seed=base.seed)

        bound = 1 if any(spec.sequential for spec in self.specs) else get_settings().threads
        semaphore = asyncio.Semaphore(bound)
        logger.info(
            f"Starting {base.repeats} repeats of {', '.join(spec.solver_id for spec in self.specs)} "
            f"(at most {bound} at a time)"
        )

        async def run_repeat(repeat: int) -> list[RunOutcome]:
            async with semaphore:
                return await asyncio.to_thread(self._run_repeat, repeat)

        per_repeat = await asyncio.gather(*(run_repeat(r) for r in range(base.repeats)))

        reports = {}
        for index, spec in enumerate(self.specs):
            runs = [outcomes[index] for outcomes in per_repeat]
            reports[spec.solver_id] = self._report(spec, runs)

        summary = self._summary(reports)
        report = BenchmarkReport(reports=reports, summary=summary, summary_path=self.repository.save_summary(summary))

        if combined_csv:
            runs = [
                (run.repeat, run.trace)
                for solver_report in reports.values()
                for run in solver_report.runs
                if not run.failed
            ]
            report.combined_csv_path = self.repository.save_combined_csv(runs)
        if base.svg:
            report.figure_path = plot_summary(summary, self.repository.figure_path)

        logger.info("Aggregator run complete.")
        return report

    def _prepare(self, repeat: int) -> _PreparedData:
        seed = self.base.seed + repeat
        if self._loaded is not None:
            return replace(self._loaded, seed=seed)
        problem = gen_experiment(self.base.experiment, seed, n=self.base.n, t=self.base.t)
        whitened, transform = preprocess(problem.observed)
        return _PreparedData(whitened=whitened, transform=transform, mixing=problem.mixing, seed=seed)

    def _run_repeat(self, repeat: int) -> list[RunOutcome]:
        seed = self.base.seed + repeat
        try:
            data = self._prepare(repeat)
        except InvalidConfigError:
            raise
        except Exception as e:
            logger.error(f"Could not prepare the data of repeat {repeat} (seed {seed}): {e}", exc_info=True)
            return [self._failed_outcome(spec, repeat, seed, f"data preparation failed: {e}") for spec in self.specs]

        n, t = data.whitened.shape
        outcomes = []

        for spec in self.specs:
            solver = build_solver(spec.solver_id, spec.options, seed=data.seed)
            logger.debug(f"Repeat {repeat} (seed {data.seed}): running {spec.solver_id}")
            try:
                W, _, trace = solver.solve(data.whitened)
                recovery = None
                if data.mixing is not None:
                    recovery = recovery_index(data.transform.sensor_unmixing(W), data.mixing)
            except SolverDivergedError as e:
                logger.error(f"{spec.solver_id} diverged on repeat {repeat}: {e}", exc_info=True)
                trace = e.trace or ConvergenceTrace(solver=spec.solver_id)
                outcome = RunOutcome(spec.solver_id, repeat, data.seed, trace, failed=True, error=str(e))
            except Exception as e:
                logger.error(f"{spec.solver_id} failed on repeat {repeat}: {e}", exc_info=True)
                trace = ConvergenceTrace(solver=spec.solver_id)
                outcome = RunOutcome(spec.solver_id, repeat, data.seed, trace, failed=True, error=str(e))
            else:
                outcome = RunOutcome(spec.solver_id, repeat, data.seed, trace, recovery=recovery)

            outcome.trace_path = self.repository.save_trace(
                outcome.trace,
                repeat,
                config=solver.config.to_dict(),
                n=n,
                t=t,
                seed=data.seed,
                failed=outcome.failed,
            )
            outcomes.append(outcome)

        return outcomes

    def _failed_outcome(self, spec: RunSpec, repeat: int, seed: int, error: str) -> RunOutcome:
        solver = build_solver(spec.solver_id, spec.options, seed=seed)
        trace = ConvergenceTrace(solver=spec.solver_id)
        outcome = RunOutcome(spec.solver_id, repeat, seed, trace, failed=True, error=error)
        n, t = self._shape()
        outcome.trace_path = self.repository.save_trace(
            outcome.trace, repeat, config=solver.config.to_dict(), n=n, t=t, seed=seed, failed=True
        )
        return outcome

    def _report(self, spec: RunSpec, runs: list[RunOutcome]) -> SolverReport:
        solver = build_solver(spec.solver_id, spec.options, seed=self.base.seed)
        config = solver.config.to_dict()
        warnings = []

        failed = [run for run in runs if run.failed]
        if failed:
            message = f"{spec.solver_id}: {len(failed)} of {len(runs)} runs failed and were excluded from the medians"
            logger.warning(message)
            warnings.append(message)

        kept = [run.trace for run in runs if not run.failed]
        median = None
        if kept:
            n, t = self._shape()
            median = MedianCurve.from_traces(
                spec.solver_id,
                kept,
                metadata={
                    "n": n,
                    "t": t,
                    "experiment": self.base.experiment,
                    "seeds": [run.seed for run in runs if not run.failed],
                },
            )

        stats = summarize_runs(runs, tol=getattr(solver.config, "tol", 0.0))
        logger.info(
            f"{spec.solver_id}: {stats['n_converged']}/{stats['n_runs']} runs converged, "
            f"median iterations to 1e-6: {stats['median_iterations_to_1e-6']}"
        )
        return SolverReport(solver=spec.solver_id, config=config, runs=runs, median=median, stats=stats, warnings=warnings)

    def _shape(self) -> tuple[int, int]:
        if self._loaded is not None:
            return self._loaded.whitened.shape
        default_n, default_t = EXPERIMENT_SHAPES[ExperimentId(self.base.experiment)]
        return (self.base.n or default_n, self.base.t or default_t)

    def _summary(self, reports: dict[str, SolverReport]) -> dict:
        base = self.base
        n, t = self._shape()
        label = f"experiment {base.experiment}" if base.experiment else Path(base.data_path).name
        return {
            "title": f"{label}, N={n}, T={t}, {base.repeats} repeats",
            "experiment": base.experiment,
            "data": str(base.data_path) if base.data_path else None,
            "n": n,
            "t": t,
            "seed": base.seed,
            "repeats": base.repeats,
            "seeds": [base.seed + r for r in range(base.repeats)],
            "solvers": {solver_id: report.to_dict() for solver_id, report in reports.items()},
        }


def run_benchmark(spec: RunSpec) -> BenchmarkReport:
    """Runs one solver over the spec's repeats; writes traces, summary.json and optionally figure.svg."""
    return asyncio.run(Aggregator([spec]).run())


def compare(specs: list[RunSpec]) -> BenchmarkReport:
    """Runs several solvers on identical per-repeat data; also writes combined.csv."""
    return asyncio.run(Aggregator(specs).run(combined_csv=True))
