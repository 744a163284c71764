import csv
import json

import numpy as np
import pytest

from icabench.aggregator import (
    Aggregator,
    MedianCurve,
    RunSpec,
    TIME_GRID_POINTS,
    build_solver,
    compare,
    run_benchmark,
)
from icabench.model.curvature import ApproxKind
from icabench.solvers.base_solver import ConvergenceTrace, TraceRecord
from icabench.solvers.infomax_solver import InfomaxSolver
from icabench.solvers.picard_solver import PicardSolver
from icabench.solvers.truncated_newton_solver import TruncatedNewtonSolver
from icabench.utils.errors import InvalidConfigError, InvalidDataError, SolverDivergedError


def make_trace(grad_norms, dt=0.01, solver="picard-h2") -> ConvergenceTrace:
    trace = ConvergenceTrace(solver=solver)
    for k, grad in enumerate(grad_norms):
        trace.append(TraceRecord(iter=k, time_s=k * dt, grad_inf=grad, loss=-float(k)))
    return trace


def geometric(length: int, rate: float = 0.5) -> list[float]:
    return [rate ** k for k in range(length)]


def test_median_length_is_the_middle_trace_length():
    traces = [make_trace(geometric(6)), make_trace(geometric(10)), make_trace(geometric(31))]

    curve = MedianCurve.from_traces("picard-h2", traces)

    assert len(curve.iterations) == 10
    assert len(curve.iteration_median) == 10
    # The shortest trace is carried at its last value, so the median at the end
    # comes from the two longer traces, which agree there.
    assert curve.iteration_median[-1] == pytest.approx(0.5 ** 9)


def test_median_of_one_trace_is_the_trace():
    trace = make_trace(geometric(8))

    curve = MedianCurve.from_traces("picard-h2", [trace])

    np.testing.assert_array_equal(curve.iteration_median, trace.grad_norms)
    assert len(curve.time_grid) == TIME_GRID_POINTS
    assert curve.time_grid[0] == pytest.approx(0.01)
    assert curve.time_grid[-1] == pytest.approx(0.07)
    assert np.all(np.diff(curve.time_median) <= 0)


def test_median_does_not_depend_on_trace_order():
    traces = [make_trace(geometric(5, 0.3)), make_trace(geometric(9, 0.6), dt=0.02), make_trace(geometric(7, 0.5))]

    forward = MedianCurve.from_traces("sqn-h2", traces)
    backward = MedianCurve.from_traces("sqn-h2", traces[::-1])

    np.testing.assert_array_equal(forward.iteration_median, backward.iteration_median)
    np.testing.assert_array_equal(forward.time_median, backward.time_median)


def test_median_needs_a_trace():
    with pytest.raises(ValueError):
        MedianCurve.from_traces("picard-h2", [])


def test_build_solver_applies_fixed_and_given_options():
    solver = build_solver("picard-h1", {"memory": 3, "cg_tol": 0.5, "tol": None})

    assert isinstance(solver, PicardSolver)
    assert solver.solver_id == "picard-h1"
    assert solver.config.precond is ApproxKind.H1
    assert solver.config.memory == 3
    assert solver.config.tol == 1e-8


def test_build_solver_keeps_the_id_precond_on_conflict():
    solver = build_solver("sqn-h2", {"precond": "h1"})

    assert solver.solver_id == "sqn-h2"


def test_build_solver_maps_infomax_options():
    solver = build_solver("infomax", {"max_iter": 12, "batch_size": 64}, seed=4)

    assert isinstance(solver, InfomaxSolver)
    assert solver.config.max_passes == 12
    assert solver.config.batch_size == 64
    assert solver.config.seed == 4


def test_build_solver_tnewton_options():
    solver = build_solver("tnewton", {"precond": "h1", "use_precond": False, "cg_max_iter": 7})

    assert isinstance(solver, TruncatedNewtonSolver)
    assert solver.config.precond is ApproxKind.H1
    assert solver.config.use_precond is False
    assert solver.config.cg_max_iter == 7


@pytest.mark.parametrize("solver_id, options", [("newton", {}), ("picard-h2", {"memory": -1})])
def test_build_solver_rejects_bad_input(solver_id, options):
    with pytest.raises(InvalidConfigError):
        build_solver(solver_id, options)


def test_run_spec_is_validated(tmp_path):
    with pytest.raises(InvalidConfigError):
        RunSpec("picard-h2", experiment="A", repeats=0, out_dir=tmp_path)
    with pytest.raises(InvalidConfigError):
        RunSpec("picard-h2", out_dir=tmp_path)
    with pytest.raises(InvalidConfigError):
        RunSpec("picard-h2", experiment="Z", out_dir=tmp_path)


def test_aggregator_rejects_mismatched_specs(tmp_path):
    first = RunSpec("picard-h2", experiment="A", out_dir=tmp_path)

    with pytest.raises(InvalidConfigError):
        Aggregator([first, RunSpec("lbfgs", experiment="B", out_dir=tmp_path)])
    with pytest.raises(InvalidConfigError):
        Aggregator([first, RunSpec("picard-h2", experiment="A", out_dir=tmp_path)])


def test_run_benchmark_writes_every_artifact(tmp_path):
    spec = RunSpec("picard-h2", experiment="A", n=4, t=2000, repeats=3, seed=10, out_dir=tmp_path, svg=True)

    report = run_benchmark(spec)

    solver_report = report.reports["picard-h2"]
    assert solver_report.n_failed == 0
    assert not report.all_failed
    assert report.figure_path.exists()
    assert [run.seed for run in solver_report.runs] == [10, 11, 12]
    for run in solver_report.runs:
        payload = json.loads(run.trace_path.read_text())
        assert payload["seed"] == run.seed and payload["n"] == 4 and payload["t"] == 2000
        assert run.recovery is not None

    summary = json.loads(report.summary_path.read_text())
    assert summary["seeds"] == [10, 11, 12]
    stats = summary["solvers"]["picard-h2"]["stats"]
    assert stats["n_failed"] == 0
    assert stats["fraction_converged"] == 1.0
    assert summary["solvers"]["picard-h2"]["median"] is not None


def test_compare_shares_data_and_writes_combined_csv(tmp_path):
    specs = [
        RunSpec(solver_id, experiment="B", n=6, t=1500, repeats=2, out_dir=tmp_path, sequential=True)
        for solver_id in ("picard-h2", "sqn-h2", "lbfgs")
    ]

    report = compare(specs)

    with open(report.combined_csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    expected_rows = sum(len(run.trace) for solver_report in report.reports.values() for run in solver_report.runs)
    assert len(rows) == expected_rows

    first_losses = {
        (row["solver"], row["repeat"]): float(row["loss"]) for row in rows if row["iter"] == "0"
    }
    for repeat in ("0", "1"):
        losses = [first_losses[(solver_id, repeat)] for solver_id in ("picard-h2", "sqn-h2", "lbfgs")]
        assert losses[0] == losses[1] == losses[2]


def test_failed_runs_are_reported(tmp_path, monkeypatch):
    def diverge(self, X, W0=None):
        raise SolverDivergedError("boom", trace=ConvergenceTrace(solver=self.solver_id))

    monkeypatch.setattr(PicardSolver, "solve", diverge)
    spec = RunSpec("picard-h2", experiment="A", n=3, t=500, repeats=2, out_dir=tmp_path)

    report = run_benchmark(spec)

    solver_report = report.reports["picard-h2"]
    assert report.all_failed
    assert solver_report.n_failed == 2
    assert solver_report.median is None
    assert solver_report.warnings
    assert all(run.error == "boom" for run in solver_report.runs)
    payload = json.loads(solver_report.runs[0].trace_path.read_text())
    assert payload["failed"] is True and payload["records"] == []


def test_file_data_is_loaded_once_for_every_repeat(tmp_path, rng):
    from icabench.repository.matrix_repository import save_matrix

    path = save_matrix(tmp_path / "x.csv", rng.laplace(size=(3, 3)) @ rng.laplace(size=(3, 800)))
    spec = RunSpec("lbfgs", data_path=path, repeats=2, out_dir=tmp_path / "out", options={"tol": 1e-6})

    report = run_benchmark(spec)

    runs = report.reports["lbfgs"].runs
    assert all(run.recovery is None for run in runs)
    np.testing.assert_array_equal(runs[0].trace.losses, runs[1].trace.losses)
    assert report.summary["data"] == str(path)


def test_unexpected_solver_errors_fail_only_that_solver(tmp_path, monkeypatch):
    def crash(self, X, W0=None):
        raise np.linalg.LinAlgError("SVD did not converge")

    monkeypatch.setattr(PicardSolver, "solve", crash)
    specs = [
        RunSpec(solver_id, experiment="A", n=3, t=500, repeats=2, out_dir=tmp_path)
        for solver_id in ("picard-h2", "sqn-h2")
    ]

    report = compare(specs)

    assert report.reports["picard-h2"].n_failed == 2
    assert report.reports["sqn-h2"].n_failed == 0
    assert not report.all_failed
    assert all("SVD did not converge" in run.error for run in report.reports["picard-h2"].runs)
    summary = json.loads(report.summary_path.read_text())
    assert summary["solvers"]["picard-h2"]["stats"]["n_failed"] == 2


def test_failed_data_preparation_fails_the_repeat(tmp_path, monkeypatch):
    prepare = Aggregator._prepare

    def fail_second(self, repeat):
        if repeat == 1:
            raise InvalidDataError("singular mixing")
        return prepare(self, repeat)

    monkeypatch.setattr(Aggregator, "_prepare", fail_second)
    spec = RunSpec("picard-h2", experiment="A", n=3, t=500, repeats=3, seed=4, out_dir=tmp_path)

    report = run_benchmark(spec)

    runs = report.reports["picard-h2"].runs
    assert [run.failed for run in runs] == [False, True, False]
    assert runs[1].seed == 5 and "singular mixing" in runs[1].error
    payload = json.loads(runs[1].trace_path.read_text())
    assert payload["failed"] is True and payload["n"] == 3 and payload["t"] == 500
    assert report.summary_path.exists()
