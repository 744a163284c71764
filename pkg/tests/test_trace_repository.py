import json

from icabench.repository.trace_repository import TraceRepository, load_summary
from icabench.solvers.base_solver import ConvergenceTrace, TraceRecord
from icabench.utils.plotting import plot_summary


def make_trace() -> ConvergenceTrace:
    trace = ConvergenceTrace(solver="tnewton", converged=True, excluded_time_s=0.25)
    trace.append(TraceRecord(iter=0, time_s=0.0, grad_inf=1.0, loss=3.0, ls_tries=1, n2t_products=5, n_cg=3, cg_breakdown=False))
    trace.append(TraceRecord(iter=1, time_s=0.5, grad_inf=1e-9, loss=2.0, n_cg=0, cg_breakdown=False))
    return trace


def test_trace_survives_a_save_and_load(tmp_path):
    repository = TraceRepository(tmp_path)
    trace = make_trace()

    path = repository.save_trace(trace, 4, config={"cg_tol": 0.01}, n=3, t=100, seed=9)
    loaded, metadata = repository.load_trace(path)

    assert path == tmp_path / "traces" / "tnewton" / "run_004.json"
    assert loaded == trace
    assert metadata == {"config": {"cg_tol": 0.01}, "n": 3, "t": 100, "seed": 9, "failed": False}


def test_optional_fields_are_left_out(tmp_path):
    trace = ConvergenceTrace(solver="lbfgs")
    trace.append(TraceRecord(iter=0, time_s=0.0, grad_inf=1.0, loss=3.0))

    path = TraceRepository(tmp_path).save_trace(trace, 0, config={}, n=2, t=10, seed=0)

    record = json.loads(path.read_text())["records"][0]
    assert "n_cg" not in record and "cg_breakdown" not in record


def test_combined_csv_has_one_row_per_record(tmp_path):
    repository = TraceRepository(tmp_path)

    path = repository.save_combined_csv([(0, make_trace()), (1, make_trace())])

    lines = path.read_text().splitlines()
    assert lines[0] == "solver,repeat,iter,time,grad_norm,loss,n2t_product_count"
    assert len(lines) == 5
    assert lines[-1].startswith("tnewton,1,1,0.5,")


def test_summary_and_figure(tmp_path):
    summary = {
        "title": "experiment A, N=3, T=100, 1 repeats",
        "solvers": {
            "picard-h2": {
                "median": {
                    "iterations": [0, 1, 2],
                    "iteration_median": [1.0, 1e-3, 1e-9],
                    "time_grid": [0.1, 0.2, 0.3],
                    "time_median": [1.0, 1e-3, 1e-9],
                }
            },
            "infomax": {"median": None},
        },
    }
    repository = TraceRepository(tmp_path)

    path = repository.save_summary(summary)
    figure = plot_summary(load_summary(path), repository.figure_path)

    assert load_summary(path) == summary
    first = figure.read_bytes()
    assert b"picard-h2" in first
    assert plot_summary(summary, repository.figure_path).read_bytes() == first
