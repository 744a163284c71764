import csv
import json
from pathlib import Path

from icabench.solvers.base_solver import ConvergenceTrace
from icabench.utils.logger import get_logger

logger = get_logger(__name__)

SUMMARY_FILE = "summary.json"
COMBINED_CSV_FILE = "combined.csv"
FIGURE_FILE = "figure.svg"
TRACES_DIR = "traces"

COMBINED_COLUMNS = ["solver", "repeat", "iter", "time", "grad_norm", "loss", "n2t_product_count"]


class TraceRepository:
    """
    Stores the artifacts of a benchmark under one output directory.

    Layout:
        <out_dir>/traces/<solver>/run_<repeat>.json   one trace per run
        <out_dir>/summary.json                          medians and statistics
        <out_dir>/combined.csv                          every record of every run (compare)
        <out_dir>/figure.svg                            optional figure

    Attributes:
        out_dir (Path): Root of the artifacts; created on first write.
    """

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)

    @property
    def summary_path(self) -> Path:
        return self.out_dir / SUMMARY_FILE

    @property
    def combined_csv_path(self) -> Path:
        return self.out_dir / COMBINED_CSV_FILE

    @property
    def figure_path(self) -> Path:
        return self.out_dir / FIGURE_FILE

    def trace_path(self, solver_id: str, repeat: int) -> Path:
        return self.out_dir / TRACES_DIR / solver_id / f"run_{repeat:03d}.json"

    def save_trace(
        self,
        trace: ConvergenceTrace,
        repeat: int,
        config: dict,
        n: int,
        t: int,
        seed: int,
        failed: bool = False,
    ) -> Path:
        """
        Writes one run as JSON: solver, config, n, t, seed and the per-iteration records.

        Args:
            trace (ConvergenceTrace): The run's trace (partial for a failed run).
            repeat (int): Repeat index, part of the file name.
            config (dict): The solver configuration.
            n (int): Number of sources.
            t (int): Number of samples.
            seed (int): Seed of the repeat.
            failed (bool): Whether the run diverged.

        Returns:
            Path: The written file.
        """
        payload = {
            "solver": trace.solver,
            "config": config,
            "n": n,
            "t": t,
            "seed": seed,
            "converged": trace.converged,
            "stalled": trace.stalled,
            "failed": failed,
            "excluded_time_s": trace.excluded_time_s,
            "records": [record.to_dict() for record in trace.records],
        }
        path = self.trace_path(trace.solver, repeat)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        logger.debug(f"Trace of {trace.solver} repeat {repeat} written to {path}")
        return path

    def load_trace(self, path: str | Path) -> tuple[ConvergenceTrace, dict]:
        """Reads a trace file back; returns the trace and the remaining metadata (config, n, t, seed, failed)."""
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        trace = ConvergenceTrace.from_dict(payload)
        metadata = {key: payload.get(key) for key in ("config", "n", "t", "seed", "failed")}
        return trace, metadata

    def save_summary(self, summary: dict) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        logger.info(f"Summary written to {self.summary_path}")
        return self.summary_path

    def save_combined_csv(self, runs: list[tuple[int, ConvergenceTrace]]) -> Path:
        """
        Writes every record of the given runs to one CSV, one row per iteration.

        Args:
            runs (list[tuple[int, ConvergenceTrace]]): (repeat, trace) pairs.

        Returns:
            Path: The written file.
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        n_rows = 0
        with open(self.combined_csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=COMBINED_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for repeat, trace in runs:
                for record in trace.records:
                    writer.writerow(
                        {
                            "solver": trace.solver,
                            "repeat": repeat,
                            "iter": record.iter,
                            "time": record.time_s,
                            "grad_norm": record.grad_inf,
                            "loss": record.loss,
                            "n2t_product_count": record.n2t_products,
                        }
                    )
                    n_rows += 1
        logger.info(f"Combined CSV with {n_rows} rows written to {self.combined_csv_path}")
        return self.combined_csv_path


def load_summary(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
