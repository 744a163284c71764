from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from icabench.utils.logger import get_logger  # noqa: E402

logger = get_logger(__name__)

FIGURE_SIZE = (10.0, 4.0)

# Solid lines for the solvers informed of the Hessian approximations, dashed otherwise.
INFORMED_PREFIXES = ("picard", "sqn", "tnewton")


def _line_style(solver_id: str) -> str:
    return "-" if solver_id.startswith(INFORMED_PREFIXES) else "--"


def plot_summary(summary: dict, out_path: str | Path) -> Path:
    """
    Draws the median convergence curves of a summary as a two-panel SVG.

    Left panel: median gradient ∞-norm against time. Right panel: against
    iterations. Both y axes are logarithmic. The figure depends on nothing but
    `summary`, so it can be regenerated from summary.json at any time.

    Args:
        summary (dict): A summary as written by the aggregator.
        out_path (str | Path): Destination; the format follows the suffix (SVG expected).

    Returns:
        Path: The written file.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    fig, (ax_time, ax_iter) = plt.subplots(1, 2, figsize=FIGURE_SIZE)
    for solver_id, report in summary.get("solvers", {}).items():
        median = report.get("median")
        if not median:
            logger.warning(f"No median curve for {solver_id}; skipping it in the figure")
            continue
        style = _line_style(solver_id)
        ax_time.semilogy(median["time_grid"], median["time_median"], style, label=solver_id)
        ax_iter.semilogy(median["iterations"], median["iteration_median"], style, label=solver_id)

    ax_time.set_xlabel("Time (s)")
    ax_iter.set_xlabel("Iterations")
    ax_time.set_ylabel("Gradient norm")
    for ax in (ax_time, ax_iter):
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
        ax.grid(True, which="major", alpha=0.3)
    ax_iter.legend(loc="upper right", frameon=False)

    title = summary.get("title")
    if title:
        fig.suptitle(title)

    fig.tight_layout()
    # A fixed hash salt keeps the SVG ids stable across runs.
    with plt.rc_context({"svg.hashsalt": "icabench"}):
        fig.savefig(out_path, bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)

    logger.info(f"Figure written to {out_path}")
    return out_path
