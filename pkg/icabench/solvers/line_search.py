from dataclasses import dataclass

import numpy as np

from icabench.model.infomax import INFOMAX, ScoreModel


@dataclass
class LineSearchResult:
    """
    Outcome of a step-size search along a relative direction p.

    Attributes:
        alpha (float): Last step size tried (the accepted one on success).
        W (np.ndarray): (I + alpha·p)·W on success, the input W otherwise.
        Y (np.ndarray): (I + alpha·p)·Y on success, the input Y otherwise.
        loss (float): Loss at the returned W.
        tries (int): Number of step sizes evaluated.
        success (bool): Whether a strictly decreasing step was found.
    """

    alpha: float
    W: np.ndarray
    Y: np.ndarray
    loss: float
    tries: int
    success: bool


def relative_loss_change(
    Y: np.ndarray,
    step: np.ndarray,
    density_0: np.ndarray,
    score_model: ScoreModel = INFOMAX,
) -> tuple[float, np.ndarray | None]:
    """
    Loss difference L((I + step)·W) - L(W), computed without W.

    The density term is summed as elementwise differences, which keeps the
    result accurate when the change is far below the loss itself.

    Args:
        Y (np.ndarray): Current N×T sources.
        step (np.ndarray): Relative update E, so the new sources are (I + E)·Y.
        density_0 (np.ndarray): -log p(Y), elementwise.
        score_model (ScoreModel): Source density.

    Returns:
        tuple[float, np.ndarray | None]: The change (inf if undefined) and the new
        sources (None if I + E is singular).
    """
    relative = np.eye(step.shape[0]) + step
    sign, logdet = np.linalg.slogdet(relative)
    if sign == 0 or not np.isfinite(logdet):
        return np.inf, None

    with np.errstate(over="ignore", invalid="ignore"):
        Y_new = relative @ Y
        change = -logdet + np.sum(score_model.neg_log_density(Y_new) - density_0) / Y.shape[1]

    if not np.isfinite(change):
        return np.inf, Y_new
    return float(change), Y_new


def backtracking_line_search(
    W: np.ndarray,
    Y: np.ndarray,
    direction: np.ndarray,
    loss_0: float,
    n_ls: int,
    score_model: ScoreModel = INFOMAX,
) -> LineSearchResult:
    """
    Tries alpha = 1, 1/2, 1/4, ... and keeps the first step that strictly
    decreases the loss. Non-finite candidate losses count as failed tries.

    Args:
        W (np.ndarray): Current unmixing matrix.
        Y (np.ndarray): Current sources W·X.
        direction (np.ndarray): Relative search direction p.
        loss_0 (float): Loss at W.
        n_ls (int): Maximum number of step sizes.
        score_model (ScoreModel): Source density.

    Returns:
        LineSearchResult: The accepted step, or the unchanged state with success=False.
    """
    density_0 = score_model.neg_log_density(Y)
    alpha = 1.0

    for tries in range(1, n_ls + 1):
        step = alpha * direction
        change, Y_new = relative_loss_change(Y, step, density_0, score_model)
        if change < 0:
            W_new = (np.eye(W.shape[0]) + step) @ W
            return LineSearchResult(alpha=alpha, W=W_new, Y=Y_new, loss=loss_0 + change, tries=tries, success=True)
        if tries < n_ls:
            alpha *= 0.5

    return LineSearchResult(alpha=alpha, W=W, Y=Y, loss=loss_0, tries=n_ls, success=False)
