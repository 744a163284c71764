from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from icabench.utils.errors import NonFiniteLossError

LOG_2 = np.log(2.0)


class ScoreModel(ABC):
    """
    A fixed source density, described through the three functions the solvers need.

    For a density p: neg_log_density(y) = -log p(y) (up to an additive constant),
    score(y) = -p'(y)/p(y) and score_deriv(y) its derivative. All three act
    elementwise on arrays.
    """

    name: str = "abstract"

    @abstractmethod
    def neg_log_density(self, y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def score(self, y: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def score_deriv(self, y: np.ndarray) -> np.ndarray:
        pass


class InfomaxScore(ScoreModel):
    """
    The standard Infomax density p(y) = 1 / (4 cosh²(y/2)), with score tanh(y/2).

    The additive constant of -log p is dropped so that the loss of the identity
    on all-zero sources is exactly 0.
    """

    name = "infomax"

    def neg_log_density(self, y: np.ndarray) -> np.ndarray:
        # 2·log cosh(y/2) = |y| + 2·log(1 + exp(-|y|)) - 2·log 2, finite for any finite y.
        abs_y = np.abs(y)
        return abs_y + 2.0 * np.log1p(np.exp(-abs_y)) - 2.0 * LOG_2

    def score(self, y: np.ndarray) -> np.ndarray:
        return np.tanh(0.5 * y)

    def score_deriv(self, y: np.ndarray) -> np.ndarray:
        # 1 / (2 cosh²(y/2)) written with exp(-|y|) to avoid overflow.
        e = np.exp(-np.abs(y))
        return 2.0 * e / (1.0 + e) ** 2


INFOMAX = InfomaxScore()


def score(y):
    """The Infomax score tanh(y/2); odd, with values in (-1, 1)."""
    return INFOMAX.score(y)


def score_deriv(y):
    """Derivative of the Infomax score, 1/(2 cosh²(y/2)); even, with values in (0, 1/2]."""
    return INFOMAX.score_deriv(y)


def log_abs_det(W: np.ndarray) -> float:
    """
    log|det W|.

    Raises:
        NonFiniteLossError: If W is singular.
    """
    sign, logdet = np.linalg.slogdet(W)
    if sign == 0 or not np.isfinite(logdet):
        raise NonFiniteLossError("Unmixing matrix is singular; the loss is not finite.")
    return float(logdet)


def loss(W: np.ndarray, Y: np.ndarray, score_model: ScoreModel = INFOMAX) -> float:
    """
    Negative averaged log-likelihood of the sources Y = W·X:

        L(W) = -log|det W| - (1/T) Σ_t Σ_i log p(Y_it)

    with the density constant set to zero.

    Args:
        W (np.ndarray): The N×N unmixing matrix.
        Y (np.ndarray): The N×T current sources.
        score_model (ScoreModel): Source density, Infomax by default.

    Returns:
        float: The loss value.

    Raises:
        NonFiniteLossError: If W is singular or the density term is not finite.
    """
    value = -log_abs_det(W) + np.sum(score_model.neg_log_density(Y)) / Y.shape[1]
    if not np.isfinite(value):
        raise NonFiniteLossError(f"Loss evaluated to {value}.")
    return float(value)


def relative_gradient(Y: np.ndarray, score_model: ScoreModel = INFOMAX, psi_y: np.ndarray | None = None) -> np.ndarray:
    """
    Relative gradient G = (1/T)·ψ(Y)·Yᵀ - I.

    Args:
        Y (np.ndarray): The N×T current sources.
        score_model (ScoreModel): Source density, Infomax by default.
        psi_y (np.ndarray, optional): ψ(Y) if the caller already has it.

    Returns:
        np.ndarray: The N×N relative gradient.
    """
    n_sources, n_samples = Y.shape
    if psi_y is None:
        psi_y = score_model.score(Y)
    return psi_y @ Y.T / n_samples - np.eye(n_sources)


@dataclass
class UnmixingState:
    """
    The current point of an ICA solver.

    Attributes:
        W (np.ndarray): N×N unmixing matrix.
        Y (np.ndarray): N×T sources, kept equal to W·X through relative updates.
        loss (float): Loss at W.
        gradient (np.ndarray | None): Relative gradient at W, once computed.
    """

    W: np.ndarray
    Y: np.ndarray
    loss: float
    gradient: np.ndarray | None = None

    @classmethod
    def from_data(cls, X: np.ndarray, W: np.ndarray, score_model: ScoreModel = INFOMAX) -> "UnmixingState":
        Y = W @ X
        return cls(W=W, Y=Y, loss=loss(W, Y, score_model))

    def drift(self, X: np.ndarray) -> float:
        """Relative Frobenius distance between the tracked Y and a fresh W·X."""
        reference = self.W @ X
        return float(np.linalg.norm(self.Y - reference) / max(np.linalg.norm(reference), np.finfo(float).tiny))
