from dataclasses import dataclass
from enum import Enum

import numpy as np

from icabench.datagen.densities import DensityKind, make_rng, sample_density
from icabench.preprocessing.whitening import DataMatrix
from icabench.utils.errors import InvalidConfigError, InvalidDataError
from icabench.utils.logger import get_logger

logger = get_logger(__name__)

SINGULAR_DET = 1e-8
MAX_MIXING_DRAWS = 10

MIXTURE_SIGMA = 0.1
MIXTURE_ALPHA_RANGE = (0.5, 1.0)


class ExperimentId(str, Enum):
    A = "A"
    B = "B"
    C = "C"


# Default (N, T) of each synthetic experiment.
EXPERIMENT_SHAPES = {
    ExperimentId.A: (50, 10000),
    ExperimentId.B: (15, 10000),
    ExperimentId.C: (40, 5000),
}


@dataclass(frozen=True)
class SyntheticProblem:
    """
    A synthetic mixture with its ground truth.

    Attributes:
        sources (np.ndarray): N×T source matrix S.
        mixing (np.ndarray): N×N mixing matrix A.
        observed (np.ndarray): N×T observations X = A·S.
        experiment_id (ExperimentId): Which experiment produced it.
        seed (int): Seed of the generator.
    """

    sources: np.ndarray
    mixing: np.ndarray
    observed: np.ndarray
    experiment_id: ExperimentId
    seed: int

    @property
    def data(self) -> DataMatrix:
        return DataMatrix(self.observed)

    @property
    def shape(self) -> tuple[int, int]:
        return self.observed.shape


def _source_rows(experiment_id: ExperimentId, n: int, t: int, rng: np.random.Generator) -> np.ndarray:
    if experiment_id is ExperimentId.A:
        return np.vstack([sample_density(DensityKind.LAPLACE, t, rng) for _ in range(n)])

    if experiment_id is ExperimentId.B:
        # Equal thirds; the remainder goes to the Laplace rows.
        third = n // 3
        kinds = (
            [DensityKind.LAPLACE] * (n - 2 * third)
            + [DensityKind.GAUSSIAN] * third
            + [DensityKind.CUBE_EXP] * third
        )
        return np.vstack([sample_density(kind, t, rng) for kind in kinds])

    alphas = np.linspace(*MIXTURE_ALPHA_RANGE, n)
    return np.vstack(
        [sample_density(DensityKind.GAUSS_MIXTURE, t, rng, alpha=float(a), sigma=MIXTURE_SIGMA) for a in alphas]
    )


def _draw_mixing(n: int, rng: np.random.Generator, seed: int) -> np.ndarray:
    for attempt in range(1, MAX_MIXING_DRAWS + 1):
        mixing = rng.standard_normal((n, n))
        if abs(np.linalg.det(mixing)) >= SINGULAR_DET:
            logger.debug(f"seed={seed}: mixing matrix condition number {np.linalg.cond(mixing):.3e}")
            return mixing
        logger.warning(f"seed={seed}: near-singular mixing matrix on draw {attempt}; drawing again")
    raise InvalidDataError(f"seed={seed}: no invertible mixing matrix after {MAX_MIXING_DRAWS} draws")


def gen_experiment(
    experiment_id: ExperimentId | str,
    seed: int,
    n: int | None = None,
    t: int | None = None,
) -> SyntheticProblem:
    """
    Generates one of the synthetic experiments.

    - A: N=50, T=10000, every source Laplace.
    - B: N=15, T=10000, a third Laplace, a third Gaussian, a third ∝ exp(-|x|³).
    - C: N=40, T=5000, source i ~ α_i·N(0, 1) + (1 - α_i)·N(0, 0.1²), α_i linearly spaced from 0.5 to 1.

    The generator is PCG64 seeded with `seed`; sources are drawn first, then the
    mixing matrix, so the result is a pure function of the arguments.

    Args:
        experiment_id (ExperimentId | str): "A", "B" or "C".
        seed (int): Generator seed.
        n (int, optional): Override of the number of sources.
        t (int, optional): Override of the number of samples.

    Returns:
        SyntheticProblem: Sources, mixing matrix and observations.

    Raises:
        InvalidConfigError: On an unknown experiment or overrides with N < 2 or T < N.
    """
    try:
        experiment_id = ExperimentId(str(experiment_id).upper())
    except ValueError as e:
        raise InvalidConfigError(f"Unknown experiment '{experiment_id}', expected A, B or C") from e

    default_n, default_t = EXPERIMENT_SHAPES[experiment_id]
    n = default_n if n is None else n
    t = default_t if t is None else t
    if n < 2 or t < n:
        raise InvalidConfigError(f"Experiment sizes need N >= 2 and T >= N, got N={n}, T={t}")

    rng = make_rng(seed)
    sources = _source_rows(experiment_id, n, t, rng)
    mixing = _draw_mixing(n, rng, seed)
    logger.debug(f"Generated experiment {experiment_id.value} with N={n}, T={t}, seed={seed}")
    return SyntheticProblem(
        sources=sources,
        mixing=mixing,
        observed=mixing @ sources,
        experiment_id=experiment_id,
        seed=seed,
    )


def recovery_index(W: np.ndarray, A: np.ndarray) -> float:
    """
    Distance from P = W·A to the set of scaled permutation matrices.

    |P| is first scaled so that every row has unit max. Each row then
    contributes (Σ_j |P_ij| - max_j |P_ij|) / max_j |P_ij|, each column the same
    with the roles swapped; the total is divided by 2N. Zero exactly when P is a
    scaled permutation.
    """
    P = np.abs(np.asarray(W) @ np.asarray(A))
    P = P / P.max(axis=1, keepdims=True)
    n = P.shape[0]
    col_max = P.max(axis=0)
    rows = np.sum(P.sum(axis=1) - 1.0)
    cols = np.sum((P.sum(axis=0) - col_max) / col_max)
    return float((rows + cols) / (2 * n))
