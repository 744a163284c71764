from dataclasses import dataclass

import numpy as np
from scipy import linalg

from icabench.utils.errors import InvalidDataError, RankDeficiencyError
from icabench.utils.logger import get_logger

logger = get_logger(__name__)

# Covariance eigenvalues below this fraction of the largest one mean the
# channels are numerically collinear.
RANK_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DataMatrix:
    """
    An N×T matrix of signals, one channel per row.

    Attributes:
        values (np.ndarray): The (n_channels, n_samples) float64 array.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidDataError(f"Expected a 2-D matrix, got an array with {values.ndim} dimension(s).")
        n_channels, n_samples = values.shape
        if n_channels < 2:
            raise InvalidDataError(f"At least 2 channels are required, got {n_channels}.")
        if n_samples < n_channels:
            raise InvalidDataError(
                f"Need at least as many samples as channels, got T={n_samples} < N={n_channels}."
            )
        if not np.all(np.isfinite(values)):
            bad_rows = np.unique(np.nonzero(~np.isfinite(values))[0])
            raise InvalidDataError(f"Non-finite entries in row(s) {bad_rows.tolist()}.")
        object.__setattr__(self, "values", values)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def as_data_matrix(data) -> DataMatrix:
    """Wraps an array in a DataMatrix (validating it); DataMatrix inputs pass through."""
    if isinstance(data, DataMatrix):
        return data
    return DataMatrix(np.array(data, dtype=np.float64))


@dataclass(frozen=True)
class WhiteningTransform:
    """
    The affine map x -> matrix @ (x - means) that whitens the data it was fit on.

    Attributes:
        matrix (np.ndarray): The symmetric N×N inverse square root of the covariance.
        means (np.ndarray): Row means subtracted before applying `matrix`.
    """

    matrix: np.ndarray
    means: np.ndarray

    def apply(self, data) -> np.ndarray:
        """
        Centers and whitens new raw data with the fitted parameters.

        Args:
            data (array-like): An (N, T') matrix in the original sensor space.

        Returns:
            np.ndarray: The transformed (N, T') matrix.
        """
        values = np.asarray(data, dtype=np.float64)
        return self.matrix @ (values - self.means[:, None])

    def sensor_unmixing(self, unmixing: np.ndarray) -> np.ndarray:
        """Returns the unmixing matrix expressed in the original sensor space, W·C^(-1/2)."""
        return unmixing @ self.matrix


def center(data) -> tuple[DataMatrix, np.ndarray]:
    """
    Subtracts its mean from every row.

    The mean is removed twice: the second pass takes out the rounding residue
    left by the first, so output row means sit at the level of machine epsilon
    times the row magnitude.

    Args:
        data (DataMatrix | array-like): The N×T data.

    Returns:
        tuple[DataMatrix, np.ndarray]: The centered data and the length-N vector of
        subtracted means.

    Raises:
        InvalidDataError: If the input has non-finite entries or a bad shape.
    """
    values = as_data_matrix(data).values

    means = values.mean(axis=1)
    centered = values - means[:, None]
    residue = centered.mean(axis=1)
    centered -= residue[:, None]
    means = means + residue

    logger.debug(f"Centered {values.shape[0]}x{values.shape[1]} data, max |mean|={np.max(np.abs(means)):.3e}")
    return DataMatrix(centered), means


def whiten(data) -> tuple[DataMatrix, WhiteningTransform]:
    """
    Multiplies centered data by the symmetric inverse square root of its
    empirical covariance C = X·Xᵀ/T.

    C^(-1/2) = U·diag(λ^(-1/2))·Uᵀ from the symmetric eigendecomposition of C.

    Args:
        data (DataMatrix | array-like): Centered N×T data.

    Returns:
        tuple[DataMatrix, WhiteningTransform]: The whitened data (empirical covariance
        equal to the identity) and the transform. The transform's `means` are the
        row means of the input, which are zero for centered data.

    Raises:
        RankDeficiencyError: If an eigenvalue of C is below 1e-12 times the largest.
    """
    matrix = as_data_matrix(data)
    values = matrix.values
    n_samples = matrix.n_samples

    covariance = values @ values.T / n_samples
    eigenvalues, eigenvectors = linalg.eigh(covariance)

    largest = eigenvalues[-1]
    degenerate = int(np.sum(eigenvalues < RANK_TOLERANCE * largest)) if largest > 0 else matrix.n_channels
    if degenerate:
        msg = (
            f"Covariance is rank deficient: {degenerate} of {matrix.n_channels} channel direction(s) "
            f"have eigenvalue below {RANK_TOLERANCE:g} x the largest."
        )
        logger.error(msg)
        raise RankDeficiencyError(msg, n_degenerate=degenerate)

    inv_sqrt = (eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T
    # Exact symmetry keeps the transform a true SPD root.
    inv_sqrt = 0.5 * (inv_sqrt + inv_sqrt.T)

    whitened = inv_sqrt @ values
    logger.debug(
        f"Whitened {matrix.n_channels} channels, covariance condition number={largest / eigenvalues[0]:.3e}"
    )
    return DataMatrix(whitened), WhiteningTransform(matrix=inv_sqrt, means=values.mean(axis=1))


def preprocess(data) -> tuple[DataMatrix, WhiteningTransform]:
    """
    Centers then whitens raw data; the returned transform records the subtracted means.

    Args:
        data (DataMatrix | array-like): Raw N×T observations.

    Returns:
        tuple[DataMatrix, WhiteningTransform]: Whitened data and the full affine transform.
    """
    centered, means = center(data)
    whitened, transform = whiten(centered)
    return whitened, WhiteningTransform(matrix=transform.matrix, means=means)
