"""
Second-order information of the Infomax likelihood.

The relative Hessian has the structure H_ijkl = δ_il·δ_jk + δ_ik·ĥ_ijl with
ĥ_ijl = Ê[ψ'(y_i)·y_j·y_l]. The two block-diagonal approximations keep only
the (ij, ji) pairs:

    H̃_ijkl = δ_il·δ_jk + δ_ik·δ_jl·a_ij

and are stored as the N×N coefficient matrix `a`. With this layout the
diagonal entry of the approximation is H̃_iiii = 1 + a_ii.
"""
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy import linalg

from icabench.model.infomax import INFOMAX, ScoreModel
from icabench.utils.config import get_settings
from icabench.utils.errors import OracleSizeError, SingularPreconditionerError
from icabench.utils.logger import get_logger

logger = get_logger(__name__)


class ApproxKind(str, Enum):
    H1 = "h1"
    H2 = "h2"


@dataclass(frozen=True)
class FullHessian:
    """
    The dense relative Hessian.

    Attributes:
        tensor (np.ndarray): N×N×N×N array of H_ijkl.
        moments (np.ndarray): N×N×N array of ĥ_ijl it was assembled from.
    """

    tensor: np.ndarray
    moments: np.ndarray

    @property
    def n_sources(self) -> int:
        return self.tensor.shape[0]

    def apply(self, M: np.ndarray) -> np.ndarray:
        """(H·M)_ij = Σ_kl H_ijkl·M_kl."""
        return np.einsum("ijkl,kl->ij", self.tensor, M)

    def quadratic_form(self, E: np.ndarray) -> float:
        """⟨E|H|E⟩."""
        return float(np.sum(E * self.apply(E)))

    def to_matrix(self) -> np.ndarray:
        """The N²×N² operator acting on row-major vectorized matrices."""
        n_sq = self.n_sources ** 2
        return self.tensor.reshape(n_sq, n_sq)

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the symmetrized N²×N² operator (H + Hᵀ)/2."""
        matrix = self.to_matrix()
        return float(linalg.eigvalsh(0.5 * (matrix + matrix.T), subset_by_index=[0, 0])[0])

    def regularization_level(self) -> float:
        """Shift λ making H + λ·Id positive definite: -2·λ_m when λ_m < 0, else 0."""
        smallest = self.min_eigenvalue()
        return -2.0 * smallest if smallest < 0 else 0.0


@dataclass(frozen=True)
class BlockDiagApprox:
    """
    A block-diagonal Hessian approximation (H̃¹ or H̃²).

    Attributes:
        a (np.ndarray): N×N coefficients; a_ij = H̃_ijij off the diagonal and
            a_ii = H̃_iiii - 1 on it.
        kind (ApproxKind): Which approximation produced the coefficients.
        regularized (bool): Whether `regularize` has been applied.
        lambda_min (float | None): Eigenvalue floor used by the regularization.
    """

    a: np.ndarray
    kind: ApproxKind
    regularized: bool = False
    lambda_min: float | None = None

    @property
    def n_sources(self) -> int:
        return self.a.shape[0]

    def forward(self, M: np.ndarray) -> np.ndarray:
        """(H̃·M)_ij = a_ij·M_ij + M_ji (on the diagonal: (1 + a_ii)·M_ii)."""
        return self.a * M + M.T

    def block_eigenvalues(self) -> np.ndarray:
        """Matrix of smallest eigenvalues of every 2×2 block [[a_ij, 1], [1, a_ji]]."""
        return block_eigenvalue_min(self.a, self.a.T)

    def to_dense(self) -> np.ndarray:
        """The N²×N² matrix of the approximation, for checks against dense algebra."""
        n = self.n_sources
        tensor = np.zeros((n, n, n, n))
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        tensor[i, j, i, j] += self.a
        tensor[i, j, j, i] += 1.0
        return tensor.reshape(n * n, n * n)


def _check_oracle_size(n_sources: int, cap: int | None) -> None:
    cap = get_settings().oracle_cap if cap is None else cap
    if n_sources > cap:
        raise OracleSizeError(
            f"Dense Hessian refused for N={n_sources} (cap {cap}); use hessian_free_product instead."
        )


def full_hessian(Y: np.ndarray, score_model: ScoreModel = INFOMAX, cap: int | None = None) -> FullHessian:
    """
    Builds the exact relative Hessian H_ijkl = δ_il·δ_jk + δ_ik·ĥ_ijl.

    Cost is Θ(N³×T); meant for small N (test oracle and the regularization level
    of truncated Newton).

    Args:
        Y (np.ndarray): N×T sources.
        score_model (ScoreModel): Source density.
        cap (int, optional): Largest accepted N; defaults to ICABENCH_ORACLE_CAP.

    Returns:
        FullHessian: The tensor and its moments.

    Raises:
        OracleSizeError: If N exceeds the cap.
    """
    n_sources, n_samples = Y.shape
    _check_oracle_size(n_sources, cap)

    psi_d = score_model.score_deriv(Y)
    moments = np.empty((n_sources, n_sources, n_sources))
    for i in range(n_sources):
        moments[i] = (psi_d[i] * Y) @ Y.T / n_samples

    tensor = np.zeros((n_sources,) * 4)
    idx = np.arange(n_sources)
    # δ_ik·ĥ_ijl
    tensor[idx, :, idx, :] = moments
    # δ_il·δ_jk
    i, j = np.meshgrid(idx, idx, indexing="ij")
    tensor[i, j, j, i] += 1.0

    return FullHessian(tensor=tensor, moments=moments)


def hessian_free_product(
    Y: np.ndarray,
    M: np.ndarray,
    score_model: ScoreModel = INFOMAX,
    psi_d: np.ndarray | None = None,
) -> np.ndarray:
    """
    Exact Hessian applied to M without forming the tensor:

        H·M = Mᵀ + (1/T)·[ψ'(Y) ⊙ (M·Y)]·Yᵀ

    Args:
        Y (np.ndarray): N×T sources.
        M (np.ndarray): N×N direction.
        score_model (ScoreModel): Source density.
        psi_d (np.ndarray, optional): ψ'(Y) if already computed.

    Returns:
        np.ndarray: The N×N product.
    """
    if psi_d is None:
        psi_d = score_model.score_deriv(Y)
    return M.T + (psi_d * (M @ Y)) @ Y.T / Y.shape[1]


def approx_h2(Y: np.ndarray, score_model: ScoreModel = INFOMAX, psi_d: np.ndarray | None = None) -> BlockDiagApprox:
    """
    H̃² coefficients a_ij = ĥ_ij = Ê[ψ'(y_i)·y_j²], a Θ(N²×T) product.

    Args:
        Y (np.ndarray): N×T sources.
        score_model (ScoreModel): Source density.
        psi_d (np.ndarray, optional): ψ'(Y) if already computed.

    Returns:
        BlockDiagApprox: The (unregularized) approximation.
    """
    if psi_d is None:
        psi_d = score_model.score_deriv(Y)
    a = psi_d @ (Y ** 2).T / Y.shape[1]
    return BlockDiagApprox(a=a, kind=ApproxKind.H2)


def approx_h1(Y: np.ndarray, score_model: ScoreModel = INFOMAX, psi_d: np.ndarray | None = None) -> BlockDiagApprox:
    """
    H̃¹ coefficients a_ij = ĥ_i·σ̂_j² off the diagonal and a_ii = Ê[ψ'(y_i)·y_i²].

    Only Θ(N×T) moments are needed: ĥ_i = Ê[ψ'(y_i)] and σ̂_j² = Ê[y_j²].

    Args:
        Y (np.ndarray): N×T sources.
        score_model (ScoreModel): Source density.
        psi_d (np.ndarray, optional): ψ'(Y) if already computed.

    Returns:
        BlockDiagApprox: The (unregularized) approximation.
    """
    if psi_d is None:
        psi_d = score_model.score_deriv(Y)
    y_sq = Y ** 2
    h_i = psi_d.mean(axis=1)
    sigma_sq = y_sq.mean(axis=1)
    a = np.outer(h_i, sigma_sq)
    np.fill_diagonal(a, np.mean(psi_d * y_sq, axis=1))
    return BlockDiagApprox(a=a, kind=ApproxKind.H1)


def compute_approx(
    kind: ApproxKind | str,
    Y: np.ndarray,
    score_model: ScoreModel = INFOMAX,
    psi_d: np.ndarray | None = None,
) -> BlockDiagApprox:
    """Dispatches to approx_h1 or approx_h2."""
    if ApproxKind(kind) is ApproxKind.H1:
        return approx_h1(Y, score_model, psi_d)
    return approx_h2(Y, score_model, psi_d)


def block_eigenvalue_min(a_ij, a_ji):
    """Smallest eigenvalue of [[a_ij, 1], [1, a_ji]]: (a_ij + a_ji - sqrt((a_ij - a_ji)² + 4)) / 2."""
    return 0.5 * (a_ij + a_ji - np.sqrt((a_ij - a_ji) ** 2 + 4.0))


def regularize(approx: BlockDiagApprox, lambda_min: float) -> BlockDiagApprox:
    """
    Shifts every 2×2 block whose smallest eigenvalue is below lambda_min so that
    it becomes exactly lambda_min, and raises diagonal entries 1 + a_ii to at
    least lambda_min. Blocks already above the floor are left untouched.

    Args:
        approx (BlockDiagApprox): The approximation to regularize.
        lambda_min (float): Positive eigenvalue floor.

    Returns:
        BlockDiagApprox: A new, regularized approximation.
    """
    if lambda_min <= 0:
        raise ValueError(f"lambda_min must be positive, got {lambda_min}")

    a = approx.a.copy()
    eigenvalues = block_eigenvalue_min(a, a.T)
    problematic = eigenvalues < lambda_min
    np.fill_diagonal(problematic, False)
    # The mask is symmetric, so both a_ij and a_ji receive the same shift.
    a[problematic] += lambda_min - eigenvalues[problematic]

    diag = np.diag(a).copy()
    low = 1.0 + diag < lambda_min
    diag[low] = lambda_min - 1.0
    np.fill_diagonal(a, diag)

    n_shifted = int(problematic.sum()) // 2
    if n_shifted or low.any():
        logger.debug(f"Regularized {n_shifted} block(s) and {int(low.sum())} diagonal term(s) to {lambda_min:g}")

    return replace(approx, a=a, regularized=True, lambda_min=lambda_min)


def block_solve(approx: BlockDiagApprox, G: np.ndarray) -> np.ndarray:
    """
    Solves H̃·P = G block by block in Θ(N²):

        P_ij = (a_ji·G_ij - G_ji) / (a_ij·a_ji - 1)   for i ≠ j
        P_ii = G_ii / (1 + a_ii)

    Args:
        approx (BlockDiagApprox): A regularized approximation.
        G (np.ndarray): N×N right-hand side.

    Returns:
        np.ndarray: H̃⁻¹·G.

    Raises:
        SingularPreconditionerError: If a block is singular.
    """
    a = approx.a
    determinants = a * a.T - 1.0
    diag = 1.0 + np.diag(a)
    np.fill_diagonal(determinants, 1.0)

    if np.any(determinants == 0.0) or np.any(diag == 0.0):
        raise SingularPreconditionerError(
            "Hessian approximation has a singular block; regularize it before solving."
        )

    solution = (a.T * G - G.T) / determinants
    np.fill_diagonal(solution, np.diag(G) / diag)
    return solution
