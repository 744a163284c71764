from collections import deque
from collections.abc import Callable, Iterator

import numpy as np

from icabench.model.curvature import BlockDiagApprox, block_solve

# Pairs with ⟨s|y⟩ <= CURVATURE_FLOOR·‖s‖·‖y‖ are not stored.
CURVATURE_FLOOR = 1e-10


def inner(A: np.ndarray, B: np.ndarray) -> float:
    """Frobenius inner product ⟨A|B⟩ = Σ_ij A_ij·B_ij."""
    return float(np.vdot(A, B))


class LbfgsMemory:
    """
    Bounded history of (s, y, rho) pairs, oldest first.

    s is the accepted relative step α·p, y the gradient difference across it
    and rho = 1/⟨s|y⟩.
    """

    def __init__(self, size: int):
        self.size = size
        self._pairs: deque[tuple[np.ndarray, np.ndarray, float]] = deque(maxlen=size)

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        """
        Stores a pair if it carries positive curvature, evicting the oldest when full.

        Returns:
            bool: True if the pair was stored.
        """
        if self.size == 0:
            return False
        sy = inner(s, y)
        if not sy > CURVATURE_FLOOR * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self._pairs.append((s, y, 1.0 / sy))
        return True

    def reset(self) -> None:
        self._pairs.clear()

    def __len__(self) -> int:
        return len(self._pairs)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray, float]]:
        return iter(self._pairs)

    @property
    def newest(self) -> tuple[np.ndarray, np.ndarray, float] | None:
        return self._pairs[-1] if self._pairs else None


def two_loop_recursion(G: np.ndarray, memory: LbfgsMemory, seed: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """
    L-BFGS two-loop recursion on matrices under the Frobenius inner product.

    Args:
        G (np.ndarray): Current relative gradient.
        memory (LbfgsMemory): Stored pairs.
        seed (Callable): Applies the initial inverse-Hessian guess to a matrix.

    Returns:
        np.ndarray: The search direction.
    """
    pairs = list(memory)
    q = -G
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * inner(s, q)
        alphas.append(a)
        q = q - a * y

    r = seed(q)

    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        beta = rho * inner(y, r)
        r = r + s * (a - beta)
    return r


def two_loop_direction(G: np.ndarray, memory: LbfgsMemory, precond: BlockDiagApprox) -> np.ndarray:
    """Two-loop recursion seeded with the inverse of a regularized Hessian approximation."""
    return two_loop_recursion(G, memory, lambda q: block_solve(precond, q))
