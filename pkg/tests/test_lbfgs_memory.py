import numpy as np
import pytest

from icabench.model.curvature import ApproxKind, BlockDiagApprox, block_solve, regularize
from icabench.solvers.lbfgs_memory import LbfgsMemory, inner, two_loop_direction, two_loop_recursion


def spd_operator(rng, n: int):
    """A random SPD map on n×n matrices."""
    B = rng.standard_normal((n * n, n * n))
    A = B @ B.T + n * n * np.eye(n * n)
    return lambda M: (A @ M.ravel()).reshape(n, n)


def test_inner_is_frobenius(rng):
    A, B = rng.standard_normal((2, 3, 3))
    assert inner(A, B) == pytest.approx(np.sum(A * B))


def test_memory_evicts_oldest_pair(rng):
    memory = LbfgsMemory(2)
    pairs = []
    for _ in range(3):
        s = rng.standard_normal((2, 2))
        pairs.append(s)
        assert memory.push(s, s)

    assert len(memory) == 2
    stored = [s for s, _, _ in memory]
    np.testing.assert_array_equal(stored[0], pairs[1])
    np.testing.assert_array_equal(memory.newest[0], pairs[2])


def test_memory_rejects_pairs_without_positive_curvature(rng):
    memory = LbfgsMemory(3)
    s = rng.standard_normal((2, 2))

    assert not memory.push(s, -s)
    assert not memory.push(s, np.zeros((2, 2)))
    assert len(memory) == 0


def test_zero_size_memory_stores_nothing(rng):
    memory = LbfgsMemory(0)
    s = rng.standard_normal((2, 2))

    assert not memory.push(s, s)
    assert memory.newest is None


def test_direction_satisfies_newest_secant_equation(rng):
    apply_A = spd_operator(rng, 3)
    memory = LbfgsMemory(5)
    for _ in range(4):
        s = rng.standard_normal((3, 3))
        memory.push(s, apply_A(s))

    s_new, y_new, _ = memory.newest
    # The direction is -H·G, so feeding G = -y returns H·y, which must equal s.
    result = two_loop_recursion(-y_new, memory, lambda q: 0.5 * q)

    np.testing.assert_allclose(result, s_new, atol=1e-10)


def test_empty_memory_reduces_to_preconditioned_gradient(rng):
    approx = regularize(BlockDiagApprox(a=rng.uniform(0.0, 2.0, (4, 4)), kind=ApproxKind.H2), 1e-2)
    G = rng.standard_normal((4, 4))

    np.testing.assert_array_equal(two_loop_direction(G, LbfgsMemory(7), approx), block_solve(approx, -G))


def test_reset_clears_memory(rng):
    memory = LbfgsMemory(3)
    s = rng.standard_normal((2, 2))
    memory.push(s, s)

    memory.reset()

    assert len(memory) == 0
