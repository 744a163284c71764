import numpy as np
import pytest

from icabench.datagen.densities import DensityKind, make_rng, sample_density
from icabench.model.curvature import (
    ApproxKind,
    BlockDiagApprox,
    approx_h1,
    approx_h2,
    block_eigenvalue_min,
    block_solve,
    full_hessian,
    hessian_free_product,
    regularize,
)
from icabench.model.infomax import INFOMAX
from icabench.preprocessing.whitening import preprocess
from icabench.solvers.line_search import relative_loss_change
from icabench.utils.errors import OracleSizeError, SingularPreconditionerError
from tests.conftest import laplace_mixture


def sources_at_random_point(n: int, t: int, seed: int) -> np.ndarray:
    _, _, observed = laplace_mixture(n, t, seed=seed)
    X = preprocess(observed)[0].values
    rng = make_rng(500 + seed)
    return (np.eye(n) + 0.2 * rng.standard_normal((n, n))) @ X


@pytest.mark.parametrize("seed", range(10))
def test_quadratic_form_matches_second_differences(seed):
    Y = sources_at_random_point(4, 1000, seed)
    E = make_rng(900 + seed).standard_normal((4, 4))
    hessian = full_hessian(Y)

    h = 1e-3
    density_0 = INFOMAX.neg_log_density(Y)
    plus, _ = relative_loss_change(Y, h * E, density_0)
    minus, _ = relative_loss_change(Y, -h * E, density_0)
    numeric = (plus + minus) / h ** 2

    assert abs(numeric - hessian.quadratic_form(E)) <= 1e-4 * np.sum(E ** 2)


@pytest.mark.parametrize("seed", range(10))
def test_hessian_free_product_matches_dense_contraction(seed):
    Y = sources_at_random_point(4, 1000, seed)
    M = make_rng(700 + seed).standard_normal((4, 4))

    np.testing.assert_allclose(hessian_free_product(Y, M), full_hessian(Y).apply(M), atol=1e-10)


def test_h2_is_the_block_diagonal_part_of_the_hessian():
    Y = sources_at_random_point(5, 2000, seed=3)
    dense = full_hessian(Y).to_matrix()
    approx = approx_h2(Y).to_dense()

    mask = approx != 0
    np.testing.assert_allclose(approx[mask], dense[mask], atol=1e-12)


def test_h1_shares_the_diagonal_of_h2():
    Y = sources_at_random_point(5, 2000, seed=4)

    np.testing.assert_allclose(np.diag(approx_h1(Y).a), np.diag(approx_h2(Y).a), atol=1e-12)


def test_h2_error_shrinks_with_sample_size():
    def distance(t: int) -> float:
        rng = make_rng(t)
        Y = np.vstack([sample_density(DensityKind.LAPLACE, t, rng) for _ in range(8)])
        return np.linalg.norm(full_hessian(Y).to_matrix() - approx_h2(Y).to_dense())

    assert distance(1000) >= 3 * distance(100000)


def test_forward_agrees_with_dense_matrix(rng):
    approx = BlockDiagApprox(a=rng.uniform(0.5, 2.0, (4, 4)), kind=ApproxKind.H2)
    M = rng.standard_normal((4, 4))

    np.testing.assert_allclose(approx.forward(M).ravel(), approx.to_dense() @ M.ravel(), atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_block_solve_matches_dense_solve(seed):
    rng = make_rng(seed)
    approx = regularize(BlockDiagApprox(a=rng.uniform(-1.5, 2.5, (6, 6)), kind=ApproxKind.H2), 1e-2)
    G = rng.standard_normal((6, 6))

    expected = np.linalg.solve(approx.to_dense(), G.ravel()).reshape(6, 6)

    np.testing.assert_allclose(block_solve(approx, G), expected, rtol=1e-10, atol=1e-10 * np.abs(expected).max())


def test_block_eigenvalue_matches_eigensolver(rng):
    for a, b in rng.uniform(-3, 3, (50, 2)):
        expected = np.linalg.eigvalsh(np.array([[a, 1.0], [1.0, b]]))[0]
        assert block_eigenvalue_min(a, b) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_regularization_floors_every_block(seed):
    rng = make_rng(seed)
    approx = regularize(BlockDiagApprox(a=rng.uniform(-2.0, 2.0, (6, 6)), kind=ApproxKind.H1), 1e-2)

    eigenvalues = approx.block_eigenvalues()
    off_diagonal = ~np.eye(6, dtype=bool)
    assert np.all(eigenvalues[off_diagonal] >= 1e-2 - 1e-12)
    assert np.all(1.0 + np.diag(approx.a) >= 1e-2 - 1e-12)
    assert approx.regularized and approx.lambda_min == 1e-2


def test_regularization_keeps_well_conditioned_blocks():
    a = 2.0 * np.ones((3, 3))

    np.testing.assert_array_equal(regularize(BlockDiagApprox(a=a, kind=ApproxKind.H2), 1e-2).a, a)


def test_zero_sources_give_zero_coefficients():
    Y = np.zeros((3, 50))

    approx = approx_h2(Y)
    regularized = regularize(approx, 1e-2)

    np.testing.assert_array_equal(approx.a, 0.0)
    # Blocks [[0, 1], [1, 0]] have eigenvalue -1 and are shifted by 1.01.
    np.testing.assert_allclose(regularized.a[~np.eye(3, dtype=bool)], 1.01)
    np.testing.assert_array_equal(np.diag(regularized.a), 0.0)


def test_singular_block_raises():
    with pytest.raises(SingularPreconditionerError):
        block_solve(BlockDiagApprox(a=np.ones((3, 3)), kind=ApproxKind.H2), np.eye(3))


def test_dense_hessian_respects_size_cap(rng):
    with pytest.raises(OracleSizeError):
        full_hessian(rng.standard_normal((3, 10)), cap=2)


def test_min_eigenvalue_and_shift(rng):
    hessian = full_hessian(rng.standard_normal((3, 500)))
    matrix = hessian.to_matrix()

    smallest = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))[0]

    assert hessian.min_eigenvalue() == pytest.approx(smallest, abs=1e-12)
    assert hessian.regularization_level() == pytest.approx(max(-2 * smallest, 0.0), abs=1e-12)


def unit_laplace_sources(n: int, t: int, seed: int) -> np.ndarray:
    rng = make_rng(seed)
    return np.vstack([sample_density(DensityKind.LAPLACE, t, rng) for _ in range(n)]) / np.sqrt(2.0)


def test_hessian_free_product_is_linear(rng):
    Y = sources_at_random_point(4, 1000, seed=5)
    M1, M2 = rng.standard_normal((2, 4, 4))

    combined = hessian_free_product(Y, 2.5 * M1 - 0.7 * M2)

    np.testing.assert_allclose(
        combined, 2.5 * hessian_free_product(Y, M1) - 0.7 * hessian_free_product(Y, M2), atol=1e-12
    )


def test_hessian_free_product_of_zero_sources_is_the_transpose(rng):
    M = rng.standard_normal((3, 3))

    np.testing.assert_array_equal(hessian_free_product(np.zeros((3, 50)), M), M.T)


@pytest.mark.parametrize("seed", range(5))
def test_regularization_is_idempotent(seed):
    rng = make_rng(seed)
    once = regularize(BlockDiagApprox(a=rng.uniform(-2.0, 2.0, (6, 6)), kind=ApproxKind.H2), 1e-2)

    twice = regularize(once, 1e-2)

    np.testing.assert_allclose(twice.a, once.a, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_block_solve_inverts_forward(seed):
    rng = make_rng(seed)
    approx = regularize(BlockDiagApprox(a=rng.uniform(-1.5, 2.5, (5, 5)), kind=ApproxKind.H1), 1e-2)
    M = rng.standard_normal((5, 5))

    np.testing.assert_allclose(block_solve(approx, approx.forward(M)), M, rtol=1e-10, atol=1e-10)


def test_h1_and_h2_agree_on_independent_sources():
    t = 20000
    Y = unit_laplace_sources(4, t, seed=21)
    off_diagonal = ~np.eye(4, dtype=bool)

    difference = approx_h2(Y).a - approx_h1(Y).a

    assert np.max(np.abs(difference[off_diagonal])) < 10 / np.sqrt(t)


def test_hessian_is_nearly_block_diagonal_on_independent_sources():
    t = 20000
    hessian = full_hessian(unit_laplace_sources(4, t, seed=22))
    i, j, l = np.meshgrid(np.arange(4), np.arange(4), np.arange(4), indexing="ij")

    # H_ijil = δ_jl·ĥ_ij up to sampling noise.
    cross = hessian.tensor[i, j, i, l][j != l]

    assert np.max(np.abs(cross)) < 10 / np.sqrt(t)
    rows, cols = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    np.testing.assert_allclose(
        hessian.tensor[rows, cols, rows, cols], hessian.moments[rows, cols, cols] + (rows == cols), atol=1e-12
    )
