import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from icabench.datagen import densities, experiments
from icabench.datagen.densities import DensityKind, make_rng, sample_density
from icabench.datagen.experiments import ExperimentId, gen_experiment, recovery_index
from icabench.utils.errors import InvalidConfigError, InvalidDataError, SamplerStallError

N_SAMPLES = 100000


def test_laplace_moments_and_tail(rng):
    x = sample_density(DensityKind.LAPLACE, N_SAMPLES, rng)

    assert abs(x.mean()) < 4 * np.sqrt(2 / N_SAMPLES)
    assert abs(np.mean(x ** 2) - 2.0) < 4 * np.sqrt(20 / N_SAMPLES)
    tail = np.exp(-3.0)
    assert abs(np.mean(np.abs(x) > 3.0) - tail) < 4 * np.sqrt(tail * (1 - tail) / N_SAMPLES)


def test_cube_exp_second_moment(rng):
    def moment(k: int) -> float:
        mass = quad(lambda x: np.exp(-abs(x) ** 3), -np.inf, np.inf)[0]
        return quad(lambda x: x ** k * np.exp(-abs(x) ** 3), -np.inf, np.inf)[0] / mass

    x = sample_density(DensityKind.CUBE_EXP, N_SAMPLES, rng)

    second, fourth = moment(2), moment(4)
    assert x.shape == (N_SAMPLES,)
    assert abs(np.mean(x ** 2) - second) < 4 * np.sqrt((fourth - second ** 2) / N_SAMPLES)


def test_cube_exp_stall_is_reported(rng, monkeypatch):
    monkeypatch.setattr(densities, "CUBE_EXP_LOG_ENVELOPE", 50.0)

    with pytest.raises(SamplerStallError):
        sample_density(DensityKind.CUBE_EXP, 10, rng)


def test_mixture_with_unit_weight_is_gaussian(rng):
    x = sample_density(DensityKind.GAUSS_MIXTURE, 20000, rng, alpha=1.0, sigma=0.1)

    assert stats.kstest(x, "norm").pvalue > 1e-3


def test_mixture_with_zero_weight_is_narrow(rng):
    x = sample_density(DensityKind.GAUSS_MIXTURE, 20000, rng, alpha=0.0, sigma=0.1)

    assert np.std(x) == pytest.approx(0.1, rel=0.05)


@pytest.mark.parametrize("alpha, sigma", [(None, 0.1), (0.5, None), (1.5, 0.1), (0.5, 0.0)])
def test_mixture_parameters_are_checked(rng, alpha, sigma):
    with pytest.raises(ValueError):
        sample_density(DensityKind.GAUSS_MIXTURE, 10, rng, alpha=alpha, sigma=sigma)


def test_unknown_density_is_rejected(rng):
    with pytest.raises(ValueError):
        sample_density("cauchy", 10, rng)


def test_experiment_a_sources_are_unit_laplace():
    problem = gen_experiment("A", seed=0)

    assert problem.shape == (50, 10000)
    assert problem.experiment_id is ExperimentId.A
    assert abs(np.mean(problem.sources ** 2) - 2.0) < 4 * np.sqrt(20 / problem.sources.size)
    np.testing.assert_allclose(problem.observed, problem.mixing @ problem.sources)


def test_experiment_b_rows_follow_the_density_order():
    problem = gen_experiment("B", seed=3, n=7)

    variances = np.mean(problem.sources ** 2, axis=1)
    assert problem.shape == (7, 10000)
    np.testing.assert_allclose(variances[:3], 2.0, atol=0.2)
    np.testing.assert_allclose(variances[3:5], 1.0, atol=0.1)
    np.testing.assert_allclose(variances[5:], 0.3733, atol=0.03)


def test_experiment_b_default_shape():
    assert gen_experiment("b", seed=1).shape == (15, 10000)


def test_experiment_c_moves_from_peaked_to_gaussian():
    problem = gen_experiment("C", seed=2)

    kurtosis = stats.kurtosis(problem.sources, axis=1, fisher=False)
    assert problem.shape == (40, 5000)
    assert abs(kurtosis[-1] - 3.0) < 4 * np.sqrt(24 / 5000)
    assert kurtosis[0] > 4.5


def test_generation_is_deterministic():
    first = gen_experiment("B", seed=5, n=6, t=500)
    second = gen_experiment("B", seed=5, n=6, t=500)
    other = gen_experiment("B", seed=6, n=6, t=500)

    np.testing.assert_array_equal(first.observed, second.observed)
    np.testing.assert_array_equal(first.mixing, second.mixing)
    assert not np.array_equal(first.observed, other.observed)


@pytest.mark.parametrize("experiment_id, n, t", [("D", None, None), ("A", 1, 100), ("A", 10, 5)])
def test_invalid_experiments_are_rejected(experiment_id, n, t):
    with pytest.raises(InvalidConfigError):
        gen_experiment(experiment_id, seed=0, n=n, t=t)


def test_singular_mixing_draws_give_up(monkeypatch):
    monkeypatch.setattr(experiments, "SINGULAR_DET", np.inf)

    with pytest.raises(InvalidDataError):
        gen_experiment("A", seed=0, n=3, t=50)


def test_recovery_index_of_the_inverse_is_zero(rng):
    A = rng.standard_normal((6, 6))

    assert recovery_index(np.linalg.inv(A), A) == pytest.approx(0.0, abs=1e-10)


def test_recovery_index_ignores_scale_and_permutation(rng):
    A = rng.standard_normal((4, 4))
    scaled_permutation = np.diag([2.0, -0.5, 3.0, 1.0]) @ np.eye(4)[[2, 0, 3, 1]]

    assert recovery_index(scaled_permutation @ np.linalg.inv(A), A) == pytest.approx(0.0, abs=1e-10)


def test_recovery_index_of_a_uniform_product():
    assert recovery_index(np.ones((3, 3)), np.eye(3)) == pytest.approx(2.0)


def test_recovery_index_normalizes_rows_first():
    P = np.array([[1.0, 0.5], [0.0, 100.0]])

    assert recovery_index(P, np.eye(2)) == pytest.approx(0.25)
    assert recovery_index(np.diag([3.0, 0.01]) @ P, np.eye(2)) == pytest.approx(0.25)


def test_recovery_index_of_two_by_two_ones_is_one():
    assert recovery_index(np.ones((2, 2)), np.eye(2)) == pytest.approx(1.0)
