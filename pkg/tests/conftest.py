import numpy as np
import pytest

from icabench.datagen.densities import DensityKind, make_rng, sample_density
from icabench.preprocessing.whitening import preprocess


@pytest.fixture
def rng():
    return make_rng(0)


def laplace_mixture(n: int, t: int, seed: int):
    """Laplace sources mixed by a standard normal matrix; returns (sources, mixing, observed)."""
    rng = make_rng(seed)
    sources = np.vstack([sample_density(DensityKind.LAPLACE, t, rng) for _ in range(n)])
    mixing = rng.standard_normal((n, n))
    return sources, mixing, mixing @ sources


@pytest.fixture
def small_problem():
    """Whitened N=5, T=5000 Laplace mixture with its transform and mixing matrix."""
    _, mixing, observed = laplace_mixture(5, 5000, seed=7)
    whitened, transform = preprocess(observed)
    return whitened, transform, mixing
