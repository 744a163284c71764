from enum import Enum

import numpy as np

from icabench.utils.errors import SamplerStallError

# Rejection sampling of exp(-|x|³) from a standard normal proposal:
# exp(-|x|³ + x²/2) peaks at |x| = 1/3 with value exp(1/54), so
# exp(-|x|³) <= exp(1/54)·exp(-x²/2) everywhere.
CUBE_EXP_LOG_ENVELOPE = 1.0 / 54.0
# Acceptance rate 2Γ(4/3) / (exp(1/54)·√(2π)) ≈ 0.70.
CUBE_EXP_ACCEPTANCE = 0.6999
STALL_FACTOR = 1000


class DensityKind(str, Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    CUBE_EXP = "cube_exp"
    GAUSS_MIXTURE = "gauss_mixture"


def make_rng(seed: int) -> np.random.Generator:
    """The generator used everywhere in icabench: NumPy's PCG64 with an explicit seed."""
    return np.random.Generator(np.random.PCG64(seed))


def _laplace(n: int, rng: np.random.Generator) -> np.ndarray:
    # Inverse CDF of p(x) = exp(-|x|)/2 applied to u uniform on (-1/2, 1/2).
    u = rng.random(n) - 0.5
    return -np.sign(u) * np.log1p(-2.0 * np.abs(u))


def _cube_exp(n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(n)
    filled = 0
    drawn = 0
    budget = STALL_FACTOR * n / CUBE_EXP_ACCEPTANCE
    while filled < n:
        k = max(n - filled, 16)
        proposal = rng.standard_normal(k)
        u = rng.random(k)
        drawn += k
        log_ratio = -np.abs(proposal) ** 3 + 0.5 * proposal ** 2 - CUBE_EXP_LOG_ENVELOPE
        accepted = proposal[np.log(u) <= log_ratio]
        take = min(accepted.size, n - filled)
        out[filled:filled + take] = accepted[:take]
        filled += take
        if filled < n and drawn > budget:
            raise SamplerStallError(
                f"cube_exp sampler drew {drawn} proposals for {filled}/{n} samples; the envelope is broken"
            )
    return out


def _gauss_mixture(n: int, rng: np.random.Generator, alpha: float, sigma: float) -> np.ndarray:
    wide = rng.random(n) < alpha
    return np.where(wide, 1.0, sigma) * rng.standard_normal(n)


def sample_density(
    kind: DensityKind | str,
    n: int,
    rng: np.random.Generator,
    alpha: float | None = None,
    sigma: float | None = None,
) -> np.ndarray:
    """
    Draws n i.i.d. samples from one of the synthetic source densities.

    - laplace: p(x) = exp(-|x|)/2, by inverse CDF.
    - gaussian: standard normal.
    - cube_exp: p(x) ∝ exp(-|x|³), by rejection from a standard normal proposal.
    - gauss_mixture: α·N(0, 1) + (1 - α)·N(0, σ²), component chosen by a Bernoulli(α) draw.

    Args:
        kind (DensityKind | str): Density name.
        n (int): Number of samples.
        rng (np.random.Generator): Source of randomness.
        alpha (float, optional): Mixture weight of N(0, 1), in [0, 1] (gauss_mixture only).
        sigma (float, optional): Standard deviation of the narrow component (gauss_mixture only).

    Returns:
        np.ndarray: The length-n sample.

    Raises:
        ValueError: On unknown kinds or invalid mixture parameters.
        SamplerStallError: If the rejection sampler far exceeds its expected number of draws.
    """
    kind = DensityKind(kind)
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")

    if kind is DensityKind.LAPLACE:
        return _laplace(n, rng)
    if kind is DensityKind.GAUSSIAN:
        return rng.standard_normal(n)
    if kind is DensityKind.CUBE_EXP:
        return _cube_exp(n, rng)

    if alpha is None or sigma is None:
        raise ValueError("gauss_mixture needs both alpha and sigma")
    if not 0.0 <= alpha <= 1.0 or not sigma > 0:
        raise ValueError(f"invalid mixture parameters alpha={alpha}, sigma={sigma}")
    return _gauss_mixture(n, rng, alpha, sigma)
