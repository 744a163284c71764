from dataclasses import asdict, dataclass

import numpy as np

from icabench.model.infomax import UnmixingState, loss, relative_gradient
from icabench.solvers.base_solver import BaseSolver, TraceRecord
from icabench.solvers.lbfgs_memory import inner
from icabench.utils.errors import InvalidConfigError, NonFiniteLossError
from icabench.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class InfomaxConfig:
    """
    Stochastic Infomax parameters.

    Attributes:
        batch_size (int): Mini-batch size T'.
        alpha0 (float): Initial step size.
        anneal (float): Factor ρ in (0, 1) applied to the step when consecutive
            batch gradients are more than `angle_threshold` apart.
        angle_threshold (float): Angle θ in radians.
        max_passes (int): Passes over the data.
        seed (int): Seed of the batch shuffling.
        tol (float): Stop when the full-data gradient norm reaches tol.
    """

    batch_size: int = 256
    alpha0: float = 0.01
    anneal: float = 0.9
    angle_threshold: float = float(np.deg2rad(60.0))
    max_passes: int = 200
    seed: int = 0
    tol: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.alpha0 > 0:
            raise InvalidConfigError(f"alpha0 must be > 0, got {self.alpha0}")
        if not 0 < self.anneal < 1:
            raise InvalidConfigError(f"anneal must be in (0, 1), got {self.anneal}")
        if not 0 < self.angle_threshold <= np.pi:
            raise InvalidConfigError(f"angle_threshold must be in (0, pi], got {self.angle_threshold}")
        if self.max_passes < 0:
            raise InvalidConfigError(f"max_passes must be >= 0, got {self.max_passes}")
        if not self.tol > 0:
            raise InvalidConfigError(f"tol must be > 0, got {self.tol}")

    def to_dict(self) -> dict:
        return asdict(self)


def angle_between(A: np.ndarray, B: np.ndarray) -> float:
    """Angle between two matrices under the Frobenius inner product (0 for a zero matrix)."""
    norms = np.linalg.norm(A) * np.linalg.norm(B)
    if norms == 0.0:
        return 0.0
    return float(np.arccos(np.clip(inner(A, B) / norms, -1.0, 1.0)))


class InfomaxSolver(BaseSolver):
    """
    Mini-batch relative gradient descent with the step-annealing heuristic.

    Every pass reshuffles the samples (seeded PCG64) and walks through them in
    batches of T'. The trace gets one record per pass, holding the full-data
    gradient norm and loss.
    """

    solver_id = "infomax"

    @classmethod
    def default_config(cls):
        return InfomaxConfig()

    def _run(self, X, state, trace, clock):
        config = self.config
        n_sources, n_samples = X.shape
        batch_size = min(config.batch_size, n_samples)
        rng = np.random.Generator(np.random.PCG64(config.seed))
        identity = np.eye(n_sources)

        W = state.W
        alpha = config.alpha0
        previous_direction = None

        for n_pass in range(config.max_passes + 1):
            Y = W @ X
            G = relative_gradient(Y, self.score_model)
            elapsed = clock.elapsed()
            if not np.all(np.isfinite(G)):
                raise self._diverged(f"non-finite gradient after pass {n_pass}", trace)

            grad_inf = float(np.max(np.abs(G)))
            try:
                current_loss = loss(W, Y, self.score_model)
            except NonFiniteLossError as e:
                raise self._diverged(f"{e} (pass {n_pass})", trace) from e
            last_pass = grad_inf <= config.tol or n_pass == config.max_passes
            trace.append(
                TraceRecord(
                    iter=n_pass,
                    time_s=elapsed,
                    grad_inf=grad_inf,
                    loss=current_loss,
                    n2t_products=0 if last_pass else 1,
                )
            )
            logger.debug(f"infomax pass={n_pass} |G|_inf={grad_inf:.3e} alpha={alpha:.3e}")
            state = UnmixingState(W=W, Y=Y, loss=current_loss, gradient=G)

            if grad_inf <= config.tol:
                trace.converged = True
                break
            if n_pass == config.max_passes:
                break

            order = rng.permutation(n_samples)
            for start in range(0, n_samples, batch_size):
                batch = X[:, order[start:start + batch_size]]
                batch_gradient = relative_gradient(W @ batch, self.score_model)
                W = (identity - alpha * batch_gradient) @ W

                if previous_direction is not None and angle_between(batch_gradient, previous_direction) > config.angle_threshold:
                    alpha *= config.anneal
                previous_direction = batch_gradient

            if not np.all(np.isfinite(W)):
                raise self._diverged(f"non-finite unmixing matrix during pass {n_pass + 1}", trace)

        return state


def infomax_solve(X, W0=None, config: InfomaxConfig | None = None):
    """Runs stochastic Infomax; returns SolveResult (W, Y, trace)."""
    return InfomaxSolver(config).solve(X, W0)
