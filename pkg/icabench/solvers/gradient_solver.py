from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from icabench.solvers.base_solver import DescentSolver, DirectionResult, SolverConfig
from icabench.solvers.line_search import LineSearchResult, relative_loss_change
from icabench.utils.errors import InvalidConfigError


@dataclass(frozen=True)
class OracleConfig(SolverConfig):
    """
    Oracle gradient descent parameters on top of SolverConfig.

    Attributes:
        alpha_max (float): Upper end of the step-size bracket (0, alpha_max].
        alpha_xatol (float): Absolute tolerance of the bounded scalar search.
    """

    alpha_max: float = 4.0
    alpha_xatol: float = 1e-5

    def __post_init__(self):
        super().__post_init__()
        if not self.alpha_max > 0:
            raise InvalidConfigError(f"alpha_max must be > 0, got {self.alpha_max}")
        if not self.alpha_xatol > 0:
            raise InvalidConfigError(f"alpha_xatol must be > 0, got {self.alpha_xatol}")


class GradientDescentSolver(DescentSolver):
    """
    Relative gradient descent W <- (I - αG)·W with a near-exact step size.

    The step-size search runs with the clock paused, so the trace reports the
    time of a method that knew the best step in advance.
    """

    solver_id = "gd-oracle"

    @classmethod
    def default_config(cls):
        return OracleConfig()

    def _direction(self, state, G, clock):
        return DirectionResult(direction=-G)

    def _search(self, state, direction, clock) -> LineSearchResult:
        config = self.config
        density_0 = self.score_model.neg_log_density(state.Y)

        def change_at(alpha: float) -> float:
            change, _ = relative_loss_change(state.Y, alpha * direction, density_0, self.score_model)
            return change

        with clock.paused():
            found = minimize_scalar(
                change_at,
                bounds=(0.0, config.alpha_max),
                method="bounded",
                options={"xatol": config.alpha_xatol},
            )
            alpha = float(found.x)
            change, Y_new = relative_loss_change(state.Y, alpha * direction, density_0, self.score_model)

        tries = int(found.nfev) + 1
        if not change < 0:
            return LineSearchResult(alpha=alpha, W=state.W, Y=state.Y, loss=state.loss, tries=tries, success=False)

        W_new = (np.eye(state.W.shape[0]) + alpha * direction) @ state.W
        return LineSearchResult(
            alpha=alpha, W=W_new, Y=Y_new, loss=state.loss + change, tries=tries, success=True
        )


def gradient_descent_solve(X, W0=None, config: OracleConfig | None = None):
    """Runs oracle gradient descent; returns SolveResult (W, Y, trace)."""
    return GradientDescentSolver(config).solve(X, W0)
