import numpy as np

from icabench.model.curvature import ApproxKind, compute_approx, regularize
from icabench.solvers.base_solver import DescentSolver, DirectionResult, SolverConfig
from icabench.solvers.lbfgs_memory import LbfgsMemory, inner, two_loop_direction, two_loop_recursion
from icabench.utils.logger import get_logger

logger = get_logger(__name__)


class LbfgsSolver(DescentSolver):
    """
    Common memory handling of the L-BFGS solvers.

    The pair for a step is completed when the next gradient arrives:
    s = α·p, y = G_new - G_old. A fallback step's pair seeds the fresh memory.
    """

    solver_id = "lbfgs"

    def _run(self, X, state, trace, clock):
        self.memory = LbfgsMemory(self.config.memory)
        self._pending: tuple[np.ndarray, np.ndarray] | None = None
        return super()._run(X, state, trace, clock)

    def _observe_gradient(self, G):
        if self._pending is None:
            return
        step, previous_gradient = self._pending
        self._pending = None
        if not self.memory.push(step, G - previous_gradient):
            logger.debug(f"{self.solver_id}: skipped a pair without positive curvature")

    def _accept_step(self, step, G):
        self._pending = (step, G)

    def _reset_memory(self):
        self.memory.reset()


class PicardSolver(LbfgsSolver):
    """
    Preconditioned L-BFGS: the two-loop recursion starts from the inverse of the
    regularized H̃¹ or H̃² approximation instead of a multiple of the identity.
    """

    solver_id = "picard"

    def __init__(self, config: SolverConfig | None = None, **kwargs):
        super().__init__(config, **kwargs)
        self.solver_id = f"picard-{self.config.precond.value}"

    def _direction(self, state, G, clock):
        psi_d = self.score_model.score_deriv(state.Y)
        approx = regularize(compute_approx(self.config.precond, state.Y, self.score_model, psi_d), self.config.lambda_min)
        direction = two_loop_direction(G, self.memory, approx)
        # H̃² costs one Y·Yᵀ-type product; H̃¹ only needs per-row moments.
        products = 1 if self.config.precond is ApproxKind.H2 else 0
        return DirectionResult(direction=direction, n2t_products=products)


class VanillaLbfgsSolver(LbfgsSolver):
    """L-BFGS seeded with γ·I, γ = ⟨s|y⟩/⟨y|y⟩ of the newest pair (γ = 1 with empty memory)."""

    solver_id = "lbfgs"

    def _direction(self, state, G, clock):
        newest = self.memory.newest
        if newest is None:
            gamma = 1.0
        else:
            s, y, _ = newest
            gamma = inner(s, y) / inner(y, y)
        direction = two_loop_recursion(G, self.memory, lambda q: gamma * q)
        return DirectionResult(direction=direction)


def picard_solve(X, W0=None, config: SolverConfig | None = None):
    """Runs Picard; returns SolveResult (W, Y, trace)."""
    return PicardSolver(config).solve(X, W0)


def vanilla_lbfgs_solve(X, W0=None, config: SolverConfig | None = None):
    """Runs L-BFGS with the scaled-identity seed; returns SolveResult (W, Y, trace)."""
    return VanillaLbfgsSolver(config).solve(X, W0)
