from icabench.model.curvature import ApproxKind, block_solve, compute_approx, regularize
from icabench.solvers.base_solver import DescentSolver, DirectionResult, SolverConfig


class SimpleQuasiNewtonSolver(DescentSolver):
    """
    Newton's method with the exact Hessian replaced by the regularized
    H̃¹ or H̃² approximation: p = -H̃⁻¹·G at every iteration, no memory.
    """

    solver_id = "sqn"

    def __init__(self, config: SolverConfig | None = None, **kwargs):
        super().__init__(config, **kwargs)
        self.solver_id = f"sqn-{self.config.precond.value}"

    def _direction(self, state, G, clock):
        psi_d = self.score_model.score_deriv(state.Y)
        approx = regularize(compute_approx(self.config.precond, state.Y, self.score_model, psi_d), self.config.lambda_min)
        direction = block_solve(approx, -G)
        return DirectionResult(direction=direction, n2t_products=1 if self.config.precond is ApproxKind.H2 else 0)


def simple_qn_solve(X, W0=None, config: SolverConfig | None = None):
    """Runs the simple quasi-Newton method; returns SolveResult (W, Y, trace)."""
    return SimpleQuasiNewtonSolver(config).solve(X, W0)
