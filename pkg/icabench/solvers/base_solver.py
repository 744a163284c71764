from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from time import perf_counter
from typing import NamedTuple

import numpy as np

from icabench.model.curvature import ApproxKind
from icabench.model.infomax import INFOMAX, ScoreModel, UnmixingState, relative_gradient
from icabench.preprocessing.whitening import DataMatrix
from icabench.solvers.line_search import LineSearchResult, backtracking_line_search
from icabench.utils.errors import InvalidConfigError, InvalidDataError, SolverDivergedError
from icabench.utils.logger import get_logger

logger = get_logger(__name__)

# Relative drift between the tracked Y and W·X above which Y is recomputed.
DRIFT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters shared by the full-batch solvers.

    Attributes:
        memory (int): L-BFGS memory size m.
        n_ls (int): Backtracking tries before falling back to the gradient.
        lambda_min (float): Eigenvalue floor of the Hessian approximation.
        tol (float): Stop when max_ij |G_ij| <= tol.
        max_iter (int): Last iteration index.
        precond (ApproxKind): Which approximation informs the solver (h1 or h2).
        refresh_every (int): Period, in iterations, of the Y = W·X drift check (0 disables it).
    """

    memory: int = 7
    n_ls: int = 10
    lambda_min: float = 1e-2
    tol: float = 1e-8
    max_iter: int = 500
    precond: ApproxKind = ApproxKind.H2
    refresh_every: int = 50

    def __post_init__(self):
        try:
            object.__setattr__(self, "precond", ApproxKind(self.precond))
        except ValueError as e:
            raise InvalidConfigError(f"precond must be 'h1' or 'h2', got '{self.precond}'") from e
        if self.memory < 0:
            raise InvalidConfigError(f"memory must be >= 0, got {self.memory}")
        if self.n_ls < 1:
            raise InvalidConfigError(f"n_ls must be >= 1, got {self.n_ls}")
        if not self.lambda_min > 0:
            raise InvalidConfigError(f"lambda_min must be > 0, got {self.lambda_min}")
        if not self.tol > 0:
            raise InvalidConfigError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 0:
            raise InvalidConfigError(f"max_iter must be >= 0, got {self.max_iter}")
        if self.refresh_every < 0:
            raise InvalidConfigError(f"refresh_every must be >= 0, got {self.refresh_every}")

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, ApproxKind):
                out[key] = value.value
        return out


@dataclass
class TraceRecord:
    """
    One iteration of a solver: the iterate's gradient norm and loss, and the
    work spent in that iteration.
    """

    iter: int
    time_s: float
    grad_inf: float
    loss: float
    ls_tries: int = 0
    fallback: bool = False
    n2t_products: int = 1
    n_cg: int | None = None
    cg_breakdown: bool | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


@dataclass
class ConvergenceTrace:
    """
    Per-iteration history of a solver run.

    Attributes:
        solver (str): Solver id.
        records (list[TraceRecord]): One record per iteration, in order.
        converged (bool): Whether the gradient norm reached the tolerance.
        stalled (bool): Whether the run stopped because no descent step was found.
        excluded_time_s (float): Time spent in steps kept out of the elapsed time.
    """

    solver: str
    records: list[TraceRecord] = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    excluded_time_s: float = 0.0

    def append(self, record: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if record.iter <= last.iter:
                raise ValueError(f"Trace iterations must increase: {record.iter} after {last.iter}")
            if record.time_s < last.time_s:
                raise ValueError(f"Trace time went backwards: {record.time_s} after {last.time_s}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(record, name) for record in self.records], dtype=float)

    @property
    def grad_norms(self) -> np.ndarray:
        return self.column("grad_inf")

    @property
    def losses(self) -> np.ndarray:
        return self.column("loss")

    def iterations_to(self, threshold: float) -> int | None:
        """First iteration whose gradient norm is <= threshold, or None."""
        for record in self.records:
            if record.grad_inf <= threshold:
                return record.iter
        return None

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "converged": self.converged,
            "stalled": self.stalled,
            "excluded_time_s": self.excluded_time_s,
            "records": [record.to_dict() for record in self.records],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ConvergenceTrace":
        trace = cls(
            solver=payload["solver"],
            converged=payload.get("converged", False),
            stalled=payload.get("stalled", False),
            excluded_time_s=payload.get("excluded_time_s", 0.0),
        )
        for raw in payload["records"]:
            trace.records.append(TraceRecord(**raw))
        return trace


class SolveResult(NamedTuple):
    W: np.ndarray
    Y: np.ndarray
    trace: ConvergenceTrace


class Stopwatch:
    """Wall-clock time since creation, minus the time spent inside `paused()` blocks."""

    def __init__(self):
        self._start = perf_counter()
        self.excluded = 0.0

    def elapsed(self) -> float:
        return perf_counter() - self._start - self.excluded

    @contextmanager
    def paused(self):
        started = perf_counter()
        try:
            yield
        finally:
            self.excluded += perf_counter() - started


def as_signal_array(X) -> np.ndarray:
    """Returns the float64 array behind a DataMatrix or array-like N×T input."""
    values = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)
    if values.ndim != 2:
        raise InvalidDataError(f"Expected an N×T matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidDataError("Signals contain non-finite entries.")
    return values


class BaseSolver(ABC):
    """
    Abstract base class for ICA solvers.

    Subclasses implement `_run`, which iterates from the initial state and fills
    the trace. `solve` handles input checking, the initial state and the clock.
    """

    solver_id: str = "abstract"

    def __init__(self, config=None, score_model: ScoreModel = INFOMAX):
        self.config = config if config is not None else self.default_config()
        self.score_model = score_model

    @classmethod
    def default_config(cls):
        return SolverConfig()

    def solve(self, X, W0: np.ndarray | None = None) -> SolveResult:
        """
        Runs the solver on whitened signals.

        Args:
            X (DataMatrix | np.ndarray): Whitened N×T signals.
            W0 (np.ndarray, optional): Initial unmixing matrix; identity by default.

        Returns:
            SolveResult: Final W, final sources Y and the convergence trace.

        Raises:
            SolverDivergedError: If the state becomes non-finite.
        """
        X = as_signal_array(X)
        n_sources = X.shape[0]
        W = np.eye(n_sources) if W0 is None else np.array(W0, dtype=np.float64)
        if W.shape != (n_sources, n_sources):
            raise InvalidDataError(f"W0 has shape {W.shape}, expected {(n_sources, n_sources)}")

        logger.debug(f"{self.solver_id}: starting on N={n_sources}, T={X.shape[1]}")
        state = UnmixingState.from_data(X, W, self.score_model)
        trace = ConvergenceTrace(solver=self.solver_id)
        clock = Stopwatch()

        state = self._run(X, state, trace, clock)

        trace.excluded_time_s = clock.excluded
        last = trace.records[-1]
        logger.info(
            f"{self.solver_id}: stopped at iteration {last.iter} with |G|_inf={last.grad_inf:.3e} "
            f"(converged={trace.converged}, stalled={trace.stalled})"
        )
        return SolveResult(W=state.W, Y=state.Y, trace=trace)

    @abstractmethod
    def _run(self, X: np.ndarray, state: UnmixingState, trace: ConvergenceTrace, clock: Stopwatch) -> UnmixingState:
        """Iterates from `state`, appending to `trace`; returns the final state."""
        pass

    def _diverged(self, message: str, trace: ConvergenceTrace):
        logger.error(f"{self.solver_id}: {message}")
        return SolverDivergedError(f"{self.solver_id}: {message}", trace=trace)


@dataclass
class DirectionResult:
    direction: np.ndarray
    n2t_products: int = 0
    n_cg: int | None = None
    cg_breakdown: bool | None = None


class DescentSolver(BaseSolver):
    """
    Shared loop of the full-batch line-search solvers: gradient, direction,
    line search, relative update of W and Y.

    When the search along the solver's direction fails, the step is retried
    along the relative gradient (-G) after `_reset_memory()`. If that also
    fails the run stops with `trace.stalled = True`.
    """

    tracks_cg = False

    @abstractmethod
    def _direction(self, state: UnmixingState, G: np.ndarray, clock: Stopwatch) -> DirectionResult:
        """Search direction at `state`, plus the Θ(N²×T) products it took beyond the gradient."""
        pass

    def _search(self, state: UnmixingState, direction: np.ndarray, clock: Stopwatch) -> LineSearchResult:
        return backtracking_line_search(
            state.W, state.Y, direction, state.loss, self.config.n_ls, score_model=self.score_model
        )

    def _observe_gradient(self, G: np.ndarray) -> None:
        """Called with every new gradient before the stopping test."""

    def _accept_step(self, step: np.ndarray, G: np.ndarray) -> None:
        """Called with the accepted relative step α·p and the gradient it started from."""

    def _reset_memory(self) -> None:
        """Called before the gradient fallback."""

    def _run(self, X, state, trace, clock):
        config = self.config

        for k in range(config.max_iter + 1):
            G = relative_gradient(state.Y, self.score_model)
            elapsed = clock.elapsed()
            if not np.all(np.isfinite(G)):
                raise self._diverged(f"non-finite gradient at iteration {k}", trace)

            state.gradient = G
            self._observe_gradient(G)
            grad_inf = float(np.max(np.abs(G)))

            if grad_inf <= config.tol or k == config.max_iter:
                trace.append(
                    TraceRecord(
                        iter=k,
                        time_s=elapsed,
                        grad_inf=grad_inf,
                        loss=state.loss,
                        n_cg=0 if self.tracks_cg else None,
                        cg_breakdown=False if self.tracks_cg else None,
                    )
                )
                trace.converged = grad_inf <= config.tol
                break

            found = self._direction(state, G, clock)
            if not np.all(np.isfinite(found.direction)):
                raise self._diverged(f"non-finite search direction at iteration {k}", trace)

            result = self._search(state, found.direction, clock)
            direction = found.direction
            tries = result.tries
            fallback = False

            if not result.success:
                logger.warning(
                    f"{self.solver_id}: line search failed after {result.tries} tries at iteration {k}; "
                    "falling back to the relative gradient"
                )
                self._reset_memory()
                direction = -G
                result = backtracking_line_search(
                    state.W, state.Y, direction, state.loss, config.n_ls, score_model=self.score_model
                )
                tries += result.tries
                fallback = True

            trace.append(
                TraceRecord(
                    iter=k,
                    time_s=elapsed,
                    grad_inf=grad_inf,
                    loss=state.loss,
                    ls_tries=tries,
                    fallback=fallback,
                    n2t_products=1 + found.n2t_products,
                    n_cg=found.n_cg,
                    cg_breakdown=found.cg_breakdown,
                )
            )
            logger.debug(
                f"{self.solver_id} it={k} |G|_inf={grad_inf:.3e} loss={state.loss:.10f} "
                f"alpha={result.alpha:.3g} tries={tries}"
            )

            if not result.success:
                logger.warning(f"{self.solver_id}: no descent step found at iteration {k}; stopping")
                trace.stalled = True
                break

            self._accept_step(result.alpha * direction, G)
            state = UnmixingState(W=result.W, Y=result.Y, loss=result.loss)

            if config.refresh_every and (k + 1) % config.refresh_every == 0:
                state = self._refresh(X, state)

        return state

    def _refresh(self, X: np.ndarray, state: UnmixingState) -> UnmixingState:
        drift = state.drift(X)
        if drift <= DRIFT_TOLERANCE:
            return state
        logger.debug(f"{self.solver_id}: recomputing Y = W·X (relative drift {drift:.2e})")
        return UnmixingState.from_data(X, state.W, self.score_model)
