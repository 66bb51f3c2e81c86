from typing import Any, List, Optional


class HessolveError(Exception):
    """Base class for every error raised by the solver library."""


class InvalidSpec(HessolveError, ValueError):
    """A problem, operator or schedule description violates its invariants."""


class InvalidInput(HessolveError, ValueError):
    """Numerical input that cannot be processed (non-finite, mismatched grids, ...)."""


class InvalidIndex(HessolveError, IndexError):
    """A node index or region that does not exist for the requested stencil."""


class NotInCone(HessolveError, ValueError):
    """Eigenvalue tuple outside the admissible cone where an open-cone point is required."""


class SolverError(HessolveError):
    """
    Iterative solve failure.

    Carries whatever the solver had when it gave up so callers can inspect it:
    the best state reached, the ε being solved (if any) and a residual trace.
    """

    def __init__(
        self,
        message: str,
        best_state: Any = None,
        eps: Optional[float] = None,
        trace: Optional[List[Any]] = None,
    ):
        super().__init__(message)
        self.best_state = best_state
        self.eps = eps
        self.trace = list(trace) if trace is not None else []
        self.records: List[Any] = []

    def at_eps(self, eps: float) -> "SolverError":
        self.eps = eps
        return self

    def __str__(self) -> str:
        base = super().__str__()
        if self.eps is None:
            return base
        return f"{base} (eps={self.eps:.6g})"


class NonConvergence(SolverError):
    """Iteration budget exhausted or a linear solve missed its residual contract."""


class LineSearchStalled(SolverError):
    """Step damping fell below its floor without an admissible, decreasing trial."""


class SubsolutionFailed(HessolveError):
    """No admissible subsolution could be built; reports the worst node and its λ."""

    def __init__(self, message: str, node: Optional[tuple] = None, lam: Any = None):
        super().__init__(message)
        self.node = node
        self.lam = lam
