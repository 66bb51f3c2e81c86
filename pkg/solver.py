"""
Damped Newton iteration with an admissibility-preserving line search, run
along a descending ε schedule with warm starts.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple

import numpy as np

from discretize import Grid, GridField, apply_operator, hessian_field, solve_dirichlet
from errors import LineSearchStalled, NonConvergence, SolverError
from problem import ProblemSpec, Regularizer, Subsolution, auto_subsolution, build_eta, regularized_rhs
from spectral import eigen_sym, gamma_shift, linearization
from symfunc import OPEN, SymmetricFunctionSpec, f_closure

logger = logging.getLogger(__name__)

SUFFICIENT_DECREASE = 0.25
DAMPING_FLOOR = 2.0**-20
MAX_SHIFT_DOUBLINGS = 80


@dataclass
class NewtonState:
    u: GridField
    residual_norm: float
    iteration: int
    step_damping: float
    admissible: bool


@dataclass(frozen=True)
class IterationLog:
    eps: float
    iteration: int
    residual_norm: float
    damping: float
    inadmissible: int

    def to_dict(self):
        return {
            "eps": self.eps,
            "iteration": self.iteration,
            "residual_norm": self.residual_norm,
            "damping": self.damping,
            "inadmissible": self.inadmissible,
        }


@dataclass
class SolveRecord:
    eps: float
    iterations: int
    final_residual: float
    u: GridField
    trace: List[IterationLog] = field(default_factory=list)
    diagnostics: Optional[Any] = None


def cone_slack(u: GridField) -> float:
    """tol_cone = 1e-10·(1 + ‖u‖_∞/h²)."""
    h = min(u.grid.spacing)
    return 1e-10 * (1.0 + u.max_norm() / h**2)


def residual(p: ProblemSpec, reg: Regularizer, eps: float, u: GridField) -> GridField:
    """F_h[u] - (ψ + εη(ψ)) at interior nodes, 0 on the boundary ring."""
    rhs = regularized_rhs(p.psi_field, eps, reg)
    return _residual(rhs, apply_operator(p.fspec, p.gamma, u))


def _residual(rhs: GridField, image) -> GridField:
    grid = rhs.grid
    values = np.zeros(grid.shape)
    interior = grid.interior()
    values[interior] = image.values.values[interior] - rhs.values[interior]
    return GridField(grid, values)


def admissible_coefficients(spec: SymmetricFunctionSpec, gamma: float, H: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Linearised coefficients at every node of a Hessian batch.

    Nodes whose λ(U) is not in the open cone are evaluated at λ + t·1 instead,
    t doubling from 1e-8(1 + |λ|); the shift is applied to H as t/(1+nγ)·I.
    Returns the coefficients and the number of shifted nodes.
    """
    n = H.shape[-1]
    lam = eigen_sym(gamma_shift(H, gamma)).values
    _, status = f_closure(spec, lam)
    closed = status != OPEN
    shift = np.zeros(lam.shape[:-1])
    if np.any(closed):
        t = 1e-8 * (1.0 + np.linalg.norm(lam, axis=-1))
        pending = closed.copy()
        for _ in range(MAX_SHIFT_DOUBLINGS):
            _, trial = f_closure(spec, lam + t[..., None])
            done = pending & (trial == OPEN)
            shift[done] = t[done]
            pending &= ~done
            if not np.any(pending):
                break
            t = np.where(pending, 2.0 * t, t)
        else:
            raise NonConvergence("cannot move node eigenvalues into the open cone")
    shifted = H + (shift / (1.0 + n * gamma))[..., None, None] * np.eye(n)
    return linearization(spec, shifted, gamma), int(np.sum(closed))


def linear_solve(
    grid: Grid,
    coeffs: np.ndarray,
    rhs: GridField,
    boundary: Optional[GridField] = None,
    goal: Optional[float] = None,
) -> GridField:
    """Solve Σ a_ij D_ij v = rhs at interior nodes, v = boundary (default 0) on the ring."""
    return solve_dirichlet(grid, coeffs, rhs.interior_values, boundary=boundary, goal=goal)


def newton_solve(p: ProblemSpec, reg: Regularizer, eps: float, u_init: GridField) -> SolveRecord:
    grid = p.grid
    tol = p.newton.tol
    u = u_init
    rhs = regularized_rhs(p.psi_field, eps, reg)
    # nodes with a positive right-hand side must stay in the open cone, where F_h is not clipped to 0
    positive = rhs.interior_values > 0
    R = _residual(rhs, apply_operator(p.fspec, p.gamma, u))
    rnorm = R.max_norm()
    state = NewtonState(u=u, residual_norm=rnorm, iteration=0, step_damping=1.0, admissible=True)
    trace: List[IterationLog] = []

    iteration = 0
    while rnorm >= tol:
        if iteration >= p.newton.max_iter:
            raise NonConvergence(
                f"Newton did not reach tol {tol:.1e} in {p.newton.max_iter} iterations "
                f"(residual {rnorm:.3e})",
                best_state=state,
                eps=eps,
                trace=trace,
            )
        iteration += 1
        coeffs, shifted = admissible_coefficients(p.fspec, p.gamma, hessian_field(u))
        if shifted:
            logger.debug("eps=%.3e iter=%d: %d nodes linearised off the cone boundary", eps, iteration, shifted)
        goal = max(1e-10 * rnorm, 1e-2 * tol)
        try:
            delta = linear_solve(grid, coeffs, R.with_values(-R.values), goal=goal)
        except SolverError as e:
            e.best_state = state
            e.eps = eps
            e.trace = trace + e.trace
            raise

        s = 1.0
        while True:
            trial = u.with_values(u.values + s * delta.values)
            slack = cone_slack(trial)
            image = apply_operator(p.fspec, p.gamma, trial)
            if not np.any(image.inadmissible(slack)) and np.all(image.open_mask[positive]):
                R_trial = _residual(rhs, image)
                r_trial = R_trial.max_norm()
                if r_trial <= (1.0 - SUFFICIENT_DECREASE * s) * rnorm:
                    break
            s *= 0.5
            if s < DAMPING_FLOOR:
                raise LineSearchStalled(
                    f"line search stalled at iteration {iteration} (residual {rnorm:.3e})",
                    best_state=state,
                    eps=eps,
                    trace=trace,
                )

        u, R, rnorm = trial, R_trial, r_trial
        closed = int(np.sum(~image.open_mask))
        state = NewtonState(u=u, residual_norm=rnorm, iteration=iteration, step_damping=s, admissible=True)
        entry = IterationLog(eps=eps, iteration=iteration, residual_norm=rnorm, damping=s, inadmissible=closed)
        trace.append(entry)
        logger.debug(
            "eps=%.3e iter=%d residual=%.3e damping=%.3g inadmissible=%d",
            eps, iteration, rnorm, s, closed,
        )

    return SolveRecord(eps=eps, iterations=iteration, final_residual=rnorm, u=u, trace=trace)


def continuity_solve(p: ProblemSpec, subsolution: Optional[Subsolution] = None) -> List[SolveRecord]:
    """Newton solves along the ε schedule, each warm-started from the previous one (first from ul u)."""
    if subsolution is None:
        subsolution = auto_subsolution(p)
    reg = build_eta(subsolution.eps0)
    schedule = p.schedule.values(subsolution.eps0)
    records: List[SolveRecord] = []
    u = subsolution.field
    for eps in schedule:
        try:
            record = newton_solve(p, reg, eps, u)
        except SolverError as e:
            e.at_eps(eps)
            e.records = records
            logger.error("continuation failed at eps=%.3e: %s", eps, e)
            raise
        logger.info("eps=%.3e converged in %d iterations", eps, record.iterations)
        records.append(record)
        u = record.u
    return records
