import logging
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse.linalg as spla

from errors import NonConvergence

logger = logging.getLogger(__name__)


def _preconditioner(A):
    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-8, fill_factor=30)
    except RuntimeError as e:
        logger.warning("ILU factorisation failed (%s); running unpreconditioned", e)
        return None
    return spla.LinearOperator(A.shape, ilu.solve)


def krylov_solve(
    A,
    b: np.ndarray,
    rtol: float = 1e-10,
    goal: Optional[float] = None,
    max_rounds: int = 8,
) -> Tuple[np.ndarray, List[float]]:
    """
    Solve the sparse system Ax = b with ILU-preconditioned BiCGSTAB plus iterative refinement.

    Success means ‖b - Ax‖_∞ <= goal, defaulting to rtol·‖b‖_∞. Returns the
    solution and the max-norm residual after every refinement round.
    """
    b = np.asarray(b, dtype=float)
    bnorm = float(np.max(np.abs(b))) if b.size else 0.0
    target = goal if goal is not None else rtol * bnorm
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, [0.0]

    M = _preconditioner(A)
    history: List[float] = []
    for round_ in range(max_rounds + 1):
        r = b - A @ x
        rnorm = float(np.max(np.abs(r)))
        history.append(rnorm)
        if rnorm <= target:
            return x, history
        if round_ == max_rounds or (len(history) > 1 and rnorm > 0.5 * history[-2]):
            # out of rounds, or refinement stopped paying off
            break
        dx, info = spla.bicgstab(A, r, rtol=1e-12, atol=0.0, maxiter=10 * A.shape[0], M=M)
        if info < 0:
            logger.warning("bicgstab breakdown (info=%d)", info)
            break
        x = x + dx

    raise NonConvergence(
        f"linear solve stalled at residual {history[-1]:.3e} (goal {target:.3e})",
        best_state=x,
        trace=history,
    )
