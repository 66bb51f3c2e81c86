"""
Eigen machinery for small symmetric matrices and the linearised operator coefficients.

All routines work on a single (n, n) matrix or on a batch (..., n, n), one
matrix per grid node.
"""
from dataclasses import dataclass

import numpy as np

from errors import InvalidInput, InvalidSpec
from symfunc import SymmetricFunctionSpec, f_grad

JACOBI_TOL = 1e-14
MAX_SWEEPS = 50


@dataclass(frozen=True)
class EigenDecomp:
    values: np.ndarray  # ascending along the last axis
    frame: np.ndarray  # columns are eigenvectors

    def reconstruct(self) -> np.ndarray:
        return np.einsum("...ik,...k,...jk->...ij", self.frame, self.values, self.frame)


def symmetrize(A) -> np.ndarray:
    """Symmetric matrix built from the upper triangle of A."""
    A = np.asarray(A, dtype=float)
    upper = np.triu(A)
    return upper + np.swapaxes(np.triu(A, 1), -1, -2)


def _rotate(A: np.ndarray, V: np.ndarray, p: int, q: int) -> None:
    """One Jacobi rotation in the (p, q) plane, applied in place to every matrix of the batch."""
    apq = A[..., p, q]
    active = apq != 0.0
    safe = np.where(active, apq, 1.0)
    theta = (A[..., q, q] - A[..., p, p]) / (2.0 * safe)
    sgn = np.where(theta >= 0.0, 1.0, -1.0)
    t = np.where(active, sgn / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    n = A.shape[-1]
    J = np.broadcast_to(np.eye(n), A.shape).copy()
    J[..., p, p] = c
    J[..., q, q] = c
    J[..., p, q] = s
    J[..., q, p] = -s
    A[...] = np.swapaxes(J, -1, -2) @ A @ J
    A[..., p, q] = 0.0
    A[..., q, p] = 0.0
    V[...] = V @ J


def _off_norm(A: np.ndarray) -> np.ndarray:
    n = A.shape[-1]
    mask = ~np.eye(n, dtype=bool)
    return np.sqrt(np.sum(np.where(mask, A, 0.0) ** 2, axis=(-1, -2)))


def eigen_sym(A) -> EigenDecomp:
    """
    Cyclic Jacobi eigen decomposition.

    Sweeps over the (p, q) planes until the off-diagonal Frobenius norm drops
    below 1e-14·‖A‖ for every matrix of the batch. For n = 2 a single rotation
    diagonalises exactly.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise InvalidInput(f"expected square matrices, got shape {A.shape}")
    A = symmetrize(A)
    if not np.all(np.isfinite(A)):
        raise InvalidInput("matrix has non-finite entries")
    n = A.shape[-1]
    work = A.copy()
    V = np.broadcast_to(np.eye(n), A.shape).copy()

    if n == 2:
        _rotate(work, V, 0, 1)
    elif n > 1:
        limit = JACOBI_TOL * np.linalg.norm(A, axis=(-1, -2))
        for _ in range(MAX_SWEEPS):
            if np.all(_off_norm(work) <= limit):
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    _rotate(work, V, p, q)

    values = np.diagonal(work, axis1=-2, axis2=-1).copy()
    order = np.argsort(values, axis=-1, kind="stable")
    values = np.take_along_axis(values, order, axis=-1)
    frame = np.take_along_axis(V, order[..., None, :], axis=-1)
    return EigenDecomp(values=values, frame=frame)


def gamma_shift(H, gamma: float) -> np.ndarray:
    """U = H + γ·tr(H)·I."""
    if gamma < 0:
        raise InvalidSpec(f"gamma must be >= 0, got {gamma}")
    H = np.asarray(H, dtype=float)
    n = H.shape[-1]
    trace = np.trace(H, axis1=-2, axis2=-1)
    return H + gamma * trace[..., None, None] * np.eye(n)


def F_matrix(spec: SymmetricFunctionSpec, U) -> np.ndarray:
    """F^{ij} = Q diag(f_i(λ)) Qᵀ, with (λ, Q) the eigen decomposition of U."""
    decomp = eigen_sym(U)
    grad = f_grad(spec, decomp.values)
    Q = decomp.frame
    return np.einsum("...ik,...k,...jk->...ij", Q, grad, Q)


def linearization(spec: SymmetricFunctionSpec, H, gamma: float) -> np.ndarray:
    """∂F/∂u_ij = F^{ij} + γ·ΣF^{kk}·δ_ij evaluated at U = H + γ tr(H) I."""
    F = F_matrix(spec, gamma_shift(H, gamma))
    n = F.shape[-1]
    trace = np.trace(F, axis1=-2, axis2=-1)
    return F + gamma * trace[..., None, None] * np.eye(n)
