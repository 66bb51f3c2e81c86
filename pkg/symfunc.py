"""
Elementary symmetric functions, the operator family f and Gårding cone geometry.

Every function accepts a single eigenvalue tuple of shape (n,) or a batch of
shape (..., n) and evaluates along the last axis.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from errors import InvalidSpec, NotInCone

# f_closure status codes
OPEN = 0
BOUNDARY = 1
OUTSIDE = 2


class Kind(str, Enum):
    SIGMA_ROOT = "sigma_root"
    QUOTIENT = "quotient"


@dataclass(frozen=True)
class SymmetricFunctionSpec:
    kind: Kind
    k: int
    n: int
    l: Optional[int] = None

    def __post_init__(self):
        if self.n < 2:
            raise InvalidSpec(f"dimension n must be >= 2, got {self.n}")
        if self.kind == Kind.SIGMA_ROOT:
            if not 1 <= self.k <= self.n:
                raise InvalidSpec(f"SigmaRoot needs 1 <= k <= n, got k={self.k}, n={self.n}")
            if self.l is not None:
                raise InvalidSpec("SigmaRoot takes no l")
        elif self.kind == Kind.QUOTIENT:
            if self.l is None or not 1 <= self.l < self.k <= self.n:
                raise InvalidSpec(
                    f"Quotient needs 1 <= l < k <= n, got k={self.k}, l={self.l}, n={self.n}"
                )
        else:
            raise InvalidSpec(f"unknown operator kind {self.kind!r}")

    @classmethod
    def sigma_root(cls, k: int, n: int) -> "SymmetricFunctionSpec":
        return cls(Kind.SIGMA_ROOT, k, n)

    @classmethod
    def quotient(cls, k: int, l: int, n: int) -> "SymmetricFunctionSpec":
        return cls(Kind.QUOTIENT, k, n, l)

    @property
    def label(self) -> str:
        if self.kind == Kind.SIGMA_ROOT:
            return f"SigmaRoot({self.k})"
        return f"Quotient({self.k},{self.l})"


@dataclass(frozen=True)
class C10Gap:
    hypothesis_active: bool
    lhs: float
    f_sum: float

    @property
    def theta_hat(self) -> float:
        return self.lhs / (1.0 + self.f_sum)


def _as_lambda(lam) -> np.ndarray:
    arr = np.asarray(lam)
    if arr.ndim == 0:
        raise InvalidSpec("eigenvalue tuple must be a vector")
    if arr.dtype.kind in "iu":
        # exact integer arithmetic
        return arr.astype(object)
    return arr.astype(float)


def elementary_symmetric(lam, k: int) -> np.ndarray:
    """
    σ_0..σ_k of the last axis, shape (..., k+1).

    Prefix recurrence e_j <- e_j + λ_i e_{j-1}, i.e. the coefficients of
    Π(1 + λ_i t) truncated at degree k.
    """
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    if not 0 <= k <= n:
        raise InvalidSpec(f"k must satisfy 0 <= k <= n={n}, got {k}")
    dtype = object if lam.dtype == object else float
    e = np.zeros(lam.shape[:-1] + (k + 1,), dtype=dtype)
    e[..., 0] = 1
    for i in range(n):
        for j in range(min(i + 1, k), 0, -1):
            e[..., j] = e[..., j] + lam[..., i] * e[..., j - 1]
    return e


def sigma_k(lam, k: int):
    return elementary_symmetric(lam, k)[..., k]


def _sigma_omit(lam, j: int) -> np.ndarray:
    """σ_0..σ_j of λ with λ_i removed, shape (..., n, j+1); needs j <= n-1."""
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    omitted = np.stack([np.delete(lam, i, axis=-1) for i in range(n)], axis=-2)
    return elementary_symmetric(omitted, j)


def in_cone(lam, k: int, tol: float = 0.0):
    lam = _as_lambda(lam)
    if not 1 <= k <= lam.shape[-1]:
        raise InvalidSpec(f"cone index k={k} out of range for n={lam.shape[-1]}")
    e = elementary_symmetric(lam, k)[..., 1:]
    result = np.all(e > tol, axis=-1)
    return bool(result) if np.ndim(result) == 0 else result


def closure_tolerance(lam, k: int) -> np.ndarray:
    norm = np.linalg.norm(np.asarray(lam, dtype=float), axis=-1)
    return 1e-12 * (1.0 + norm**k)


def f_closure(spec: SymmetricFunctionSpec, lam) -> Tuple[np.ndarray, np.ndarray]:
    """
    Values of f extended by 0 to the closed cone, plus a status code per point.

    Points on ∂Γ_k (all σ_j >= -tol and some |σ_j| <= tol) evaluate to 0 with
    BOUNDARY status. Points outside the closed cone also evaluate to 0 and are
    flagged OUTSIDE; callers decide whether that is an error.
    """
    lam = np.asarray(lam, dtype=float)
    _check_dim(spec, lam)
    e = elementary_symmetric(lam, spec.k)
    tol = closure_tolerance(lam, spec.k)[..., None]
    sig = e[..., 1:]
    outside = np.any(sig < -tol, axis=-1)
    boundary = ~outside & np.any(np.abs(sig) <= tol, axis=-1)
    status = np.where(outside, OUTSIDE, np.where(boundary, BOUNDARY, OPEN)).astype(np.int8)
    values = np.zeros(lam.shape[:-1])
    open_ = status == OPEN
    if np.any(open_):
        if spec.kind == Kind.SIGMA_ROOT:
            values[open_] = e[..., spec.k][open_] ** (1.0 / spec.k)
        else:
            ratio = e[..., spec.k][open_] / e[..., spec.l][open_]
            values[open_] = ratio ** (1.0 / (spec.k - spec.l))
    return values, status


def _check_dim(spec: SymmetricFunctionSpec, lam: np.ndarray) -> None:
    if lam.shape[-1] != spec.n:
        raise InvalidSpec(f"eigenvalue tuple has length {lam.shape[-1]}, operator expects n={spec.n}")


def f_eval(spec: SymmetricFunctionSpec, lam):
    values, status = f_closure(spec, lam)
    if np.any(status == OUTSIDE):
        raise NotInCone(f"λ outside closure of Γ_{spec.k}")
    return values.item() if values.ndim == 0 else values


def f_grad(spec: SymmetricFunctionSpec, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    values, status = f_closure(spec, lam)
    if np.any(status != OPEN):
        raise NotInCone(f"gradient of f requires λ in the open cone Γ_{spec.k}")
    e = elementary_symmetric(lam, spec.k)
    omit = _sigma_omit(lam, spec.k - 1)
    f = values[..., None]
    k = spec.k
    if spec.kind == Kind.SIGMA_ROOT:
        return f * omit[..., k - 1] / (k * e[..., k][..., None])
    l = spec.l
    return f * (
        omit[..., k - 1] / e[..., k][..., None] - omit[..., l - 1] / e[..., l][..., None]
    ) / (k - l)


def normal_vector(spec: SymmetricFunctionSpec, lam) -> np.ndarray:
    g = f_grad(spec, lam)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def beta_of(nu):
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise InvalidSpec("beta_of needs a unit vector with positive components")
    n = nu.shape[-1]
    beta = np.minimum(nu.min(axis=-1) / 2.0, 1.0 / (2.0 * np.sqrt(n)))
    return beta.item() if np.ndim(beta) == 0 else beta


def c10_gap(spec: SymmetricFunctionSpec, mu, lam) -> C10Gap:
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    nu_mu = normal_vector(spec, mu)
    nu_lam = normal_vector(spec, lam)
    grad = f_grad(spec, lam)
    active = np.linalg.norm(nu_mu - nu_lam) >= beta_of(nu_mu)
    return C10Gap(
        hypothesis_active=bool(active),
        lhs=float(np.dot(grad, mu - lam)),
        f_sum=float(grad.sum()),
    )


def c10_gap_batch(spec: SymmetricFunctionSpec, mu: np.ndarray, lam: np.ndarray):
    """Vectorised c10_gap over (..., n) batches: (active, lhs, f_sum) arrays."""
    nu_mu = normal_vector(spec, mu)
    nu_lam = normal_vector(spec, lam)
    grad = f_grad(spec, lam)
    active = np.linalg.norm(nu_mu - nu_lam, axis=-1) >= beta_of(nu_mu)
    lhs = np.sum(grad * (mu - lam), axis=-1)
    return active, lhs, grad.sum(axis=-1)
