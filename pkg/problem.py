"""
Problem assembly: configuration schema, boundary/right-hand-side samplers, the
regulariser η, and construction of the admissible subsolution.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from discretize import Grid, GridField, Sampler, apply_operator, harmonic_solve
from errors import InvalidSpec, SubsolutionFailed
from symfunc import SymmetricFunctionSpec, in_cone

logger = logging.getLogger(__name__)

MAX_SUBSOLUTION_SCALE = 2.0**30


# ---------------------------------------------------------------- samplers


@dataclass(frozen=True)
class ConstantSampler:
    value: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.full(len(x), float(self.value))


@dataclass(frozen=True)
class AffineSampler:
    constant: float
    gradient: tuple

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.constant + x @ np.asarray(self.gradient, dtype=float)


@dataclass(frozen=True)
class RadialPowerSampler:
    """coefficient·|x - center|^power"""

    coefficient: float
    power: float
    center: tuple

    def __call__(self, x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return self.coefficient * r**self.power


@dataclass(frozen=True)
class BumpVanishingSampler:
    """amplitude·max(0, |x - center|² - radius²)^power; vanishes on the ball of the given radius."""

    amplitude: float
    radius: float
    power: float
    center: tuple

    def __call__(self, x: np.ndarray) -> np.ndarray:
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.maximum(0.0, r2 - self.radius**2) ** self.power


@dataclass(frozen=True)
class ExpressionSampler:
    """Closed-form expression in x, y (, z) and pi, evaluated with pandas.eval."""

    expr: str

    def __call__(self, x: np.ndarray) -> np.ndarray:
        names = ["x", "y", "z"][: x.shape[1]]
        local = {name: x[:, i] for i, name in enumerate(names)}
        local["pi"] = np.pi
        try:
            out = pd.eval(self.expr, engine="python", local_dict=local, global_dict={})
        except Exception as e:
            raise InvalidSpec(f"cannot evaluate expression {self.expr!r}: {e}") from e
        return np.broadcast_to(np.asarray(out, dtype=float), (len(x),)).copy()


# ---------------------------------------------------------------- configuration schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ConstantParams(_Strict):
    value: float


class AffineParams(_Strict):
    constant: float = 0.0
    gradient: List[float]


class RadialPowerParams(_Strict):
    coefficient: float = 1.0
    power: float = 2.0
    center: Optional[List[float]] = None


class BumpVanishingParams(_Strict):
    amplitude: float = 1.0
    radius: float = Field(ge=0.0)
    power: float = 2.0
    center: Optional[List[float]] = None


class ExpressionParams(_Strict):
    expr: str


SAMPLER_PARAMS = {
    "constant": ConstantParams,
    "affine": AffineParams,
    "radial_power": RadialPowerParams,
    "bump_vanishing": BumpVanishingParams,
    "expression": ExpressionParams,
}


class SamplerConfig(_Strict):
    kind: Literal["constant", "affine", "radial_power", "bump_vanishing", "expression"]
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_params(self):
        SAMPLER_PARAMS[self.kind].model_validate(self.params)
        return self

    def build(self, grid: Grid) -> Sampler:
        params = SAMPLER_PARAMS[self.kind].model_validate(self.params)
        center = tuple(grid.center) if getattr(params, "center", None) is None else tuple(params.center)
        if self.kind == "constant":
            return ConstantSampler(params.value)
        if self.kind == "affine":
            if len(params.gradient) != grid.n:
                raise InvalidSpec(f"affine gradient needs {grid.n} entries, got {len(params.gradient)}")
            return AffineSampler(params.constant, tuple(params.gradient))
        if len(center) != grid.n:
            raise InvalidSpec(f"sampler center needs {grid.n} entries, got {len(center)}")
        if self.kind == "radial_power":
            return RadialPowerSampler(params.coefficient, params.power, center)
        if self.kind == "bump_vanishing":
            return BumpVanishingSampler(params.amplitude, params.radius, params.power, center)
        return ExpressionSampler(params.expr)


class FunctionConfig(_Strict):
    kind: Literal["sigma_root", "quotient"]
    k: int
    l: Optional[int] = None


class GridConfig(_Strict):
    extents: List[float]
    m: int


class EpsSchedule(_Strict):
    """ε_j = eps0_fraction·ε₀·ratio^j for j < steps, optionally followed by the ε = 0 limit stage."""

    eps0_fraction: float = Field(default=0.5, gt=0.0, le=0.5)
    ratio: float = Field(default=0.25, gt=0.0, lt=1.0)
    steps: int = Field(default=7, ge=1)
    limit: bool = False

    def values(self, eps0: float) -> List[float]:
        eps = [self.eps0_fraction * eps0 * self.ratio**j for j in range(self.steps)]
        if self.limit:
            eps.append(0.0)
        return eps


class NewtonSettings(_Strict):
    tol: float = Field(default=1e-10, gt=0.0)
    max_iter: int = Field(default=50, ge=1)


class ProblemConfig(_Strict):
    name: Optional[str] = None
    f: FunctionConfig
    n: int
    gamma: float
    allow_gamma_zero: bool = False
    grid: GridConfig
    psi: SamplerConfig
    phi: SamplerConfig
    schedule: EpsSchedule = EpsSchedule()
    newton: NewtonSettings = NewtonSettings()
    reference: Optional[SamplerConfig] = None


# ---------------------------------------------------------------- problem


@dataclass(frozen=True)
class ProblemSpec:
    fspec: SymmetricFunctionSpec
    gamma: float
    grid: Grid
    psi: Sampler
    phi: Sampler
    schedule: EpsSchedule = EpsSchedule()
    newton: NewtonSettings = NewtonSettings()
    allow_gamma_zero: bool = False
    reference: Optional[Sampler] = None
    name: str = "problem"
    psi_values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise InvalidSpec(f"gamma must be a finite number >= 0, got {self.gamma}")
        if self.gamma == 0 and not self.allow_gamma_zero:
            raise InvalidSpec(
                "gamma = 0 needs allow_gamma_zero: the interior second-derivative "
                "estimate assumes γ > 0 (Let γ > 0)"
            )
        if self.fspec.n != self.grid.n:
            raise InvalidSpec(f"operator dimension {self.fspec.n} differs from grid dimension {self.grid.n}")
        psi = np.asarray(self.psi(self.grid.points()), dtype=float).reshape(self.grid.shape)
        if np.any(np.isnan(psi)):
            raise InvalidSpec("psi sampler returned NaN")
        if np.any(psi < 0):
            node = np.unravel_index(np.argmin(psi), psi.shape)
            raise InvalidSpec(f"ψ ≥ 0 violated: psi = {psi[node]:.6g} at node {tuple(int(i) for i in node)}")
        psi.setflags(write=False)
        object.__setattr__(self, "psi_values", psi)

    @property
    def psi_field(self) -> GridField:
        return GridField(self.grid, self.psi_values)

    @property
    def phi_field(self) -> GridField:
        return GridField.from_sampler(self.grid, self.phi)

    def with_gamma(self, gamma: float) -> "ProblemSpec":
        return replace(self, gamma=gamma)


def build_problem(config: ProblemConfig) -> ProblemSpec:
    n = config.n
    if config.f.kind == "sigma_root":
        if config.f.l is not None:
            raise InvalidSpec("f.l is only meaningful for quotient operators")
        fspec = SymmetricFunctionSpec.sigma_root(config.f.k, n)
    else:
        if config.f.l is None:
            raise InvalidSpec("quotient operators need f.l")
        fspec = SymmetricFunctionSpec.quotient(config.f.k, config.f.l, n)
    grid = Grid(n=n, extents=tuple(config.grid.extents), m=config.grid.m)
    if config.gamma == 0 and config.allow_gamma_zero:
        logger.warning("gamma = 0 override in effect; second-derivative estimates are best-effort")
    return ProblemSpec(
        fspec=fspec,
        gamma=config.gamma,
        grid=grid,
        psi=config.psi.build(grid),
        phi=config.phi.build(grid),
        schedule=config.schedule,
        newton=config.newton,
        allow_gamma_zero=config.allow_gamma_zero,
        reference=config.reference.build(grid) if config.reference else None,
        name=config.name or "problem",
    )


def _validation_message(err: ValidationError) -> str:
    parts = []
    for item in err.errors():
        loc = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{loc}: {item['msg']}")
    return "; ".join(parts)


def parse_problem_config(text: str) -> ProblemConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidSpec(f"config is not valid JSON (line {e.lineno}, column {e.colno}): {e.msg}") from e
    try:
        return ProblemConfig.model_validate(data)
    except ValidationError as e:
        raise InvalidSpec(f"config schema error: {_validation_message(e)}") from e


def load_problem_config(path: str) -> ProblemConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_problem_config(f.read())


def load_problem(path: str) -> ProblemSpec:
    return build_problem(load_problem_config(path))


# ---------------------------------------------------------------- regulariser


@dataclass(frozen=True)
class Regularizer:
    """Cutoff η: 1 on [0, ε₀/4], 0 on [ε₀/2, ∞), quintic smoothstep in between."""

    eps0: float

    @property
    def _width(self) -> float:
        return self.eps0 / 4.0

    def _s(self, t) -> np.ndarray:
        return np.clip((np.asarray(t, dtype=float) - self.eps0 / 4.0) / self._width, 0.0, 1.0)

    def eta(self, t):
        s = self._s(t)
        return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)

    def d_eta(self, t):
        s = self._s(t)
        return -30.0 * s**2 * (1.0 - s) ** 2 / self._width

    def dd_eta(self, t):
        s = self._s(t)
        inside = (s > 0.0) & (s < 1.0)
        return np.where(inside, -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / self._width**2, 0.0)


def build_eta(eps0: float) -> Regularizer:
    if not np.isfinite(eps0) or eps0 <= 0:
        raise InvalidSpec(f"eps0 must be positive, got {eps0}")
    return Regularizer(float(eps0))


def regularized_rhs(psi: GridField, eps: float, reg: Regularizer) -> GridField:
    """ψ + ε·η(ψ); ε above ε₀/2 would break the subsolution property."""
    if eps < 0:
        raise InvalidSpec(f"eps must be >= 0, got {eps}")
    if eps > 0.5 * reg.eps0 * (1.0 + 1e-12):
        raise InvalidSpec(f"eps = {eps:.6g} exceeds eps0/2 = {0.5 * reg.eps0:.6g}")
    return psi.with_values(psi.values + eps * reg.eta(psi.values))


# ---------------------------------------------------------------- subsolution


@dataclass(frozen=True)
class Subsolution:
    field: GridField
    eps0: float
    A: float
    operator: GridField  # F[ul u]


class SubsolutionFamily:
    """
    ul u_A = h_φ + A·(q - h_q), with h_· the discrete harmonic extension and
    q = ½(|x - x_c|² - R²). The bracket vanishes on ∂Ω, so ul u_A = φ there.
    """

    def __init__(self, p: ProblemSpec):
        grid = p.grid
        self.problem = p
        self.base = harmonic_solve(grid, p.phi)
        x = grid.coordinates()
        q = 0.5 * (np.sum((x - grid.center) ** 2, axis=-1) - grid.circumradius**2)
        q_field = GridField(grid, q)
        self.bump = GridField(grid, q - harmonic_solve(grid, q_field).values)

    def member(self, A: float) -> GridField:
        return self.base.with_values(self.base.values + A * self.bump.values)

    def evaluate(self, A: float) -> Subsolution:
        p = self.problem
        grid = p.grid
        u = self.member(A)
        image = apply_operator(p.fspec, p.gamma, u)
        F = image.values.interior_values
        psi = p.psi_values[grid.interior()]
        slack = 1e-9 * (1.0 + float(np.max(psi)))
        gap = np.where(image.open_mask, F - psi, -np.inf)
        bad = gap < -slack
        if np.any(bad):
            idx = np.unravel_index(np.argmin(gap), gap.shape)
            node = tuple(int(i) + 1 for i in idx)
            lam = image.eigenvalues[idx]
            reason = "not admissible" if not image.open_mask[idx] else f"F = {F[idx]:.6g} < psi = {psi[idx]:.6g}"
            raise SubsolutionFailed(
                f"subsolution with A = {A:g} fails at node {node} ({reason}, λ = {np.round(lam, 6).tolist()})",
                node=node,
                lam=lam,
            )
        return Subsolution(field=u, eps0=float(np.min(F)), A=float(A), operator=image.values)


def build_subsolution(p: ProblemSpec, A: float) -> GridField:
    if not np.isfinite(A) or A < 0:
        raise InvalidSpec(f"subsolution scale A must be >= 0, got {A}")
    return SubsolutionFamily(p).evaluate(A).field


def auto_subsolution(p: ProblemSpec) -> Subsolution:
    """Double A from 1 until ul u_A is admissible with F[ul u_A] ≥ ψ; ε₀ = min F[ul u_A]."""
    if not np.all(np.isfinite(p.psi_values)):
        raise SubsolutionFailed("psi is unbounded on the grid; no subsolution can dominate it")
    family = SubsolutionFamily(p)
    A = 1.0
    last = None
    while A <= MAX_SUBSOLUTION_SCALE:
        try:
            sub = family.evaluate(A)
        except SubsolutionFailed as e:
            last = e
            A *= 2.0
            continue
        logger.info("subsolution found: A=%g, eps0=%.6g", sub.A, sub.eps0)
        return sub
    raise SubsolutionFailed(
        f"no admissible subsolution with A <= 2^30; last failure: {last}",
        node=last.node if last else None,
        lam=last.lam if last else None,
    )


def domain_admissible(n: int, k: int, kappa, R: float) -> bool:
    """(κ_1, ..., κ_{n-1}, R) ∈ Γ_k for the principal curvatures κ of ∂Ω."""
    kappa = np.asarray(kappa, dtype=float).reshape(-1)
    if kappa.size != n - 1:
        raise InvalidSpec(f"need {n - 1} principal curvatures, got {kappa.size}")
    return bool(in_cone(np.append(kappa, R), k, 0.0))
