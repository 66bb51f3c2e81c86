"""
Uniform rectangular grids, node fields and the finite-difference stencils built on them.
"""
import json
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from errors import InvalidIndex, InvalidInput, InvalidSpec, NonConvergence
from krylov import krylov_solve
from spectral import eigen_sym, gamma_shift
from symfunc import BOUNDARY, OPEN, OUTSIDE, SymmetricFunctionSpec, elementary_symmetric, f_closure

logger = logging.getLogger(__name__)

Sampler = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Grid:
    """Node-centred grid on [0, L_1] x ... x [0, L_n] with m nodes per axis."""

    n: int
    extents: Tuple[float, ...]
    m: int

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        if self.n not in (2, 3):
            raise InvalidSpec(f"grid dimension must be 2 or 3, got {self.n}")
        if len(self.extents) != self.n:
            raise InvalidSpec(f"need {self.n} extents, got {len(self.extents)}")
        if any(not np.isfinite(e) or e <= 0 for e in self.extents):
            raise InvalidSpec(f"extents must be positive, got {self.extents}")
        if self.m < 5:
            raise InvalidSpec(f"m must be >= 5, got {self.m}")

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(e / (self.m - 1) for e in self.extents)

    @property
    def h(self) -> float:
        return max(self.spacing)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.m,) * self.n

    @property
    def interior_shape(self) -> Tuple[int, ...]:
        return (self.m - 2,) * self.n

    @property
    def size(self) -> int:
        return self.m**self.n

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.extents) / 2.0

    @property
    def circumradius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.extents))

    def axes(self):
        return [np.linspace(0.0, e, self.m) for e in self.extents]

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape grid.shape + (n,)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        """Row-major flat list of node coordinates, shape (size, n)."""
        return self.coordinates().reshape(-1, self.n)

    def interior(self) -> Tuple[slice, ...]:
        return (slice(1, self.m - 1),) * self.n

    def boundary_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        mask[self.interior()] = False
        return mask

    def to_dict(self) -> Dict:
        return {"n": self.n, "extents": list(self.extents), "m": self.m}


@dataclass(frozen=True)
class GridField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        try:
            values = np.array(self.values, dtype=float).reshape(self.grid.shape)
        except ValueError as e:
            raise InvalidInput(f"values do not fit a grid of shape {self.grid.shape}: {e}") from e
        if not np.all(np.isfinite(values)):
            raise InvalidInput("grid field has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_sampler(cls, grid: Grid, sampler: Sampler) -> "GridField":
        return cls(grid, np.asarray(sampler(grid.points()), dtype=float).reshape(grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior()]

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(self.grid, values)

    def with_boundary(self, other: "GridField") -> "GridField":
        values = np.array(self.values)
        mask = self.grid.boundary_mask()
        values[mask] = other.values[mask]
        return GridField(self.grid, values)

    def to_dict(self) -> Dict:
        return {"grid": self.grid.to_dict(), "values": self.flat.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict) -> "GridField":
        try:
            g = data["grid"]
            grid = Grid(n=int(g["n"]), extents=tuple(g["extents"]), m=int(g["m"]))
            values = np.asarray(data["values"], dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInput(f"malformed grid field: {e}") from e
        if values.size != grid.size:
            raise InvalidInput(f"expected {grid.size} values for the grid, got {values.size}")
        return cls(grid, values)

    @classmethod
    def from_json(cls, text: str) -> "GridField":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidInput(f"invalid JSON at line {e.lineno}: {e.msg}") from e
        return cls.from_dict(data)

    def to_frame(self) -> pd.DataFrame:
        columns = ["x", "y", "z"][: self.grid.n]
        df = pd.DataFrame(self.grid.points(), columns=columns)
        df["value"] = self.flat
        return df

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class Region:
    """Node set for sup-norm statistics: interior nodes at least `margin` layers from ∂Ω, or all interior nodes."""

    margin: Optional[int] = None

    @classmethod
    def interior(cls, margin: int) -> "Region":
        return cls(margin)

    @classmethod
    def all(cls) -> "Region":
        return cls(None)

    def slices(self, grid: Grid) -> Tuple[slice, ...]:
        """Slices into the interior block of shape grid.interior_shape."""
        if self.margin is None:
            return (slice(None),) * grid.n
        if self.margin < 1:
            raise InvalidIndex(f"region margin must be >= 1 node layer, got {self.margin}")
        lo = self.margin - 1
        hi = grid.m - 2 - lo
        if hi <= lo:
            raise InvalidIndex(f"margin {self.margin} leaves no nodes on a grid with m={grid.m}")
        return (slice(lo, hi),) * grid.n


def _shifted(values: np.ndarray, offset) -> np.ndarray:
    """Interior block of `values` shifted by an integer offset per axis."""
    m = values.shape[0]
    return values[tuple(slice(1 + o, m - 1 + o) for o in offset)]


def _unit(n: int, i: int, scale: int = 1):
    off = [0] * n
    off[i] = scale
    return off


def hessian_field(field: GridField) -> np.ndarray:
    """
    Finite-difference Hessian at every interior node, shape interior_shape + (n, n).

    Central second differences on the diagonal and the symmetric 4-point
    cross stencil off the diagonal; exact on quadratics.
    """
    grid = field.grid
    n = grid.n
    u = field.values
    hs = grid.spacing
    H = np.zeros(grid.interior_shape + (n, n))
    center = _shifted(u, [0] * n)
    for i in range(n):
        plus = _shifted(u, _unit(n, i, 1))
        minus = _shifted(u, _unit(n, i, -1))
        H[..., i, i] = (plus - 2.0 * center + minus) / hs[i] ** 2
    for i, j in combinations(range(n), 2):
        pp = [0] * n
        pp[i], pp[j] = 1, 1
        pm = [0] * n
        pm[i], pm[j] = 1, -1
        mp = [0] * n
        mp[i], mp[j] = -1, 1
        mm = [0] * n
        mm[i], mm[j] = -1, -1
        cross = (_shifted(u, pp) - _shifted(u, pm) - _shifted(u, mp) + _shifted(u, mm)) / (
            4.0 * hs[i] * hs[j]
        )
        H[..., i, j] = cross
        H[..., j, i] = cross
    return H


def hessian_fd(field: GridField, node) -> np.ndarray:
    grid = field.grid
    node = tuple(int(i) for i in node)
    if len(node) != grid.n:
        raise InvalidIndex(f"node {node} does not match grid dimension {grid.n}")
    if any(i < 1 or i > grid.m - 2 for i in node):
        raise InvalidIndex(f"node {node} is not strictly interior")
    return hessian_field(field)[tuple(i - 1 for i in node)]


def laplacian_field(field: GridField) -> np.ndarray:
    return np.trace(hessian_field(field), axis1=-2, axis2=-1)


@dataclass(frozen=True)
class OperatorImage:
    """F_h[u] at interior nodes with the closure status and σ_1..σ_k of λ(U_h)."""

    values: GridField  # boundary entries are 0
    status: np.ndarray  # interior_shape, symfunc OPEN / BOUNDARY / OUTSIDE
    sigma: np.ndarray  # interior_shape + (k,)
    eigenvalues: np.ndarray  # interior_shape + (n,)
    hessian: np.ndarray  # interior_shape + (n, n)

    def inadmissible(self, tol: float) -> np.ndarray:
        return np.any(self.sigma < -tol, axis=-1)

    @property
    def open_mask(self) -> np.ndarray:
        return self.status == OPEN

    @property
    def boundary_count(self) -> int:
        return int(np.sum(self.status == BOUNDARY))

    @property
    def outside_count(self) -> int:
        return int(np.sum(self.status == OUTSIDE))


def apply_operator(spec: SymmetricFunctionSpec, gamma: float, u: GridField) -> OperatorImage:
    grid = u.grid
    if spec.n != grid.n:
        raise InvalidSpec(f"operator dimension {spec.n} does not match grid dimension {grid.n}")
    H = hessian_field(u)
    lam = eigen_sym(gamma_shift(H, gamma)).values
    f, status = f_closure(spec, lam)
    sigma = elementary_symmetric(lam, spec.k)[..., 1:]
    values = np.zeros(grid.shape)
    values[grid.interior()] = f
    return OperatorImage(
        values=GridField(grid, values),
        status=status,
        sigma=sigma,
        eigenvalues=lam,
        hessian=H,
    )


def apply_linear(grid: Grid, coeffs: np.ndarray, field: GridField) -> np.ndarray:
    """Σ a_ij D_ij v at interior nodes for node-wise coefficients a (interior_shape + (n, n))."""
    return np.einsum("...ij,...ij->...", coeffs, hessian_field(field))


def _interior_ids(grid: Grid) -> np.ndarray:
    return np.arange(int(np.prod(grid.interior_shape))).reshape(grid.interior_shape)


def assemble_operator(grid: Grid, coeffs: np.ndarray) -> sp.csr_matrix:
    """
    Sparse matrix of v -> Σ a_ij D_ij v on interior unknowns.

    Couplings to boundary nodes are dropped; callers move them to the right
    hand side (see `boundary_coupling`).
    """
    n = grid.n
    coeffs = np.asarray(coeffs, dtype=float).reshape(grid.interior_shape + (n, n))
    hs = grid.spacing
    ids = _interior_ids(grid)
    index = np.indices(grid.interior_shape)
    rows, cols, vals = [], [], []

    def couple(offset, weight):
        target = [index[a] + offset[a] for a in range(n)]
        inside = np.ones(grid.interior_shape, dtype=bool)
        for a in range(n):
            inside &= (target[a] >= 0) & (target[a] <= grid.m - 3)
        clipped = tuple(np.clip(t, 0, grid.m - 3) for t in target)
        rows.append(ids[inside])
        cols.append(ids[clipped][inside])
        vals.append(np.broadcast_to(weight, grid.interior_shape)[inside])

    diag = np.zeros(grid.interior_shape)
    for i in range(n):
        w = coeffs[..., i, i] / hs[i] ** 2
        diag -= 2.0 * w
        couple(_unit(n, i, 1), w)
        couple(_unit(n, i, -1), w)
    couple([0] * n, diag)
    for i, j in combinations(range(n), 2):
        # a_ij and a_ji both hit the cross stencil
        w = 2.0 * coeffs[..., i, j] / (4.0 * hs[i] * hs[j])
        for si, sj, sign in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
            off = [0] * n
            off[i], off[j] = si, sj
            couple(off, sign * w)

    size = ids.size
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsr()


def boundary_coupling(grid: Grid, coeffs: np.ndarray, boundary: GridField) -> np.ndarray:
    """Contribution of the boundary ring of `boundary` to Σ a_ij D_ij at interior nodes."""
    values = np.array(boundary.values)
    values[grid.interior()] = 0.0
    return apply_linear(grid, coeffs, GridField(grid, values))


def solve_dirichlet(
    grid: Grid,
    coeffs: np.ndarray,
    rhs: np.ndarray,
    boundary: Optional[GridField] = None,
    goal: Optional[float] = None,
    rtol: float = 1e-10,
) -> GridField:
    """Solve Σ a_ij D_ij v = rhs in the interior with v = boundary on the ring."""
    rhs = np.asarray(rhs, dtype=float).reshape(grid.interior_shape)
    if boundary is None:
        boundary = GridField(grid, np.zeros(grid.shape))
    b = rhs - boundary_coupling(grid, coeffs, boundary)
    A = assemble_operator(grid, coeffs)
    x, history = krylov_solve(A, b.reshape(-1), rtol=rtol, goal=goal)
    logger.debug("dirichlet solve: %d rounds, residual %.3e", len(history), history[-1])
    values = np.array(boundary.values)
    values[grid.interior()] = x.reshape(grid.interior_shape)
    return GridField(grid, values)


def harmonic_solve(grid: Grid, phi: Union[Sampler, GridField]) -> GridField:
    """Discrete harmonic extension of the boundary data φ (5-point / 7-point Laplacian)."""
    if isinstance(phi, GridField):
        if phi.grid != grid:
            raise InvalidInput("boundary data lives on a different grid")
        data = phi
    else:
        data = GridField.from_sampler(grid, phi)
    scale = 1.0 + float(np.max(np.abs(data.values[grid.boundary_mask()])))
    coeffs = np.broadcast_to(np.eye(grid.n), grid.interior_shape + (grid.n, grid.n))
    h = solve_dirichlet(grid, coeffs, np.zeros(grid.interior_shape), boundary=data, goal=5e-11 * scale)
    residual = float(np.max(np.abs(laplacian_field(h))))
    if residual >= 1e-10 * scale:
        raise NonConvergence(f"harmonic solve residual {residual:.3e} above contract", trace=[residual])
    return h


def max_second_difference(u: GridField, region: Region) -> float:
    """Max over the region of the spectral radius of the discrete Hessian."""
    H = hessian_field(u)[region.slices(u.grid)]
    if H.size == 0:
        raise InvalidIndex("empty region")
    lam = eigen_sym(H).values
    return float(np.max(np.abs(lam)))


def boundary_hessians(u: GridField) -> np.ndarray:
    """
    Second-derivative matrices at face-interior boundary nodes, shape (count, n, n).

    Normal second derivative by the one-sided formula (2u_0 - 5u_1 + 4u_2 - u_3)/h²,
    tangential ones centred along the face, mixed ones by centred tangential
    differencing of the one-sided normal derivative. Nodes on edges and corners
    are skipped.
    """
    grid = u.grid
    n = grid.n
    m = grid.m
    hs = grid.spacing
    out = []
    for axis in range(n):
        for side in (0, 1):
            # move the normal axis first, with index 0 on the face
            v = np.moveaxis(u.values, axis, 0)
            if side == 1:
                v = v[::-1]
            tang = [a for a in range(n) if a != axis]
            hn = hs[axis]
            ht = [hs[a] for a in tang]
            inner = (slice(1, m - 1),) * (n - 1)
            layers = [v[i] for i in range(4)]
            unn = (2 * layers[0] - 5 * layers[1] + 4 * layers[2] - layers[3]) / hn**2
            un = (-3 * layers[0] + 4 * layers[1] - layers[2]) / (2 * hn)
            if side == 1:
                un = -un
            count = (m - 2) ** (n - 1)
            Hb = np.zeros((m - 2,) * (n - 1) + (n, n))
            # local frame: index 0 is the normal axis, then the tangential axes in order
            Hb[..., 0, 0] = unn[inner]
            face = layers[0]
            for a in range(n - 1):
                plus = [0] * (n - 1)
                plus[a] = 1
                minus = [0] * (n - 1)
                minus[a] = -1
                Hb[..., a + 1, a + 1] = (
                    _face_shift(face, plus) - 2 * face[inner] + _face_shift(face, minus)
                ) / ht[a] ** 2
                mixed = (_face_shift(un, plus) - _face_shift(un, minus)) / (2 * ht[a])
                Hb[..., 0, a + 1] = mixed
                Hb[..., a + 1, 0] = mixed
                for b in range(a + 1, n - 1):
                    pp = [0] * (n - 1)
                    pp[a], pp[b] = 1, 1
                    pm = [0] * (n - 1)
                    pm[a], pm[b] = 1, -1
                    mp = [0] * (n - 1)
                    mp[a], mp[b] = -1, 1
                    mm = [0] * (n - 1)
                    mm[a], mm[b] = -1, -1
                    cross = (
                        _face_shift(face, pp) - _face_shift(face, pm) - _face_shift(face, mp) + _face_shift(face, mm)
                    ) / (4 * ht[a] * ht[b])
                    Hb[..., a + 1, b + 1] = cross
                    Hb[..., b + 1, a + 1] = cross
            out.append(Hb.reshape(count, n, n))
    return np.concatenate(out, axis=0)


def _face_shift(face: np.ndarray, offset) -> np.ndarray:
    m = face.shape[0]
    return face[tuple(slice(1 + o, m - 1 + o) for o in offset)]


def boundary_second_difference(u: GridField) -> float:
    lam = eigen_sym(boundary_hessians(u)).values
    return float(np.max(np.abs(lam)))
