import numpy as np
import pandas as pd
import pytest

from discretize import (
    Grid,
    GridField,
    Region,
    apply_linear,
    apply_operator,
    boundary_second_difference,
    harmonic_solve,
    hessian_fd,
    hessian_field,
    laplacian_field,
    max_second_difference,
    solve_dirichlet,
)
from errors import InvalidIndex, InvalidInput, InvalidSpec
from statistical import observed_order
from symfunc import BOUNDARY, OPEN, SymmetricFunctionSpec


def _quadratic(grid, M, b=None, c=0.0):
    x = grid.points()
    b = np.zeros(grid.n) if b is None else np.asarray(b)
    values = 0.5 * np.einsum("pi,ij,pj->p", x, M, x) + x @ b + c
    return GridField(grid, values)


def test_grid_validation():
    with pytest.raises(InvalidSpec):
        Grid(n=2, extents=(1.0, 1.0), m=4)
    with pytest.raises(InvalidSpec):
        Grid(n=4, extents=(1.0,) * 4, m=9)
    with pytest.raises(InvalidSpec):
        Grid(n=2, extents=(1.0, -1.0), m=9)
    grid = Grid(n=2, extents=(1.0, 2.0), m=9)
    assert grid.spacing == (0.125, 0.25)
    assert grid.h == 0.25
    assert grid.points().shape == (81, 2)


def test_gridfield_rejects_non_finite():
    grid = Grid(n=2, extents=(1.0, 1.0), m=5)
    values = np.zeros(grid.shape)
    values[2, 2] = np.inf
    with pytest.raises(InvalidInput):
        GridField(grid, values)
    with pytest.raises(InvalidInput):
        GridField(grid, np.zeros(7))


@pytest.mark.parametrize("n", [2, 3])
def test_hessian_exact_on_quadratics(n):
    grid = Grid(n=n, extents=(1.0,) * n, m=7)
    M = np.array([[2.0, 0.3, -0.1], [0.3, 1.0, 0.4], [-0.1, 0.4, 3.0]])[:n, :n]
    u = _quadratic(grid, M, b=np.ones(n), c=2.0)
    H = hessian_field(u)
    np.testing.assert_allclose(H, np.broadcast_to(M, H.shape), atol=1e-9)
    node = (2,) * n
    np.testing.assert_allclose(hessian_fd(u, node), M, atol=1e-9)
    np.testing.assert_allclose(hessian_fd(u, node), hessian_fd(u, node).T)


def test_hessian_fd_rejects_boundary_nodes():
    grid = Grid(n=2, extents=(1.0, 1.0), m=7)
    u = GridField(grid, np.zeros(grid.shape))
    with pytest.raises(InvalidIndex):
        hessian_fd(u, (0, 3))
    with pytest.raises(InvalidIndex):
        hessian_fd(u, (3, 6))


def test_hessian_second_order_convergence():
    errors, hs = [], []
    for m in (17, 33, 65):
        grid = Grid(n=2, extents=(1.0, 1.0), m=m)
        x, y = grid.points().T
        u = GridField(grid, np.sin(np.pi * x) * np.cos(2.0 * y))
        xi, yi = grid.coordinates()[grid.interior()].reshape(-1, 2).T
        exact = np.stack(
            [
                -np.pi**2 * np.sin(np.pi * xi) * np.cos(2 * yi),
                -2 * np.pi * np.cos(np.pi * xi) * np.sin(2 * yi),
                -4 * np.sin(np.pi * xi) * np.cos(2 * yi),
            ],
            axis=-1,
        )
        H = hessian_field(u).reshape(-1, 2, 2)
        approx = np.stack([H[:, 0, 0], H[:, 0, 1], H[:, 1, 1]], axis=-1)
        errors.append(np.max(np.abs(approx - exact)))
        hs.append(grid.h)
    assert observed_order(hs, errors) == pytest.approx(2.0, abs=0.3)


def test_apply_operator_status():
    grid = Grid(n=2, extents=(1.0, 1.0), m=9)
    ma = SymmetricFunctionSpec.sigma_root(2, 2)
    image = apply_operator(ma, 0.0, _quadratic(grid, np.eye(2)))
    np.testing.assert_allclose(image.values.interior_values, 1.0)
    assert np.all(image.status == OPEN)
    assert np.all(image.values.values[grid.boundary_mask()] == 0.0)

    flat = apply_operator(ma, 0.0, _quadratic(grid, np.diag([1.0, 0.0])))
    assert np.all(flat.status == BOUNDARY)
    assert flat.boundary_count == 49

    concave = apply_operator(ma, 0.0, _quadratic(grid, -np.eye(2)))
    assert concave.outside_count == 49
    assert np.all(concave.inadmissible(1e-10))


def test_apply_operator_dimension_mismatch():
    grid = Grid(n=3, extents=(1.0,) * 3, m=5)
    with pytest.raises(InvalidSpec):
        apply_operator(SymmetricFunctionSpec.sigma_root(2, 2), 0.0, GridField(grid, np.zeros(grid.shape)))


def test_solve_dirichlet_identity_recovers_rhs(rng):
    grid = Grid(n=2, extents=(1.0, 1.0), m=17)
    coeffs = np.broadcast_to(np.eye(2), grid.interior_shape + (2, 2))
    rhs = rng.normal(size=grid.interior_shape)
    v = solve_dirichlet(grid, coeffs, rhs, goal=1e-10)
    np.testing.assert_allclose(apply_linear(grid, coeffs, v), rhs, atol=1e-9)
    assert np.all(v.values[grid.boundary_mask()] == 0.0)


def test_solve_dirichlet_anisotropic_with_boundary_data():
    grid = Grid(n=2, extents=(1.0, 1.0), m=17)
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    exact = _quadratic(grid, np.array([[1.0, 0.5], [0.5, -0.3]]), b=[0.2, 0.1])
    coeffs = np.broadcast_to(M, grid.interior_shape + (2, 2))
    rhs = apply_linear(grid, coeffs, exact)
    v = solve_dirichlet(grid, coeffs, rhs, boundary=exact, goal=1e-10)
    np.testing.assert_allclose(v.values, exact.values, atol=1e-9)


def test_harmonic_solve():
    grid = Grid(n=2, extents=(1.0, 1.0), m=17)
    h = harmonic_solve(grid, lambda x: x[:, 0] * x[:, 1] + 2.0 * x[:, 0])
    x, y = grid.points().T
    np.testing.assert_allclose(h.flat, x * y + 2.0 * x, atol=1e-9)
    assert np.max(np.abs(laplacian_field(h))) < 1e-10 * 4.0

    data = _quadratic(grid, np.eye(2))
    h2 = harmonic_solve(grid, data)
    np.testing.assert_array_equal(h2.values[grid.boundary_mask()], data.values[grid.boundary_mask()])


def test_harmonic_solve_3d():
    grid = Grid(n=3, extents=(1.0, 1.0, 1.0), m=9)
    h = harmonic_solve(grid, lambda x: 1.0 + x[:, 0] - 2.0 * x[:, 2])
    x = grid.points()
    np.testing.assert_allclose(h.flat, 1.0 + x[:, 0] - 2.0 * x[:, 2], atol=1e-9)


@pytest.mark.parametrize("n, m", [(2, 17), (3, 9)])
def test_harmonic_solve_maximum_principle(n, m, rng):
    grid = Grid(n=n, extents=(1.0,) * n, m=m)
    ring = grid.boundary_mask()
    values = np.zeros(grid.shape)
    values[ring] = rng.uniform(-1.0, 3.0, size=int(ring.sum()))
    h = harmonic_solve(grid, GridField(grid, values))
    inside = h.interior_values
    assert inside.max() <= values[ring].max() + 1e-9
    assert inside.min() >= values[ring].min() - 1e-9
    # no interior extremum for non-constant data
    assert inside.max() < values[ring].max()
    assert inside.min() > values[ring].min()


def test_regions():
    grid = Grid(n=2, extents=(1.0, 1.0), m=9)
    u = _quadratic(grid, np.diag([3.0, 1.0]))
    assert max_second_difference(u, Region.all()) == pytest.approx(3.0)
    assert max_second_difference(u, Region.interior(2)) == pytest.approx(3.0)
    with pytest.raises(InvalidIndex):
        Region.interior(0).slices(grid)
    with pytest.raises(InvalidIndex):
        max_second_difference(u, Region.interior(5))


@pytest.mark.parametrize("n", [2, 3])
def test_boundary_second_difference_on_quadratic(n):
    grid = Grid(n=n, extents=(1.0,) * n, m=9)
    M = np.diag([1.0, 2.5, 0.5][:n])
    M[0, 1] = M[1, 0] = 0.25
    u = _quadratic(grid, M)
    assert boundary_second_difference(u) == pytest.approx(np.max(np.abs(np.linalg.eigvalsh(M))), rel=1e-8)


def test_field_json_and_csv(tmp_path):
    grid = Grid(n=2, extents=(1.0, 2.0), m=5)
    u = _quadratic(grid, np.eye(2), c=0.1)
    again = GridField.from_json(u.to_json())
    np.testing.assert_array_equal(again.values, u.values)
    assert again.grid == grid
    assert u.to_json() == again.to_json()

    path = tmp_path / "u.csv"
    u.to_csv(str(path))
    df = pd.read_csv(path, float_precision="round_trip")
    assert list(df.columns) == ["x", "y", "value"]
    np.testing.assert_array_equal(df["value"].to_numpy(), u.flat)


def test_field_json_errors():
    with pytest.raises(InvalidInput, match="line 1"):
        GridField.from_json("{not json")
    with pytest.raises(InvalidInput):
        GridField.from_json('{"grid": {"n": 2, "extents": [1, 1], "m": 5}, "values": [0, 1]}')
