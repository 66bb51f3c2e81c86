import math
from itertools import combinations, permutations

import numpy as np
import pytest

from errors import InvalidSpec, NotInCone
from symfunc import (
    BOUNDARY,
    OPEN,
    OUTSIDE,
    SymmetricFunctionSpec,
    beta_of,
    c10_gap,
    c10_gap_batch,
    elementary_symmetric,
    f_closure,
    f_eval,
    f_grad,
    in_cone,
    normal_vector,
    sigma_k,
)


def _brute_sigma(lam, k):
    return sum(np.prod(c) for c in combinations(lam, k)) if k else 1.0


def test_sigma_k_exact_on_integers():
    assert sigma_k((1, 2, 3), 2) == 11
    assert sigma_k((1, 2, 3), 3) == 6
    assert sigma_k((1, 2, 3), 0) == 1


def test_sigma_k_matches_subset_sums(rng):
    lam = rng.normal(size=6)
    e = elementary_symmetric(lam, 6)
    for k in range(7):
        assert e[k] == pytest.approx(_brute_sigma(lam, k), rel=1e-12, abs=1e-12)


def test_sigma_k_batched_and_large_n(rng):
    lam = rng.uniform(0.5, 1.5, size=(4, 24))
    np.testing.assert_allclose(sigma_k(lam, 24), np.prod(lam, axis=-1), rtol=1e-12)
    np.testing.assert_allclose(sigma_k(lam, 1), lam.sum(axis=-1), rtol=1e-12)


def test_sigma_k_rejects_bad_k():
    with pytest.raises(InvalidSpec):
        sigma_k((1.0, 2.0), 3)


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        SymmetricFunctionSpec.sigma_root(3, 2)
    with pytest.raises(InvalidSpec):
        SymmetricFunctionSpec.quotient(2, 2, 3)
    assert SymmetricFunctionSpec.quotient(3, 1, 3).label == "Quotient(3,1)"


def test_in_cone():
    assert in_cone((1.0, 1.0, -0.4), 2)
    assert not in_cone((1.0, 1.0, -0.5), 2)
    assert in_cone((1.0, 1.0, -0.5), 1)
    assert not in_cone((1.0, -2.0), 1)
    np.testing.assert_array_equal(in_cone(np.array([[1.0, 1.0], [-1.0, 0.5]]), 2), [True, False])


def test_f_eval_values():
    ma = SymmetricFunctionSpec.sigma_root(2, 2)
    assert f_eval(ma, (1.0, 1.0)) == pytest.approx(1.0)
    assert f_eval(ma, (4.0, 1.0)) == pytest.approx(2.0)
    q = SymmetricFunctionSpec.quotient(2, 1, 2)
    assert f_eval(q, (2.0, 2.0)) == pytest.approx(1.0)
    lin = SymmetricFunctionSpec.sigma_root(1, 3)
    assert f_eval(lin, (1.0, 2.0, -0.5)) == pytest.approx(2.5)


def test_f_is_homogeneous(rng):
    spec = SymmetricFunctionSpec.sigma_root(2, 3)
    lam = rng.uniform(0.2, 2.0, size=3)
    assert f_eval(spec, 3.0 * lam) == pytest.approx(3.0 * f_eval(spec, lam))


def test_closure_extension():
    ma = SymmetricFunctionSpec.sigma_root(2, 2)
    values, status = f_closure(ma, np.array([[1.0, 0.0], [1.0, 1.0], [-1.0, -1.0]]))
    np.testing.assert_array_equal(status, [BOUNDARY, OPEN, OUTSIDE])
    assert values[0] == 0.0
    assert f_eval(ma, (1.0, 0.0)) == 0.0
    with pytest.raises(NotInCone):
        f_eval(ma, (-1.0, -1.0))


def test_f_eval_dimension_mismatch():
    with pytest.raises(InvalidSpec):
        f_eval(SymmetricFunctionSpec.sigma_root(2, 3), (1.0, 1.0))


@pytest.mark.parametrize(
    "spec",
    [
        SymmetricFunctionSpec.sigma_root(2, 3),
        SymmetricFunctionSpec.sigma_root(3, 3),
        SymmetricFunctionSpec.quotient(3, 1, 3),
        SymmetricFunctionSpec.quotient(2, 1, 3),
    ],
)
def test_f_grad_matches_finite_differences(spec, rng):
    lam = rng.uniform(0.5, 2.0, size=3)
    grad = f_grad(spec, lam)
    step = 1e-6
    fd = np.array(
        [(f_eval(spec, lam + step * e) - f_eval(spec, lam - step * e)) / (2 * step) for e in np.eye(3)]
    )
    np.testing.assert_allclose(grad, fd, rtol=1e-6)
    # Euler identity for 1-homogeneous f
    assert np.dot(grad, lam) == pytest.approx(f_eval(spec, lam), rel=1e-12)
    assert np.all(grad > 0)


def test_f_grad_requires_open_cone():
    with pytest.raises(NotInCone):
        f_grad(SymmetricFunctionSpec.sigma_root(2, 2), (1.0, 0.0))


def test_normal_and_beta():
    ma = SymmetricFunctionSpec.sigma_root(2, 2)
    nu = normal_vector(ma, (1.0, 1.0))
    np.testing.assert_allclose(nu, [2**-0.5, 2**-0.5])
    assert beta_of(nu) == pytest.approx(1.0 / (2.0 * np.sqrt(2.0)))
    assert beta_of(np.array([0.1, np.sqrt(0.99)])) == pytest.approx(0.05)
    with pytest.raises(InvalidSpec):
        beta_of((1.0, 0.0))


def test_c10_gap_same_point_is_inactive():
    spec = SymmetricFunctionSpec.sigma_root(2, 2)
    gap = c10_gap(spec, (1.0, 2.0), (1.0, 2.0))
    assert not gap.hypothesis_active
    assert gap.lhs == pytest.approx(0.0)


def test_c10_gap_positive_when_active():
    spec = SymmetricFunctionSpec.sigma_root(2, 2)
    # normals far apart, μ dominates in the f sense
    gap = c10_gap(spec, mu=(4.0, 4.0), lam=(0.05, 3.0))
    assert gap.hypothesis_active
    assert gap.theta_hat > 0


def test_c10_gap_batch_agrees_with_scalar(rng):
    spec = SymmetricFunctionSpec.quotient(2, 1, 2)
    mu = rng.uniform(0.5, 2.0, size=(5, 2))
    lam = rng.uniform(0.5, 2.0, size=(5, 2))
    active, lhs, f_sum = c10_gap_batch(spec, mu, lam)
    for i in range(5):
        gap = c10_gap(spec, mu[i], lam[i])
        assert gap.hypothesis_active == active[i]
        assert gap.lhs == pytest.approx(lhs[i])
        assert gap.f_sum == pytest.approx(f_sum[i])


SPECS = [
    SymmetricFunctionSpec.sigma_root(1, 3),
    SymmetricFunctionSpec.sigma_root(2, 3),
    SymmetricFunctionSpec.sigma_root(3, 3),
    SymmetricFunctionSpec.sigma_root(2, 4),
    SymmetricFunctionSpec.quotient(2, 1, 3),
    SymmetricFunctionSpec.quotient(3, 1, 4),
]


def cone_points(rng, spec, count, margin=1e-3):
    """Points of Γ_k with every σ_j, j <= k, above `margin`, by rejection from a box."""
    out = np.empty((0, spec.n))
    while len(out) < count:
        lam = rng.uniform(-1.0, 2.0, size=(4 * count, spec.n))
        out = np.concatenate([out, lam[in_cone(lam, spec.k, tol=margin)]])
    return out[:count]


def test_sigma_k_integer_oracle(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        lam = rng.integers(-5, 6, size=n)
        ints = [int(v) for v in lam]
        for k in range(n + 1):
            exact = sum(math.prod(c) for c in combinations(ints, k))
            assert sigma_k(lam, k) == exact
            assert sigma_k(lam.astype(float), k) == float(exact)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.label}-n{s.n}")
def test_f_is_symmetric_under_permutation(spec, rng):
    lam = cone_points(rng, spec, 1)[0]
    value = f_eval(spec, lam)
    grad = f_grad(spec, lam)
    for perm in permutations(range(spec.n)):
        perm = list(perm)
        assert f_eval(spec, lam[perm]) == pytest.approx(value, rel=1e-10)
        np.testing.assert_allclose(f_grad(spec, lam[perm]), grad[perm], rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.label}-n{s.n}")
def test_f_is_midpoint_concave(spec, rng):
    lam = cone_points(rng, spec, 500)
    mu = cone_points(rng, spec, 500)
    mid = f_eval(spec, 0.5 * (lam + mu))
    avg = 0.5 * (f_eval(spec, lam) + f_eval(spec, mu))
    assert np.all(mid >= avg - 1e-9 * (1.0 + np.abs(avg)))


def test_f_vanishes_approaching_cone_boundary():
    spec = SymmetricFunctionSpec.sigma_root(2, 3)
    # σ₂(1, 1, t - 1/2) = 2t, so f = sqrt(2t)
    ts = np.array([1e-1, 1e-2, 1e-4, 1e-6, 1e-8])
    values = f_eval(spec, np.stack([np.ones_like(ts), np.ones_like(ts), ts - 0.5], axis=-1))
    np.testing.assert_allclose(values, np.sqrt(2 * ts), rtol=1e-6)
    assert np.all(np.diff(values) < 0)
    assert f_eval(spec, (1.0, 1.0, -0.5)) == 0.0

    q = SymmetricFunctionSpec.quotient(2, 1, 2)
    near = f_eval(q, np.array([[1.0, t] for t in (1e-2, 1e-5, 1e-9)]))
    assert np.all(np.diff(near) < 0)
    assert near[-1] < 1e-8


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.label}-n{s.n}")
def test_structure_over_many_cone_points(spec, rng):
    lam = cone_points(rng, spec, 10_000)
    values = f_eval(spec, lam)
    grad = f_grad(spec, lam)
    assert np.all(values > 0)
    assert np.all(grad > 0)
    np.testing.assert_allclose(np.sum(grad * lam, axis=-1), values, rtol=1e-9)
    np.testing.assert_allclose(f_eval(spec, 2.5 * lam), 2.5 * values, rtol=1e-9)
    nu = normal_vector(spec, lam)
    np.testing.assert_allclose(np.linalg.norm(nu, axis=-1), 1.0, rtol=1e-12)
    assert np.all(beta_of(nu) > 0)
