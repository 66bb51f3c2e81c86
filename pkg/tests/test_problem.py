import json

import numpy as np
import pytest

from conftest import bundled, problem_from, with_m
from discretize import Grid, apply_operator
from errors import InvalidSpec, SubsolutionFailed
from problem import (
    EpsSchedule,
    ExpressionSampler,
    SubsolutionFamily,
    auto_subsolution,
    build_eta,
    build_subsolution,
    domain_admissible,
    parse_problem_config,
    regularized_rhs,
)


def test_parse_rejects_bad_json():
    with pytest.raises(InvalidSpec, match="line 2"):
        parse_problem_config('{\n  "f": ,\n}')


def test_parse_rejects_unknown_fields():
    config = {**bundled("ma_smooth.json"), "colour": "blue"}
    with pytest.raises(InvalidSpec, match="colour"):
        parse_problem_config(json.dumps(config))


def test_parse_rejects_bad_sampler_params():
    config = bundled("degenerate_ball.json")
    config["psi"] = {"kind": "bump_vanishing", "params": {"radius": -1.0}}
    with pytest.raises(InvalidSpec, match="config schema error"):
        parse_problem_config(json.dumps(config))


def test_gamma_zero_needs_override():
    config = bundled("ma_smooth.json")
    config.pop("allow_gamma_zero")
    with pytest.raises(InvalidSpec, match="Let γ > 0"):
        problem_from(config)


def test_negative_psi_rejected():
    config = bundled("quotient_smooth.json")
    config["psi"] = {"kind": "constant", "params": {"value": -1.0}}
    with pytest.raises(InvalidSpec, match="ψ ≥ 0 violated"):
        problem_from(config)


def test_quotient_needs_l():
    config = bundled("quotient_smooth.json")
    config["f"] = {"kind": "quotient", "k": 2}
    with pytest.raises(InvalidSpec):
        problem_from(config)


def test_sampler_center_defaults_to_domain_center():
    p = problem_from(bundled("degenerate_ball.json"))
    assert p.psi.center == (0.5, 0.5)
    # vanishing ball around the center
    center_node = (p.grid.m // 2,) * 2
    assert p.psi_values[center_node] == 0.0
    assert p.psi_values[0, 0] > 0.0


def test_expression_sampler():
    x = np.array([[0.5, 2.0], [1.0, 1.0]])
    np.testing.assert_allclose(ExpressionSampler("x * y + sin(pi * x)")(x), [2.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(ExpressionSampler("3")(x), [3.0, 3.0])
    with pytest.raises(InvalidSpec):
        ExpressionSampler("x +* y")(x)


def test_schedule_values():
    assert EpsSchedule().values(2.0) == pytest.approx([1.0 * 0.25**j for j in range(7)])
    assert EpsSchedule(steps=2, limit=True).values(1.0) == [0.5, 0.125, 0.0]


def test_eta_profile():
    reg = build_eta(1.0)
    assert reg.eta(0.0) == 1.0
    assert reg.eta(0.25) == 1.0
    assert reg.eta(0.5) == 0.0
    assert reg.eta(3.0) == 0.0
    assert reg.eta(0.375) == pytest.approx(0.5)
    t = np.linspace(0.0, 1.0, 2001)
    eta = reg.eta(t)
    assert np.all(np.diff(eta) <= 0)
    assert np.max(np.abs(reg.d_eta(t))) <= 7.5 + 1e-9
    assert np.max(np.abs(reg.dd_eta(t))) <= 92.4
    # derivative consistent with the profile
    mid = np.linspace(0.26, 0.49, 50)
    fd = (reg.eta(mid + 1e-7) - reg.eta(mid - 1e-7)) / 2e-7
    np.testing.assert_allclose(reg.d_eta(mid), fd, atol=1e-5)


def test_eta_scales_with_eps0():
    reg = build_eta(0.1)
    assert np.max(np.abs(reg.d_eta(np.linspace(0, 0.1, 1001)))) <= 75.0 + 1e-6
    with pytest.raises(InvalidSpec):
        build_eta(0.0)


def test_regularized_rhs():
    p = problem_from(with_m(bundled("degenerate_ball.json"), 9))
    reg = build_eta(2.0)
    rhs = regularized_rhs(p.psi_field, 0.5, reg)
    zero = p.psi_values == 0.0
    np.testing.assert_allclose(rhs.values[zero], 0.5)
    assert np.all(rhs.values >= p.psi_values)
    with pytest.raises(InvalidSpec):
        regularized_rhs(p.psi_field, 1.5, reg)
    with pytest.raises(InvalidSpec):
        regularized_rhs(p.psi_field, -0.1, reg)


def test_auto_subsolution_quadratic_data():
    p = problem_from(with_m(bundled("ma_smooth.json"), 17))
    sub = auto_subsolution(p)
    assert sub.A == 1.0
    # ul u = φ when φ - q is affine
    np.testing.assert_allclose(sub.field.values, p.phi_field.values, atol=1e-9)
    assert sub.eps0 == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(sub.field.values[p.grid.boundary_mask()], p.phi_field.values[p.grid.boundary_mask()])


def test_subsolution_slack_only_absorbs_rounding():
    config = with_m(bundled("ma_smooth.json"), 17)
    family = SubsolutionFamily(problem_from(config))
    # F[ul u_1] = 1 up to rounding: accepted at equality with ψ ≡ 1
    assert family.evaluate(1.0).A == 1.0
    config["psi"] = {"kind": "constant", "params": {"value": 1.0 + 1e-6}}
    with pytest.raises(SubsolutionFailed, match="< psi"):
        SubsolutionFamily(problem_from(config)).evaluate(1.0)


def test_subsolution_is_admissible_and_dominates_psi():
    p = problem_from(with_m(bundled("degenerate_ball.json"), 17))
    sub = auto_subsolution(p)
    image = apply_operator(p.fspec, p.gamma, sub.field)
    assert np.all(image.open_mask)
    assert np.all(image.values.interior_values >= p.psi_values[p.grid.interior()] - 1e-9)
    assert sub.eps0 == pytest.approx(np.min(image.values.interior_values))


def test_subsolution_monotone_in_A():
    p = problem_from(with_m(bundled("affine_zero.json"), 17))
    F1 = apply_operator(p.fspec, p.gamma, build_subsolution(p, 1.0)).values.interior_values
    F2 = apply_operator(p.fspec, p.gamma, build_subsolution(p, 2.0)).values.interior_values
    assert np.all(F2 >= F1)
    # φ affine: ul u_A = φ + A·bump and f is 1-homogeneous
    np.testing.assert_allclose(F2, 2.0 * F1, rtol=1e-8)


def test_subsolution_fails_for_huge_psi():
    config = with_m(bundled("quotient_smooth.json"), 9)
    config["psi"] = {"kind": "constant", "params": {"value": 1e15}}
    with pytest.raises(SubsolutionFailed) as info:
        auto_subsolution(problem_from(config))
    assert info.value.node is not None


def test_build_subsolution_rejects_negative_scale():
    p = problem_from(with_m(bundled("affine_zero.json"), 9))
    with pytest.raises(InvalidSpec):
        build_subsolution(p, -1.0)


def test_domain_admissible():
    assert domain_admissible(2, 2, [1.0], 1.0)
    assert domain_admissible(3, 2, [0.0, 0.0], 1.0) is False
    assert domain_admissible(3, 1, [0.0, 0.0], 1.0)
    with pytest.raises(InvalidSpec):
        domain_admissible(3, 2, [1.0], 1.0)


def test_grid_from_config():
    p = problem_from(bundled("ma_smooth.json"))
    assert p.grid == Grid(n=2, extents=(1.0, 1.0), m=65)
    assert p.with_gamma(0.5).gamma == 0.5
