import json
import os

import numpy as np
import pytest

from problem import build_problem, parse_problem_config


CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def bundled(name: str) -> dict:
    with open(os.path.join(CONFIG_DIR, name), encoding="utf-8") as f:
        return json.load(f)


def problem_from(config: dict, **overrides):
    data = {**config, **overrides}
    return build_problem(parse_problem_config(json.dumps(data)))


def with_m(config: dict, m: int) -> dict:
    return {**config, "grid": {**config["grid"], "m": m}}


@pytest.fixture
def write_config(tmp_path):
    def _write(config: dict, name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(config, indent=2), encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def manufactured_solution(grid) -> np.ndarray:
    x, y = grid.points().T
    return 0.5 * (x**2 + y**2) + 0.05 * np.sin(np.pi * x) * np.sin(np.pi * y)


def manufactured_config(m: int, gamma: float = 0.0) -> dict:
    """
    Monge-Ampère problem with exact solution u* = ½|x|² + 0.05 sin(πx) sin(πy).
    ψ = sqrt(det(D²u* + γΔu*·I)); the γ shift scales the diagonal by 1 + 2γ.
    """
    g = 1.0 + 2.0 * gamma
    config = with_m(bundled("ma_smooth.json"), m)
    config["gamma"] = gamma
    if gamma > 0:
        config.pop("allow_gamma_zero")
    config["psi"] = {
        "kind": "expression",
        "params": {
            "expr": f"sqrt(({g!r} * (1 - 0.05 * pi**2 * sin(pi * x) * sin(pi * y)))**2"
            " - (0.05 * pi**2 * cos(pi * x) * cos(pi * y))**2)"
        },
    }
    config["phi"] = {
        "kind": "expression",
        "params": {"expr": "0.5 * (x**2 + y**2) + 0.05 * sin(pi * x) * sin(pi * y)"},
    }
    config.pop("reference")
    return config
