"""Shared scenario fixtures."""

import copy
import json

import pytest

from projectile_ipp.scenario import Scenario, load_scenario, nominal_scenario

# Constant-pitch, drag-free arc: every aerodynamic coefficient is zero, so
# theta and psi never change and the projectile returns to z = 0 after
# roughly 8000 calibers.
BALLISTIC = {
    "projectile": {
        "D": 0.343521, "m": 0.0116, "rho": 0.00238, "g": 32.174,
        "Ixx": 2.85e-5, "Iyy": 2.72e-5,
        "CX0": 0.0, "CDD": 0.0, "CLP": 0.0, "CNA": 0.0, "CYPA": 0.0,
        "CMQ": 0.0, "RMCP": 0.0, "RMCM": 0.0,
    },
    "wind": {"vw": 0.0, "ww": 0.0},
    "noise": {"a1": 1.0, "a2": 1.0, "a3": 1.0},
    "initial": {
        "x": {"mean": 0.0, "sd": 3.0},
        "y": {"mean": 0.0, "sd": 3.0},
        "z": {"mean": 0.0},
        "phi": {"mean": 0.0},
        "theta": {"mean": 0.267, "sd": 0.017},
        "psi": {"mean": 0.0, "sd": 0.002},
        "u": {"mean": 400.0, "sd": 2.0},
        "v": {"mean": 0.0},
        "w": {"mean": 0.0},
        "p": {"mean": 0.0},
        "q": {"mean": 0.0},
        "r": {"mean": 0.0},
    },
    "integration": {"step": 2.0, "max_span": 20000.0, "scheme": "euler"},
}  # fmt: skip


def ballistic_payload(**sections) -> dict:
    """Deep copy of the ballistic scenario with top-level sections merged in."""
    payload = copy.deepcopy(BALLISTIC)
    for name, value in sections.items():
        if isinstance(value, dict) and isinstance(payload.get(name), dict):
            payload[name] = {**payload[name], **value}
        else:
            payload[name] = value
    return payload


def make_ballistic(**sections) -> Scenario:
    return load_scenario(json.dumps(ballistic_payload(**sections)))


@pytest.fixture
def nominal() -> Scenario:
    return nominal_scenario()


@pytest.fixture
def ballistic() -> Scenario:
    return make_ballistic()


@pytest.fixture
def nominal_payload() -> dict:
    return json.loads(
        json.dumps(nominal_scenario().model_dump(mode="json", exclude_none=True))
    )


@pytest.fixture
def ballistic_factory():
    """Build ballistic variants: ballistic_factory(noise={"a3": 0.0})."""
    return make_ballistic
