"""Scenario definition: physical constants, distributions, canards and gains."""

from __future__ import annotations

import hashlib
import json
import math
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .dynamics import MlmState
from .errors import ScenarioError

if TYPE_CHECKING:
    from .sde import RandomStream

# Order in which initial states are drawn from a random stream.
INITIAL_FIELDS = ("x", "y", "z", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r")

AREA_RTOL = 1e-9


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)


class ProjectileParams(_Frozen):
    """Projectile geometry, mass properties and aerodynamic coefficients."""

    D: float = Field(gt=0, description="reference diameter (ft)")
    m: float = Field(gt=0, description="mass (slug)")
    rho: float = Field(gt=0, description="air density (slug/ft^3)")
    g: float = Field(gt=0, description="gravity (ft/s^2)")
    Ixx: float = Field(gt=0, description="axial inertia (slug ft^2)")
    Iyy: float = Field(gt=0, description="transverse inertia (slug ft^2)")
    CX0: float
    CDD: float
    CLP: float
    CNA: float
    CYPA: float
    CMQ: float
    RMCP: float = Field(description="center-of-pressure offset (ft)")
    RMCM: float = Field(description="Magnus-center offset (ft)")


class WindModel(_Frozen):
    """Fixed-frame wind components (ft/s)."""

    vw: float = 0.0
    ww: float = 0.0


class NoiseModel(_Frozen):
    """Diffusion amplitudes on the x, y, z channels."""

    a1: float = Field(1.0, ge=0)
    a2: float = Field(1.0, ge=0)
    a3: float = Field(1.0, ge=0)

    def amplitudes(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3])


class StateDistribution(_Frozen):
    mean: float
    sd: float = Field(0.0, ge=0)


class InitialDistribution(_Frozen):
    """Independent Gaussian initial conditions for the twelve launch states."""

    x: StateDistribution
    y: StateDistribution
    z: StateDistribution
    phi: StateDistribution
    theta: StateDistribution
    psi: StateDistribution
    u: StateDistribution
    v: StateDistribution
    w: StateDistribution
    p: StateDistribution
    q: StateDistribution
    r: StateDistribution

    def means(self) -> np.ndarray:
        return np.array([getattr(self, name).mean for name in INITIAL_FIELDS])

    def sds(self) -> np.ndarray:
        return np.array([getattr(self, name).sd for name in INITIAL_FIELDS])

    def point_mass(self) -> "InitialDistribution":
        """Same means, every standard deviation zero."""
        return self.model_copy(
            update={
                name: StateDistribution(mean=getattr(self, name).mean)
                for name in INITIAL_FIELDS
            }
        )


class CanardSurface(_Frozen):
    """One canard: surface size, lever arm and incidence sign."""

    diameter: float = Field(gt=0)
    area: float = Field(gt=0)
    rx: float
    ry: float
    rz: float
    alpha_sign: Literal[1, -1]

    @model_validator(mode="before")
    @classmethod
    def _derive_area(cls, data):
        if isinstance(data, dict) and data.get("area") is None and "diameter" in data:
            data = dict(data)
            diameter = data["diameter"]
            if isinstance(diameter, (int, float)):
                data["area"] = math.pi * diameter**2 / 4.0
        return data

    @model_validator(mode="after")
    def _check_area(self) -> "CanardSurface":
        expected = math.pi * self.diameter**2 / 4.0
        if abs(self.area - expected) > AREA_RTOL * expected:
            raise ValueError(
                f"area {self.area} differs from pi*diameter^2/4 = {expected}"
            )
        return self


class CanardConfig(_Frozen):
    """
    Four identical-law canards with constant aerodynamic coefficients.

    `carrier` names the frame whose rotation moves the canard roots: "body"
    feeds the spin p_t into the root flow, "fixed-plane" uses the roll rate
    of the non-rolling frame, -r_t tan(theta).
    """

    surfaces: Tuple[CanardSurface, ...]
    c_l_alpha: float
    c_d0: float
    c_d2: float
    c_i: float
    speed_of_sound: float = Field(1116.45, gt=0)
    carrier: Literal["body", "fixed-plane"] = "body"

    @field_validator("surfaces")
    @classmethod
    def _exactly_four(cls, value):
        if len(value) != 4:
            raise ValueError(f"exactly 4 canards required, got {len(value)}")
        return value


class ControlGains(_Frozen):
    """Feedback gains, desired-point lookahead and deflection limit."""

    Kp: float
    Kphi: float
    Ktheta: float
    Kpsi: float
    lookahead: float = Field(17.17605, gt=0, description="ft")
    deflection_limit: float = Field(0.35, gt=0, description="rad")
    roll_priority: bool = True


Scheme = Literal["euler", "gyro-split", "rk4", "exp-rk4"]


class IntegrationSettings(_Frozen):
    """
    Step sizes and schemes for the three integrators.

    `step`/`scheme` drive uncontrolled sample paths. `moment_step` overrides
    the step of the moment march and `control_step`/`control_scheme` the
    closed-loop runs; None falls back to `step` and `scheme`.
    """

    step: float = Field(gt=0)
    max_span: float = Field(gt=0)
    record_every: int = Field(1, ge=1)
    scheme: Scheme = "euler"
    speed_closure: Literal["frozen", "mean"] = "frozen"
    moment_step: Optional[float] = Field(None, gt=0)
    control_step: Optional[float] = Field(None, gt=0)
    control_scheme: Optional[Scheme] = None

    @model_validator(mode="after")
    def _span_exceeds_step(self) -> "IntegrationSettings":
        steps = (self.step, self.moment_step, self.control_step)
        if not all(self.max_span > h for h in steps if h is not None):
            raise ValueError("max_span must exceed step")
        return self


class Scenario(_Frozen):
    """Everything a simulation, moment propagation or control study consumes."""

    projectile: ProjectileParams
    wind: WindModel = WindModel()
    noise: NoiseModel = NoiseModel()
    initial: InitialDistribution
    canards: Optional[CanardConfig] = None
    gains: Optional[ControlGains] = None
    integration: IntegrationSettings

    @property
    def params(self) -> ProjectileParams:
        return self.projectile

    @property
    def init(self) -> InitialDistribution:
        return self.initial

    @property
    def step(self) -> float:
        return self.integration.step

    @property
    def max_span(self) -> float:
        return self.integration.max_span

    def deterministic(self) -> "Scenario":
        """Copy with every diffusion amplitude zeroed."""
        return self.model_copy(update={"noise": NoiseModel(a1=0.0, a2=0.0, a3=0.0)})

    def with_integration(self, **changes) -> "Scenario":
        """Copy with integration settings overridden (re-validated)."""
        settings = IntegrationSettings(**{**self.integration.model_dump(), **changes})
        return self.model_copy(update={"integration": settings})

    def for_control(self) -> "Scenario":
        """Copy integrating with the closed-loop step and scheme."""
        settings = self.integration
        if settings.control_step is None and settings.control_scheme is None:
            return self
        return self.with_integration(
            step=settings.control_step or settings.step,
            scheme=settings.control_scheme or settings.scheme,
            control_step=None,
            control_scheme=None,
        )

    def require_control(self) -> Tuple[CanardConfig, ControlGains]:
        """Return (canards, gains) or raise ScenarioError if either is absent."""
        missing = [name for name in ("canards", "gains") if getattr(self, name) is None]
        if missing:
            raise ScenarioError(
                f"scenario lacks {' and '.join(missing)}; control needs both"
            )
        return self.canards, self.gains


def _format_validation_error(exc: ValidationError) -> str:
    problems = []
    for err in exc.errors():
        field = ".".join(str(part) for part in err["loc"]) or "<root>"
        problems.append(f"{field}: {err['msg']}")
    return "invalid scenario: " + "; ".join(problems)


def load_scenario(text: str) -> Scenario:
    """
    Parse and validate a scenario JSON document.

    Args:
        text: JSON document with projectile, wind, noise, initial, canards,
              gains and integration sections

    Returns:
        Validated, immutable Scenario

    Raises:
        ScenarioError: If the document is malformed or an invariant is violated.
                       The message names the offending field path.

    Example:
        >>> scenario = load_scenario(Path("nominal.json").read_text())
        >>> scenario.projectile.D
        0.343521
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed scenario document: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("malformed scenario document: top level must be an object")
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(_format_validation_error(exc)) from exc


def load_scenario_file(path: Union[str, Path]) -> Scenario:
    """Read and parse a scenario file; unreadable paths raise ScenarioError."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return load_scenario(text)


def dump_scenario(scenario: Scenario) -> str:
    """Canonical JSON form; load_scenario(dump_scenario(s)) == s."""
    payload = scenario.model_dump(mode="json", exclude_none=True)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def scenario_digest(scenario: Scenario) -> str:
    """SHA-256 of the canonical JSON form."""
    return hashlib.sha256(dump_scenario(scenario).encode("utf-8")).hexdigest()


@lru_cache(maxsize=1)
def nominal_scenario() -> Scenario:
    """
    The bundled fin-stabilized projectile scenario.

    Means are the launch conditions of the reference study; the standard
    deviations of the random-IC variant are attached to the same distribution
    and only used when a run asks for random initial conditions.

    Returns:
        Shared immutable Scenario
    """
    text = (
        resources.files("projectile_ipp")
        .joinpath("scenarios/nominal.json")
        .read_text(encoding="utf-8")
    )
    return load_scenario(text)


def mean_state(dist: InitialDistribution) -> MlmState:
    """Launch state at the distribution means."""
    return _to_mlm_state(dist.means())


def sample_initial_state(
    dist: InitialDistribution,
    stream: "RandomStream",
    size: Optional[int] = None,
) -> MlmState:
    """
    Draw launch states with every component an independent Gaussian.

    Twelve standard normals are consumed per sample in INITIAL_FIELDS order,
    whatever the standard deviations are, so stream consumption never depends
    on the distribution.

    Args:
        dist: Initial-condition distribution
        stream: Random stream owning the generator
        size: Number of samples; None draws a single scalar state

    Returns:
        MlmState with V = sqrt(u^2 + v^2 + w^2)
    """
    shape = (12,) if size is None else (size, 12)
    z = stream.generator.standard_normal(shape)
    return _to_mlm_state(dist.means() + dist.sds() * z)


def _to_mlm_state(values: np.ndarray) -> MlmState:
    x, y, z, phi, theta, psi, u, v, w, p, q, r = np.moveaxis(values, -1, 0)
    speed = np.sqrt(u * u + v * v + w * w)
    if np.ndim(speed) == 0:
        components = (x, y, z, phi, theta, psi, speed, v, w, p, q, r)
        return MlmState(*(float(c) for c in components))
    return MlmState(x, y, z, phi, theta, psi, speed, v, w, p, q, r)
