"""Scenario files: YAML documents validated into typed configurations.

A scenario names a model, its parameters and a run mode::

    model: bell-lattice
    mode: verify
    M: 20000
    T: 1.0
    seed: 1
    params:
      sites: 2
      single_coupling: 0.5
      initial:
        - {occupation: [0, 0], amplitude: [1.0, 0.0]}

Complex numbers are written as ``[re, im]``.  Unknown keys are rejected
and all validation problems are reported together.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    TypeAdapter,
    ValidationError,
    model_validator,
)

__all__ = [
    "ScenarioError",
    "ScenarioConfig",
    "BellScenario",
    "BtqftScenario",
    "NikolicScenario",
    "PRESETS",
    "parse_scenario",
    "load_scenario",
    "dump_scenario",
    "preset",
]

Complex = tuple[float, float]


class ScenarioError(ValueError):
    """Every problem found while validating a scenario."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {e}" for e in self.errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- model parameters ----------------------------------------------------------
class LatticeTerm(_Strict):
    occupation: list[NonNegativeInt]
    amplitude: Complex = (1.0, 0.0)


class BellParams(_Strict):
    sites: int = Field(2, ge=2)
    hop: float = 1.0
    pair_coupling: float = 0.0
    single_coupling: float = 0.0
    n_max: PositiveInt = 2
    onsite: float = 0.0
    hop_phase: float = 0.0
    coupling_phase: float = 0.0
    site_cap: Optional[PositiveInt] = None
    initial: list[LatticeTerm] = [LatticeTerm(occupation=[0, 0])]

    @model_validator(mode="after")
    def _initial_shape(self):
        for term in self.initial:
            if len(term.occupation) != self.sites:
                raise ValueError(f"initial occupation {term.occupation} does not have {self.sites} sites")
            if sum(term.occupation) > self.n_max:
                raise ValueError(f"initial occupation {term.occupation} exceeds n_max={self.n_max}")
        return self


class Orbital(_Strict):
    centre: float
    width: PositiveFloat
    momentum: float = 0.0
    amplitude: Complex = (1.0, 0.0)


class BtqftParams(_Strict):
    points: int = Field(32, ge=16)
    dx: PositiveFloat = 1.0
    g: float = 1.0
    w: PositiveFloat = 4.0
    n_max: PositiveInt = 1
    omega0: float = 1.0
    mass: PositiveFloat = 1.0
    sources: Optional[list[float]] = None
    coupling_phase: float = 0.0
    static_particles: NonNegativeInt = 0
    vacuum: Complex = (1.0, 0.0)
    orbitals: list[Orbital] = []

    @model_validator(mode="after")
    def _resolved(self):
        if self.w < 2 * self.dx:
            raise ValueError(f"form factor under-resolved: w={self.w} < 2*dx={2 * self.dx}")
        return self


class PacketSpec(_Strict):
    center: float = 0.0
    width: PositiveFloat = 1.0
    momentum: float = 0.0
    phase: float = 0.0
    mass: NonNegativeFloat = 0.0
    nodes: PositiveInt = 24


class NikolicParams(_Strict):
    psi1: PacketSpec = PacketSpec(center=0.0, momentum=1.0)
    psi2: PacketSpec = PacketSpec(center=-2.0, momentum=-1.5, phase=0.4)
    psi3: PacketSpec = PacketSpec(center=2.0, momentum=1.5)
    mu1: float = -3.0
    mu2: float = 3.0
    w_E: PositiveFloat = 0.5
    a1: Complex = (math.sqrt(0.5), 0.0)
    a2: Complex = (0.0, math.sqrt(0.5))
    pointer_mass: PositiveFloat = 1.0
    collapse: Literal["none", "exact", "exact-1"] = "none"
    detectors: bool = True
    variant: Literal["standard", "decay-box", "two-stage"] = "standard"
    s_span: PositiveFloat = 1.0
    ds: PositiveFloat = 1e-2
    separations: Optional[list[NonNegativeFloat]] = None
    continuity_points: PositiveInt = 100

    @model_validator(mode="after")
    def _weights(self):
        n = self.a1[0] ** 2 + self.a1[1] ** 2 + self.a2[0] ** 2 + self.a2[1] ** 2
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"branch weights must satisfy |a1|^2 + |a2|^2 = 1 (got {n})")
        if self.ds > self.s_span:
            raise ValueError("ds must not exceed s_span")
        return self


# -- verification options ----------------------------------------------------------
Check = Literal["equivariance", "master-equation", "time-reversal", "time-reversal-control"]


class VerifyOptions(_Strict):
    checks: Optional[list[Check]] = None
    config_threshold: PositiveFloat = 0.03
    sector_threshold: PositiveFloat = 0.03
    position_threshold: PositiveFloat = 0.05
    bins: PositiveInt = 16
    master_times: list[NonNegativeFloat] = [0.1, 0.5, 1.0]
    master_tolerance: Optional[PositiveFloat] = None


class _Common(_Strict):
    name: str = ""
    mode: Literal["trajectory", "ensemble", "verify", "sweep"] = "trajectory"
    T: PositiveFloat = 1.0
    dt: PositiveFloat = 1e-3
    M: PositiveInt = 1
    seed: NonNegativeInt = 0
    hbar: PositiveFloat = 1.0
    checkpoints: list[NonNegativeFloat] = []
    output_dir: str = "out"
    verify: VerifyOptions = VerifyOptions()

    @model_validator(mode="after")
    def _times(self):
        if self.dt > self.T:
            raise ValueError("dt must not exceed T")
        late = [c for c in self.checkpoints if c > self.T]
        if late:
            raise ValueError(f"checkpoints {late} lie beyond T={self.T}")
        return self


class _Stochastic(_Common):
    @model_validator(mode="after")
    def _modes(self):
        if self.mode == "sweep":
            raise ValueError(f"mode 'sweep' is only available for nikolic-decay, not {self.model}")
        if self.mode == "verify" and self.M < 1000:
            raise ValueError("verify mode needs M >= 1000")
        return self


class BellScenario(_Stochastic):
    model: Literal["bell-lattice"]
    params: BellParams = BellParams()


class BtqftScenario(_Stochastic):
    model: Literal["btqft-emission"]
    params: BtqftParams = BtqftParams()


class NikolicScenario(_Common):
    model: Literal["nikolic-decay"]
    params: NikolicParams = NikolicParams()

    @model_validator(mode="after")
    def _modes(self):
        if self.mode == "ensemble":
            raise ValueError("the multi-time model is deterministic; use trajectory, sweep or verify")
        if self.hbar != 1.0:
            raise ValueError("the multi-time model uses hbar = c = 1")
        return self


ScenarioConfig = Annotated[Union[BellScenario, BtqftScenario, NikolicScenario], Field(discriminator="model")]
_ADAPTER = TypeAdapter(ScenarioConfig)


def _format(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"][1:] if not str(p).startswith("function-"))
        out.append(f"{loc or '<root>'}: {e['msg']}")
    return out


def load_scenario(doc: dict):
    """Validate a plain mapping."""
    if not isinstance(doc, dict):
        raise ScenarioError(["<root>: scenario must be a mapping"])
    if "model" not in doc:
        raise ScenarioError(["model: field required (bell-lattice, btqft-emission or nikolic-decay)"])
    try:
        return _ADAPTER.validate_python(doc)
    except ValidationError as err:
        raise ScenarioError(_format(err)) from None


def parse_scenario(path) -> "BellScenario | BtqftScenario | NikolicScenario":
    """Read and validate a YAML scenario file."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError([f"<file>: not well-formed YAML ({exc})"]) from None
    return load_scenario(doc)


def dump_scenario(cfg) -> str:
    """YAML text that parses back to an identical configuration."""
    doc = cfg.model_dump(mode="json")
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=None)


# -- presets -----------------------------------------------------------------------
PRESETS: dict[str, dict] = {
    "bell-lattice": {
        "model": "bell-lattice",
        "mode": "verify",
        "M": 20000,
        "T": 1.0,
        "seed": 1,
        "checkpoints": [0.5, 1.0],
        "params": {
            "sites": 2,
            "hop": 1.0,
            "n_max": 2,
            "single_coupling": 0.5,
            "hop_phase": 0.3,
            "initial": [
                {"occupation": [0, 0], "amplitude": [1.0, 0.0]},
                {"occupation": [1, 0], "amplitude": [0.8, 0.0]},
                {"occupation": [0, 1], "amplitude": [0.0, 0.5]},
            ],
        },
    },
    "btqft-emission": {
        "model": "btqft-emission",
        "mode": "verify",
        "M": 20000,
        "T": 1.0,
        "seed": 3,
        "checkpoints": [0.5, 1.0],
        "params": {
            "points": 32,
            "g": 2.0,
            "w": 4.0,
            "n_max": 1,
            "omega0": 1.0,
            "vacuum": [0.8, 0.0],
            "orbitals": [{"centre": 10.0, "width": 3.0, "momentum": 0.8, "amplitude": [0.6, 0.0]}],
        },
    },
    "picture-a": {
        "model": "btqft-emission",
        "mode": "ensemble",
        "M": 4000,
        "T": 3.0,
        "seed": 5,
        "checkpoints": [1.0, 2.0, 3.0],
        "params": {
            "points": 32,
            "g": 1.5,
            "w": 3.0,
            "n_max": 1,
            "omega0": 2.0,
            "mass": 5.0,
            "sources": [10.0, 22.0],
            "static_particles": 2,
            "vacuum": [1.0, 0.0],
        },
    },
    "pair-creation": {
        "model": "bell-lattice",
        "mode": "verify",
        "M": 20000,
        "T": 1.0,
        "seed": 7,
        "checkpoints": [0.5, 1.0],
        "params": {
            "sites": 2,
            "hop": 1.0,
            "n_max": 4,
            "pair_coupling": 0.4,
            "hop_phase": 0.2,
            "initial": [
                {"occupation": [0, 0], "amplitude": [1.0, 0.0]},
                {"occupation": [1, 1], "amplitude": [0.3, 0.4]},
            ],
        },
    },
    "decay-box": {
        "model": "nikolic-decay",
        "mode": "trajectory",
        "params": {"variant": "decay-box", "detectors": False, "s_span": 3.0},
    },
    "dead-particle-sweep": {
        "model": "nikolic-decay",
        "mode": "sweep",
        "params": {"separations": [1.0, 2.0, 3.0, 4.0]},
    },
    "two-stage": {
        "model": "nikolic-decay",
        "mode": "trajectory",
        "params": {"variant": "two-stage", "s_span": 2.0},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset(name: str, overrides: dict | None = None):
    """Validated preset, with ``overrides`` merged key by key."""
    if name not in PRESETS:
        raise ScenarioError([f"preset: unknown preset {name!r} (choose from {', '.join(sorted(PRESETS))})"])
    doc = _merge(PRESETS[name], {"name": name})
    if overrides:
        if overrides.get("model", doc["model"]) != doc["model"]:
            raise ScenarioError([f"model: preset {name!r} is a {doc['model']} scenario"])
        doc = _merge(doc, overrides)
    return load_scenario(doc)
