"""Pilot-wave dynamics with variable particle number.

Bell's lattice jump process, the Bell-type QFT piecewise deterministic
process, a deterministic multi-time model, and a verification harness
that scores each against the exact Born distribution.
"""

from .bell import bell_rates, run_bell_ensemble, run_bell_trajectory
from .btqft import PdmpState, btqft_rates, flow_step, run_btqft_ensemble, run_btqft_trajectory, velocity_field
from .engine import EnsembleResult, run_ensemble
from .jumps import JumpRateTable, SupportLossError, sample_next_jump
from .models import (
    DimensionCapError,
    ModelHamiltonian,
    Propagator,
    build_bell_lattice_model,
    build_emission_absorption_model,
    evolve,
)
from .records import TrajectoryRecord
from .state import (
    DensityTable,
    GridBasis,
    LatticeBasis,
    LatticeConfig,
    Projection,
    QuantumState,
    SectorConfig,
    born_density,
    norm_squared,
    project_expectation,
)

__version__ = "0.1.0"

__all__ = [
    "bell_rates",
    "run_bell_ensemble",
    "run_bell_trajectory",
    "PdmpState",
    "btqft_rates",
    "flow_step",
    "run_btqft_ensemble",
    "run_btqft_trajectory",
    "velocity_field",
    "EnsembleResult",
    "run_ensemble",
    "JumpRateTable",
    "SupportLossError",
    "sample_next_jump",
    "DimensionCapError",
    "ModelHamiltonian",
    "Propagator",
    "build_bell_lattice_model",
    "build_emission_absorption_model",
    "evolve",
    "TrajectoryRecord",
    "DensityTable",
    "GridBasis",
    "LatticeBasis",
    "LatticeConfig",
    "Projection",
    "QuantumState",
    "SectorConfig",
    "born_density",
    "norm_squared",
    "project_expectation",
]
