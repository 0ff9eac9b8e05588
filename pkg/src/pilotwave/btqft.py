"""Bell-type QFT as a piecewise deterministic Markov process.

Between jumps the particles of the current sector follow the guiding
field of ``guidance``; jumps between neighbouring sectors happen with the
minimal rates built from the interaction Hamiltonian only:

    sigma(dq | q') = [ (2/hbar) Im <Psi|P(dq) H_int P(q')|Psi> ]^+ / <Psi|P(q')|Psi>

``P(dq)`` is realized as the projector on one grid-cell configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .engine import DT_MIN, EnsembleResult, run_ensemble, simulate_chunk
from .guidance import interpolated_velocity, sector_fluxes
from .jumps import CurrentPattern, JumpRateTable, SupportLossError, jump_rates
from .models import ModelHamiltonian, Propagator, evolve
from .records import JumpEvent, TrajectoryRecord
from .state import BasisMismatchError, GridBasis, QuantumState, SectorConfig

__all__ = [
    "NodeError",
    "FlaggedTrajectory",
    "PdmpState",
    "JumpEvent",
    "velocity_field",
    "flow_step",
    "btqft_rates",
    "destination_config",
    "run_btqft_trajectory",
    "run_btqft_ensemble",
    "flow_cell_flux",
    "jump_cell_flux",
    "sector_jump_flux",
    "expected_event_counts",
]


class NodeError(ArithmeticError):
    """The guiding field is undefined: the configuration sits at a node."""


class FlaggedTrajectory(RuntimeError):
    """Step refinement reached ``dt_min`` without resolving a node or CFL violation."""


class _CflError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PdmpState:
    config: SectorConfig
    psi: QuantumState
    t: float = 0.0

    def __post_init__(self):
        basis = self.psi.basis
        if not isinstance(basis, GridBasis):
            raise BasisMismatchError("PdmpState needs a grid basis")
        self.config.label(basis)  # bounds and sector checks
        if self.psi.sector_probabilities()[self.config.sector] <= 0:
            raise SupportLossError(self.config.positions)


def _grid(state: QuantumState) -> GridBasis:
    if not isinstance(state.basis, GridBasis):
        raise BasisMismatchError("guiding field needs a grid basis")
    return state.basis


def _velocities(state: QuantumState, x: np.ndarray, mass: float) -> np.ndarray:
    basis = _grid(state)
    n = len(x)
    if n == 0:
        return np.zeros(0)
    flux, rho = sector_fluxes(state.amplitudes, basis, n, state.hbar, mass)
    V, node = interpolated_velocity(flux, rho, np.asarray(x, float)[None, :], basis)
    if node[0]:
        raise NodeError(f"node encountered at {tuple(x)}")
    return V[0]


def velocity_field(state: QuantumState, q: SectorConfig, mass: float = 1.0) -> tuple[float, ...]:
    """Velocity of each particle of ``q`` (in ``q.positions`` order)."""
    return tuple(float(v) for v in _velocities(state, np.array(q.positions), mass))


def _flow_once(s: PdmpState, h: ModelHamiltonian, dt: float) -> PdmpState:
    basis = _grid(s.psi)
    psi_half = evolve(s.psi, h, 0.5 * dt)
    psi_end = evolve(psi_half, h, 0.5 * dt)
    x = np.array(s.config.positions)
    if x.size == 0:
        return PdmpState(s.config, psi_end, s.t + dt)
    v0 = _velocities(s.psi, x, h.mass)
    xh = np.mod(x + 0.5 * dt * v0, basis.length)
    v1 = _velocities(psi_half, xh, h.mass)
    if np.any(np.abs(v0) * dt >= basis.dx) or np.any(np.abs(v1) * dt >= basis.dx):
        raise _CflError
    return PdmpState(SectorConfig(np.mod(x + dt * v1, basis.length)), psi_end, s.t + dt)


def flow_step(s: PdmpState, h: ModelHamiltonian, dt: float, dt_min: float = DT_MIN) -> PdmpState:
    """Explicit midpoint step of the guiding law; Psi evolves under the full H.

    Steps that violate ``|v| dt < dx`` or meet a node are split in halves
    recursively; below ``dt_min`` a ``FlaggedTrajectory`` is raised.
    """
    try:
        return _flow_once(s, h, dt)
    except (NodeError, _CflError) as exc:
        if 0.5 * dt < dt_min:
            raise FlaggedTrajectory(f"cannot resolve step at t={s.t}: {exc!r}") from exc
        half = flow_step(s, h, 0.5 * dt, dt_min)
        return flow_step(half, h, 0.5 * dt, dt_min)


def btqft_rates(
    state: QuantumState, q_src: SectorConfig, h: ModelHamiltonian, t: float = 0.0, rule: str = "minimal"
) -> JumpRateTable:
    """Creation and annihilation rates out of the cell configuration of ``q_src``.

    Keys are destination cell labels.  A creation key is the source cells
    plus the new particle's cell; an annihilation key is the source minus
    one particle's cell (when several particles share that cell, the rate
    is shared by them).
    """
    if state.basis != h.basis:
        raise BasisMismatchError("state and Hamiltonian use different bases")
    src = q_src.label(h.basis)
    try:
        rates = jump_rates(state.amplitudes, h.h_int, h.basis.index(src), h.hbar, rule)
    except SupportLossError:
        raise SupportLossError(src) from None
    labels = h.basis.labels
    return JumpRateTable(src, {labels[k]: r for k, r in rates.items()}, t)


def destination_config(q_src: SectorConfig, dest_label: tuple, basis: GridBasis, rng) -> SectorConfig:
    """Positions after a jump: a created particle lands uniformly in its cell;
    on annihilation the remaining particles keep their positions."""
    src = list(q_src.label(basis))
    dest = list(dest_label)
    if len(dest) == len(src) + 1:
        for c in src:
            dest.remove(c)
        x_new = (dest[0] + rng.random()) * basis.dx
        return SectorConfig(q_src.positions + (x_new,))
    if len(dest) == len(src) - 1:
        for c in dest:
            src.remove(c)
        cell = src[0]
        cells = basis.cell_of(np.array(q_src.positions))
        candidates = np.flatnonzero(cells == cell)
        drop = candidates[int(rng.random() * len(candidates))]
        return SectorConfig(tuple(x for i, x in enumerate(q_src.positions) if i != drop))
    raise ValueError("destination must differ from the source by exactly one particle")


def run_btqft_trajectory(
    initial: PdmpState, h: ModelHamiltonian, T: float, dt: float, rng: np.random.Generator, rule: str = "minimal"
) -> TrajectoryRecord:
    """One PDMP history on ``[0, T]`` starting from ``initial``."""
    if initial.psi.basis != h.basis:
        raise BasisMismatchError("state and Hamiltonian use different bases")
    basis = h.basis
    X = np.full((1, basis.n_max), np.nan)
    X[0, : initial.config.sector] = initial.config.positions
    cfg = np.array([basis.index(initial.config.label(basis))])
    ch, events, diag = simulate_chunk(h, initial.psi, "btqft", T, dt, rng, (cfg, X), rule=rule)
    reason = ch.reasons.get(0, "")
    return TrajectoryRecord.from_run(
        "btqft", basis, ch.paths, events, bool(ch.flagged[0]), reason, diag, h.static_particles
    )


def run_btqft_ensemble(
    h: ModelHamiltonian,
    psi0: QuantumState,
    M: int,
    T: float,
    dt: float,
    seed: int,
    checkpoints=(),
    workers: int = 1,
    rule: str = "minimal",
    initial=None,
) -> EnsembleResult:
    return run_ensemble(
        h, psi0, M, T, dt, kind="btqft", seed=seed, checkpoints=checkpoints, workers=workers, rule=rule, initial=initial
    )


# -- deterministic flux bookkeeping ------------------------------------------
def flow_cell_flux(state: QuantumState, h: ModelHamiltonian) -> np.ndarray:
    """d/dt of each cell-label probability caused by the guiding flow alone.

    Computed from the face fluxes of the velocity field (first-quantized
    route), then collected onto the unordered cell labels.
    """
    basis = _grid(state)
    out = np.zeros(basis.dim)
    for n in range(1, basis.n_max + 1):
        flux, _ = sector_fluxes(state.amplitudes, basis, n, h.hbar, h.mass)
        rate = np.zeros_like(flux)
        for k in range(n):
            fk = np.moveaxis(flux, 0, k)
            rate += np.roll(fk, 1, axis=k) - fk
        rate *= basis.dx ** (n - 1)  # flux density through a face -> probability per time
        idx, _ = basis.layout(n)
        out += np.bincount(idx.ravel(), weights=rate.ravel(), minlength=basis.dim)
    return out


def jump_cell_flux(state: QuantumState, h: ModelHamiltonian, rule: str = "minimal") -> np.ndarray:
    return CurrentPattern(h.h_int, h.hbar).net_flux(state.amplitudes, rule)


def sector_jump_flux(state: QuantumState, h: ModelHamiltonian, rule: str = "minimal") -> np.ndarray:
    """Net jump flux into each sector: sum over its cells of jump_cell_flux."""
    return np.bincount(state.basis.sectors, weights=jump_cell_flux(state, h, rule), minlength=state.basis.n_max + 1)


def expected_event_counts(h: ModelHamiltonian, psi0: QuantumState, T: float, n: int = 2001) -> dict:
    """Mean number of creation and annihilation events per trajectory on ``[0, T]``.

    Integrates the jump flux ``sum sigma * P`` of each kind over time
    (Simpson rule on ``n`` points) using the exact state.
    """
    prop = Propagator(h, psi0)
    pattern = CurrentPattern(h.h_int, h.hbar)
    s = h.basis.sectors
    up = s[pattern.dest] > s[pattern.src]
    ts = np.linspace(0.0, T, n)
    cre, ann = np.empty(n), np.empty(n)
    for i, t in enumerate(ts):
        amps = prop.amplitudes(t)
        probs = np.abs(amps) ** 2
        r, _ = pattern.rates(amps, probs)
        f = r * probs[pattern.src]
        cre[i], ann[i] = f[up].sum(), f[~up].sum()
    return {"creation": float(simpson(cre, x=ts)), "annihilation": float(simpson(ann, x=ts))}
