"""Bell's jump process on lattice occupation configurations.

The actual configuration q' jumps to q with rate

    sigma(q | q') = [ (2/hbar) Im <Psi|P(q) H P(q')|Psi> ]^+ / <Psi|P(q')|Psi>

using the full Hamiltonian.  Between jumps nothing moves.
"""

from __future__ import annotations

import numpy as np

from .engine import EnsembleResult, run_ensemble, simulate_chunk
from .jumps import CurrentPattern, JumpRateTable, SupportLossError, jump_rates, sample_next_jump
from .models import ModelHamiltonian
from .records import TrajectoryRecord
from .state import BasisMismatchError, LatticeBasis, LatticeConfig, QuantumState

__all__ = [
    "bell_rates",
    "sample_next_jump",
    "run_bell_trajectory",
    "run_bell_ensemble",
    "pair_current",
    "net_rate_flux",
    "SupportLossError",
]


def _label(basis, q) -> tuple:
    if isinstance(q, LatticeConfig):
        return q.label(basis)
    return tuple(q)


def bell_rates(
    state: QuantumState, q_src, h: ModelHamiltonian, t: float = 0.0, rule: str = "minimal"
) -> JumpRateTable:
    """Rates out of ``q_src`` for every q with ``<q|H|q_src> != 0``."""
    if state.basis != h.basis:
        raise BasisMismatchError("state and Hamiltonian use different bases")
    src = _label(h.basis, q_src)
    try:
        rates = jump_rates(state.amplitudes, h.h, h.basis.index(src), h.hbar, rule)
    except SupportLossError:
        raise SupportLossError(src) from None
    labels = h.basis.labels
    return JumpRateTable(src, {labels[k]: r for k, r in rates.items()}, t)


def pair_current(state: QuantumState, q, q_src, op) -> float:
    """(2/hbar) Im <Psi|P(q) op P(q_src)|Psi> evaluated directly."""
    b = state.basis
    i, j = b.index(_label(b, q)), b.index(_label(b, q_src))
    c = state.amplitudes
    return float(2.0 / state.hbar * np.imag(np.conj(c[i]) * op[i, j] * c[j]))


def net_rate_flux(state: QuantumState, h: ModelHamiltonian, op=None, rule: str = "minimal") -> np.ndarray:
    """Per configuration: sum_q' sigma(q|q') P(q') - sigma(q'|q) P(q)."""
    op = h.h if op is None else op
    return CurrentPattern(op, h.hbar).net_flux(state.amplitudes, rule)


def run_bell_trajectory(
    initial: tuple[QuantumState, LatticeConfig],
    h: ModelHamiltonian,
    T: float,
    dt: float,
    rng: np.random.Generator,
    rule: str = "minimal",
) -> TrajectoryRecord:
    """One trajectory of the jump process on ``[0, T]``; rates refreshed every ``dt``."""
    psi0, q0 = initial
    if not isinstance(h.basis, LatticeBasis):
        raise BasisMismatchError("Bell's process runs on a lattice basis")
    cfg = np.array([h.basis.index(_label(h.basis, q0))])
    if psi0.probabilities()[cfg[0]] <= 0:
        raise SupportLossError(_label(h.basis, q0))
    ch, events, diag = simulate_chunk(h, psi0, "bell", T, dt, rng, (cfg, None), rule=rule)
    reason = ch.reasons.get(0, "")
    return TrajectoryRecord.from_run("bell", h.basis, ch.paths, events, bool(ch.flagged[0]), reason, diag)


def run_bell_ensemble(
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
    """``M`` trajectories with initial configurations drawn from ``|psi0|**2``."""
    return run_ensemble(
        h, psi0, M, T, dt, kind="bell", seed=seed, checkpoints=checkpoints, workers=workers, rule=rule, initial=initial
    )
