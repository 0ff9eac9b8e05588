import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotwave.models import (
    DimensionCapError,
    Propagator,
    build_bell_lattice_model,
    build_emission_absorption_model,
    evolve,
)
from pilotwave.state import QuantumState, grid_orbital, norm_squared

from conftest import random_state, toy_model


def _kron_ladder_hamiltonian(sites, hop, single, pair, hop_phase, cap):
    """Dense H on the full per-site product space, from kron'd ladder matrices."""
    a1 = np.diag(np.sqrt(np.arange(1, cap + 1)), 1).astype(complex)
    eye = np.eye(cap + 1)

    def site_op(op, x):
        mats = [op if k == x else eye for k in range(sites)]
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    a = [site_op(a1, x) for x in range(sites)]
    ad = [m.conj().T for m in a]
    t = -hop * np.exp(1j * hop_phase)
    h = np.zeros_like(a[0])
    for x in range(sites - 1):
        h += t * ad[x + 1] @ a[x]
        h += np.conj(t) * ad[x] @ a[x + 1]
    for x in range(sites):
        h += single * (ad[x] + a[x])
        h += pair * (ad[x] @ ad[x] + a[x] @ a[x])
    occs = list(itertools.product(range(cap + 1), repeat=sites))
    return h, occs


def test_lattice_spectrum_matches_kron_ladder_oracle():
    n_max = 2
    h = build_bell_lattice_model(2, 1.0, 0.3, n_max, single_coupling=0.5, hop_phase=0.2)
    full, occs = _kron_ladder_hamiltonian(2, 1.0, 0.5, 0.3, 0.2, n_max)
    keep = [i for i, occ in enumerate(occs) if sum(occ) <= n_max]
    oracle = np.linalg.eigvalsh(full[np.ix_(keep, keep)])
    got = np.linalg.eigvalsh(h.dense())
    assert got.shape == oracle.shape
    assert np.max(np.abs(got - oracle)) < 1e-12
    # the same matrix element by element, via the label map
    order = [h.basis.index(occs[i]) for i in keep]
    assert np.max(np.abs(h.dense()[np.ix_(order, order)] - full[np.ix_(keep, keep)])) < 1e-12


def test_models_are_hermitian():
    h1 = build_bell_lattice_model(3, 0.7, 0.2, 3, single_coupling=0.4, hop_phase=1.1, coupling_phase=0.4)
    h2 = build_emission_absorption_model(24, 0.5, 3.0, 2, coupling_phase=0.9)
    assert h1.hermiticity_defect() < 1e-12
    assert h2.hermiticity_defect() < 1e-12


def test_single_particle_two_site_rabi():
    # one boson hopping between two sites: P(right) = sin^2(hop t / hbar)
    h = build_bell_lattice_model(2, 1.0, 0.0, 1)
    prop = Propagator(h, QuantumState.basis_state(h.basis, (1, 0)))
    for t in np.linspace(0, 3, 13):
        p = prop.born(t)[h.basis.index((0, 1))]
        assert p == pytest.approx(math.sin(t) ** 2, abs=1e-12)


def test_toy_two_level_rabi():
    lam = 0.7
    h = toy_model([[0, lam], [lam, 0]])
    psi = QuantumState.basis_state(h.basis, (0,))
    for t in (0.1, 0.5, 1.3, 2.0):
        out = evolve(psi, h, t, method="exact")
        assert out.probabilities()[1] == pytest.approx(math.sin(lam * t) ** 2, abs=1e-12)


def test_exact_and_midpoint_steppers_agree():
    h = build_emission_absorption_model(24, 0.8, 3.0, 2, omega0=0.5)
    psi = QuantumState.from_sector_arrays(h.basis, {0: np.array(0.6), 1: 0.8 * grid_orbital(h.basis, 8.0, 2.5, 0.6)})
    a = psi
    for _ in range(100):
        a = evolve(a, h, 1e-3, method="midpoint")
    b = evolve(psi, h, 0.1, method="exact")
    assert np.max(np.abs(a.amplitudes - b.amplitudes)) < 1e-6
    p = Propagator(h, psi, method="midpoint", max_dt=1e-3)
    assert np.max(np.abs(p.amplitudes(0.1) - b.amplitudes)) < 1e-6


def test_norm_and_energy_conserved_over_many_steps(btqft):
    h, psi = btqft
    e0 = h.energy(psi)
    out = psi
    for _ in range(200):
        out = evolve(out, h, 5e-3, method="midpoint")
    assert abs(norm_squared(out) - 1.0) < 1e-10
    assert abs(h.energy(out) - e0) < 1e-8


def test_interaction_only_changes_number_by_one():
    h = build_emission_absorption_model(24, 0.5, 3.0, 3)
    assert h.sector_steps() == {1}
    rows, cols = h.h_int.nonzero()
    sec = h.basis.sectors
    assert np.all(np.abs(sec[rows] - sec[cols]) == 1)
    rows, cols = h.h0.nonzero()
    assert np.all(sec[rows] == sec[cols])


def test_pair_lattice_changes_number_by_two():
    h = build_bell_lattice_model(2, 1.0, 0.4, 4)
    assert h.sector_steps() == {2}
    h2 = build_bell_lattice_model(2, 1.0, 0.4, 4, single_coupling=0.1)
    assert h2.sector_steps() == {1, 2}


def test_interaction_expectation_is_real(rng):
    h = build_emission_absorption_model(32, 0.3, 4.0, 2)
    for _ in range(20):
        psi = random_state(h.basis, rng)
        val = np.vdot(psi.amplitudes, h.h_int @ psi.amplitudes)
        assert abs(val.imag) < 1e-12


def test_dimension_cap_error_reports_requirement():
    with pytest.raises(DimensionCapError) as err:
        build_bell_lattice_model(6, 1.0, 0.0, 6, max_dim=100)
    assert err.value.required > 100
    assert str(err.value.required) in str(err.value)


def test_under_resolved_form_factor_rejected():
    with pytest.raises(ValueError, match="under-resolved"):
        build_emission_absorption_model(32, 1.0, 1.5, 1, dx=1.0)


def test_conjugate_model_reverses_evolution(bell):
    h, psi = bell
    fwd = evolve(psi, h, 0.7, method="exact")
    back = evolve(fwd.conj(), h.conj(), 0.7, method="exact").conj()
    assert np.max(np.abs(back.amplitudes - psi.amplitudes)) < 1e-12


def test_truncation_leak_is_recorded():
    h = build_bell_lattice_model(2, 1.0, 0.0, 1, single_coupling=0.5)
    top = QuantumState.basis_state(h.basis, (1, 0))
    assert h.leakage_rate(top) > 0
    assert h.leakage_rate(QuantumState.basis_state(h.basis, (0, 0))) == 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.floats(0.01, 5.0))
def test_evolution_preserves_norm(seed, t):
    h = build_bell_lattice_model(3, 1.0, 0.3, 2, single_coupling=0.4, hop_phase=0.5)
    psi = random_state(h.basis, np.random.default_rng(seed))
    assert abs(norm_squared(evolve(psi, h, t)) - 1.0) < 1e-10
