import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from pilotwave.state import (
    BasisMismatchError,
    GridBasis,
    LatticeBasis,
    LatticeConfig,
    NormalizationError,
    Projection,
    QuantumState,
    SectorConfig,
    born_density,
    grid_orbital,
    norm_squared,
    project_expectation,
)

from conftest import random_state


# -- bases and configurations ------------------------------------------------
def test_lattice_basis_enumerates_truncated_occupations():
    b = LatticeBasis(2, 2)
    assert b.labels == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    assert list(b.sectors) == [0, 1, 1, 2, 2, 2]


def test_grid_basis_dimension_counts_multisets():
    b = GridBasis(5, 1.0, 2)
    assert b.dim == 1 + 5 + 15
    assert all(list(lab) == sorted(lab) for lab in b.labels)


def test_lattice_config_rejects_negative_and_oversized():
    with pytest.raises(ValueError):
        LatticeConfig((1, -1))
    with pytest.raises(ValueError):
        LatticeConfig((2, 1)).label(LatticeBasis(2, 2))
    with pytest.raises(BasisMismatchError):
        LatticeConfig((1, 0, 0)).label(LatticeBasis(2, 2))


def test_sector_config_is_permutation_canonical():
    assert SectorConfig((3.0, 1.0)) == SectorConfig((1.0, 3.0))
    b = GridBasis(8, 0.5, 2)
    assert SectorConfig((3.9, 0.2)).label(b) == (0, 7)
    with pytest.raises(ValueError):
        SectorConfig((4.0,)).label(b)  # outside [0, L)


# -- norm_squared --------------------------------------------------------------
def test_norm_of_normalized_gaussian_packet():
    b = GridBasis(64, 0.5, 1)
    psi = QuantumState.from_sector_arrays(b, {1: grid_orbital(b, 16.0, 2.0, 0.7)})
    assert norm_squared(psi) == pytest.approx(1.0, abs=1e-12)


def test_norm_scales_quadratically(rng):
    psi = random_state(LatticeBasis(3, 2), rng)
    assert norm_squared(psi.scaled(2.0)) == pytest.approx(4.0, abs=1e-12)


def test_norm_of_equal_superposition():
    b = LatticeBasis(2, 1)
    s = 1 / math.sqrt(2)
    psi = QuantumState.from_labels(b, {(1, 0): s, (0, 1): s}, normalize=False)
    assert norm_squared(psi) == pytest.approx(1.0, abs=1e-15)


def test_grid_norm_includes_cell_volume():
    # sum |psi_n|^2 dx^n over sectors equals the coefficient norm
    b = GridBasis(6, 0.3, 2)
    rng = np.random.default_rng(1)
    psi = random_state(b, rng)
    total = sum(np.sum(np.abs(psi.sector_array(n)) ** 2) * b.dx**n for n in range(3))
    assert total == pytest.approx(norm_squared(psi), abs=1e-12)


# -- project_expectation ---------------------------------------------------------
def test_projections_over_sector_partition_sum_to_one(rng):
    b = GridBasis(8, 1.0, 2)
    psi = random_state(b, rng)
    total = sum(project_expectation(psi, Projection.sector(b, n)) for n in range(3))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_orthogonal_sector_projection_is_zero():
    b = LatticeBasis(2, 2)
    psi = QuantumState.from_labels(b, {(1, 0): 1.0, (0, 1): 1j})
    assert project_expectation(psi, Projection.sector(b, 0)) == 0.0


def test_single_configuration_projection_of_superposition():
    b = LatticeBasis(2, 1)
    psi = QuantumState.from_labels(b, {(1, 0): 1.0, (0, 1): 1.0})
    assert project_expectation(psi, Projection.configuration(b, (1, 0))) == pytest.approx(0.5, abs=1e-15)


def test_projection_basis_mismatch_raises():
    psi = QuantumState.basis_state(LatticeBasis(2, 1), (0, 0))
    with pytest.raises(BasisMismatchError):
        project_expectation(psi, Projection.sector(LatticeBasis(3, 1), 0))


def test_cell_projection_must_stay_in_one_sector():
    b = GridBasis(4, 1.0, 2)
    with pytest.raises(ValueError):
        Projection.cells(b, [(0,), (0, 1)])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), parts=st.integers(1, 6))
def test_any_partition_sums_to_one(seed, parts):
    rng = np.random.default_rng(seed)
    b = GridBasis(6, 1.0, 2)
    psi = random_state(b, rng)
    owner = rng.integers(0, parts, size=b.dim)
    total = sum(project_expectation(psi, Projection(b, tuple(np.flatnonzero(owner == k)))) for k in range(parts))
    assert total == pytest.approx(1.0, abs=1e-8)
    for k in range(parts):
        p = project_expectation(psi, Projection(b, tuple(np.flatnonzero(owner == k))))
        assert 0.0 <= p <= 1.0 + 1e-12


# -- born_density -----------------------------------------------------------------
def test_born_density_of_basis_state_is_point_mass():
    b = LatticeBasis(3, 2)
    d = born_density(QuantumState.basis_state(b, (1, 0, 1)))
    assert d[(1, 0, 1)] == 1.0
    assert d.total() == 1.0


def test_born_density_symmetric_two_peaks():
    b = GridBasis(32, 1.0, 1)
    phi = grid_orbital(b, 8.0, 1.5) + grid_orbital(b, 24.0, 1.5)
    d = born_density(QuantumState.from_sector_arrays(b, {1: phi}))
    left = sum(d[(i,)] for i in range(16))
    right = sum(d[(i,)] for i in range(16, 32))
    assert left == pytest.approx(0.5, abs=1e-12)
    assert right == pytest.approx(0.5, abs=1e-12)


def test_born_density_of_gaussian_matches_cell_integrals():
    # oracle: |phi|^2 is a normal density with std = width, cell masses via erf
    b = GridBasis(64, 0.5, 1)
    centre, width = 16.0, 2.0
    d = born_density(QuantumState.from_sector_arrays(b, {1: grid_orbital(b, centre, width)}))
    assert d.total() == pytest.approx(1.0, abs=1e-8)
    edges = np.arange(b.points + 1) * b.dx
    z = (edges - centre) / (width * math.sqrt(2))
    exact = 0.5 * np.diff(erf(z))
    got = np.array([d[(i,)] for i in range(b.points)])
    # centre sampling is a midpoint rule: error <= dx^3/24 max|f''|, f'' peak = f(0)/width^2
    bound = b.dx**3 / 24 * (1 / (math.sqrt(2 * math.pi) * width**3))
    assert np.max(np.abs(got - exact)) < 1.1 * bound


def test_born_density_requires_normalization():
    b = LatticeBasis(2, 1)
    psi = QuantumState(b, [1.0, 1.0, 0.0])
    with pytest.raises(NormalizationError):
        born_density(psi)
    assert born_density(psi, auto_normalize=True).total() == pytest.approx(1.0)


def test_born_density_global_phase_invariance(rng):
    psi = random_state(GridBasis(8, 1.0, 2), rng)
    base = born_density(psi).probs
    for theta in rng.uniform(0, 2 * math.pi, size=10):
        assert np.max(np.abs(born_density(psi.scaled(np.exp(1j * theta))).probs - base)) < 1e-12


# -- symmetry and serialization -------------------------------------------------------
def test_sector_arrays_are_permutation_symmetric(rng):
    b = GridBasis(5, 1.0, 3)
    psi = random_state(b, rng)
    a2 = psi.sector_array(2)
    assert np.array_equal(a2, a2.T)
    a3 = psi.sector_array(3)
    assert np.array_equal(a3, np.transpose(a3, (1, 0, 2)))
    assert np.array_equal(a3, np.transpose(a3, (2, 1, 0)))


def test_from_sector_arrays_symmetrizes_on_write():
    b = GridBasis(4, 1.0, 2)
    raw = np.zeros((4, 4), complex)
    raw[0, 1] = 1.0  # not symmetric on input
    psi = QuantumState.from_sector_arrays(b, {2: raw})
    arr = psi.sector_array(2)
    assert np.array_equal(arr, arr.T)
    assert psi.probabilities()[b.index((0, 1))] == pytest.approx(1.0)


def test_state_json_round_trip(rng):
    for basis in (GridBasis(6, 0.25, 2), LatticeBasis(3, 2)):
        psi = random_state(basis, rng)
        doc = psi.to_json()
        assert {"sectors", "dx", "hbar"} <= set(doc)
        back = QuantumState.from_json(doc)
        assert back.basis == psi.basis
        assert np.max(np.abs(back.amplitudes - psi.amplitudes)) < 1e-14


def test_state_json_rejects_asymmetric_sector():
    b = GridBasis(4, 1.0, 2)
    doc = QuantumState.basis_state(b, (0, 1)).to_json()
    doc["sectors"][2]["re"][1] += 0.1
    with pytest.raises(ValueError):
        QuantumState.from_json(doc)


def test_state_is_immutable():
    psi = QuantumState.basis_state(LatticeBasis(2, 1), (0, 0))
    with pytest.raises(ValueError):
        psi.amplitudes[0] = 0.0


def test_density_table_coarsen_preserves_mass(rng):
    b = GridBasis(8, 1.0, 2)
    d = born_density(random_state(b, rng))
    by_sector = d.coarsen(len)
    assert set(by_sector.labels) == {0, 1, 2}
    assert by_sector.total() == pytest.approx(1.0, abs=1e-12)
