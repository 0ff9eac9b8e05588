import numpy as np
import pytest
import scipy.sparse as sp

from pilotwave.models import ModelHamiltonian, build_bell_lattice_model, build_emission_absorption_model
from pilotwave.state import LatticeBasis, QuantumState, grid_orbital


def toy_model(matrix, hbar=1.0, name="toy"):
    """ModelHamiltonian on a one-site lattice whose H is the given dense matrix."""
    m = np.asarray(matrix, dtype=complex)
    dim = m.shape[0]
    basis = LatticeBasis(1, dim - 1)
    zero = sp.csr_matrix((dim, dim), dtype=complex)
    return ModelHamiltonian(basis, zero, sp.csr_matrix(m), sp.csr_matrix((0, dim), dtype=complex), hbar, 1.0, name)


def random_state(basis, rng):
    v = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return QuantumState(basis, v / np.linalg.norm(v))


def bell_preset():
    h = build_bell_lattice_model(2, 1.0, 0.0, 2, single_coupling=0.5, hop_phase=0.3)
    psi = QuantumState.from_labels(h.basis, {(0, 0): 1.0, (1, 0): 0.8, (0, 1): 0.5j})
    return h, psi


def btqft_preset(g=2.0, n_max=1):
    h = build_emission_absorption_model(32, g, 4.0, n_max, omega0=1.0)
    psi = QuantumState.from_sector_arrays(h.basis, {0: np.array(0.8), 1: 0.6 * grid_orbital(h.basis, 10.0, 3.0, 0.8)})
    return h, psi


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def bell():
    return bell_preset()


@pytest.fixture(scope="session")
def btqft():
    return btqft_preset()
