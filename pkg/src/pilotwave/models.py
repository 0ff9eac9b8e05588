"""Desk-scale Hamiltonians split as H = H0 + H_int, and unitary evolution.

Both models use bosonic ladder-operator matrix elements on the truncated
basis.  Terms that would push amplitude beyond ``n_max`` are not part of
``H`` (hard truncation) but are kept in ``ModelHamiltonian.leak`` so a run
can report how strongly the cutoff is being hit.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .state import BasisMismatchError, GridBasis, LatticeBasis, QuantumState, norm_squared

__all__ = [
    "ModelHamiltonian",
    "DimensionCapError",
    "build_bell_lattice_model",
    "build_emission_absorption_model",
    "evolve",
    "Propagator",
    "EXACT_DIM_LIMIT",
]

log = logging.getLogger(__name__)

EXACT_DIM_LIMIT = 4096
UNITARITY_TOL = 1e-10


class DimensionCapError(ValueError):
    def __init__(self, dim: int, cap: int):
        super().__init__(f"basis dimension {dim} exceeds cap {cap}; rerun with max_dim >= {dim}")
        self.required = dim


@dataclass(eq=False)
class ModelHamiltonian:
    """Hermitian H = h0 + h_int on a truncated configuration basis.

    ``h0`` is sector diagonal; ``h_int`` only couples sectors whose particle
    numbers differ by a model-specific step (1, or 2 for pair terms).
    """

    basis: LatticeBasis | GridBasis
    h0: sp.csr_matrix
    h_int: sp.csr_matrix
    leak: sp.csr_matrix
    hbar: float = 1.0
    mass: float = 1.0
    name: str = ""
    params: dict = field(default_factory=dict)
    static_particles: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def h(self) -> sp.csr_matrix:
        if "h" not in self._cache:
            self._cache["h"] = (self.h0 + self.h_int).tocsr()
        return self._cache["h"]

    def dense(self) -> np.ndarray:
        return self.h.toarray()

    def conj(self) -> "ModelHamiltonian":
        """Time-reversed model: complex conjugate of every term."""
        return ModelHamiltonian(
            self.basis,
            self.h0.conj().tocsr(),
            self.h_int.conj().tocsr(),
            self.leak.conj().tocsr(),
            self.hbar,
            self.mass,
            self.name + "*",
            dict(self.params),
            self.static_particles,
        )

    def hermiticity_defect(self) -> float:
        worst = 0.0
        for m in (self.h0, self.h_int):
            d = (m - m.conj().T).tocoo()
            if d.nnz:
                worst = max(worst, float(np.max(np.abs(d.data))))
        return worst

    def sector_steps(self) -> set[int]:
        """Particle-number changes produced by ``h_int`` (absolute values)."""
        coo = self.h_int.tocoo()
        s = self.basis.sectors
        nz = coo.data != 0
        return set(np.abs(s[coo.row[nz]] - s[coo.col[nz]]).tolist())

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        if "eigh" not in self._cache:
            if self.dim > EXACT_DIM_LIMIT:
                raise ValueError(f"dimension {self.dim} too large for dense eigendecomposition")
            self._cache["eigh"] = scipy.linalg.eigh(self.dense())
        return self._cache["eigh"]

    def energy(self, state: QuantumState) -> float:
        return float(np.vdot(state.amplitudes, self.h @ state.amplitudes).real)

    def leakage_rate(self, state: QuantumState) -> float:
        """Norm of the amplitude flux that the cutoff discards, per unit time."""
        if self.leak.shape[0] == 0:
            return 0.0
        return float(np.linalg.norm(self.leak @ state.amplitudes)) / self.hbar

    def write_triplets(self, path, part: str = "h") -> None:
        """Export ``h``, ``h0`` or ``h_int`` as CSV rows ``row,col,re,im``."""
        mat = {"h": self.h, "h0": self.h0, "h_int": self.h_int}[part].tocoo()
        order = np.lexsort((mat.col, mat.row))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "re", "im"])
            for k in order:
                v = mat.data[k]
                w.writerow([int(mat.row[k]), int(mat.col[k]), repr(float(v.real)), repr(float(v.imag))])


class _Assembler:
    """Collects matrix elements; rows outside the truncated basis go to ``leak``."""

    def __init__(self, basis):
        self.basis = basis
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[complex] = []
        self.leak_index: dict = {}
        self.leak_rows: list[int] = []
        self.leak_cols: list[int] = []
        self.leak_vals: list[complex] = []

    def add(self, row_label, col: int, value: complex) -> None:
        if value == 0:
            return
        if self.basis.sector_of(row_label) > self.basis.n_max:
            r = self.leak_index.setdefault(row_label, len(self.leak_index))
            self.leak_rows.append(r)
            self.leak_cols.append(col)
            self.leak_vals.append(value)
            return
        self.rows.append(self.basis.index(row_label))
        self.cols.append(col)
        self.vals.append(value)

    def matrix(self) -> sp.csr_matrix:
        n = self.basis.dim
        return sp.csr_matrix((np.array(self.vals, complex), (self.rows, self.cols)), shape=(n, n))

    def leak_matrix(self) -> sp.csr_matrix:
        shape = (len(self.leak_index), self.basis.dim)
        return sp.csr_matrix((np.array(self.leak_vals, complex), (self.leak_rows, self.leak_cols)), shape=shape)


def _hermitian(upper: sp.csr_matrix, diag: np.ndarray | None = None) -> sp.csr_matrix:
    m = upper + upper.conj().T
    if diag is not None:
        m = m + sp.diags(diag.astype(complex))
    m = m.tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    return m


# -- ladder operators on labels ---------------------------------------------
def _lat_create(occ: tuple, x: int, cap: int):
    if occ[x] + 1 > cap:
        return None
    new = list(occ)
    new[x] += 1
    return tuple(new), math.sqrt(occ[x] + 1)


def _lat_destroy(occ: tuple, x: int):
    if occ[x] == 0:
        return None
    new = list(occ)
    new[x] -= 1
    return tuple(new), math.sqrt(occ[x])


def _grid_create(cells: tuple, x: int):
    return tuple(sorted(cells + (x,))), math.sqrt(cells.count(x) + 1)


def _grid_destroy(cells: tuple, x: int):
    if x not in cells:
        return None
    lst = list(cells)
    lst.remove(x)
    return tuple(lst), math.sqrt(cells.count(x))


def build_bell_lattice_model(
    sites: int,
    hop: float,
    pair_coupling: float,
    n_max: int,
    single_coupling: float = 0.0,
    onsite: float = 0.0,
    hop_phase: float = 0.0,
    coupling_phase: float = 0.0,
    site_cap: int | None = None,
    hbar: float = 1.0,
    max_dim: int = EXACT_DIM_LIMIT,
) -> ModelHamiltonian:
    """Lattice model on an open chain.

    H0 = -hop * sum_x (e^{i hop_phase} a+_{x+1} a_x + h.c.) + onsite * N
    H_int = sum_x single_coupling (e^{i coupling_phase} a+_x + h.c.)
          + pair_coupling (a+_x a+_x + h.c.)
    """
    if sites < 2:
        raise ValueError("sites must be >= 2")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    basis = LatticeBasis(sites, n_max, site_cap)
    if basis.dim > max_dim:
        raise DimensionCapError(basis.dim, max_dim)
    cap = basis.site_cap
    free, inter = _Assembler(basis), _Assembler(basis)
    t = -hop * np.exp(1j * hop_phase)
    g = single_coupling * np.exp(1j * coupling_phase)
    for col, occ in enumerate(basis.labels):
        for x in range(sites - 1):
            out = _lat_destroy(occ, x)
            if out is not None:
                mid, a1 = out
                up = _lat_create(mid, x + 1, cap)
                if up is not None:
                    free.add(up[0], col, t * a1 * up[1])
        for x in range(sites):
            if g != 0:
                up = _lat_create(occ, x, cap)
                if up is not None:
                    inter.add(up[0], col, g * up[1])
            if pair_coupling != 0:
                up = _lat_create(occ, x, cap)
                if up is not None:
                    up2 = _lat_create(up[0], x, cap)
                    if up2 is not None:
                        inter.add(up2[0], col, pair_coupling * up[1] * up2[1])
    h0 = _hermitian(free.matrix(), onsite * basis.sectors)
    h_int = _hermitian(inter.matrix())
    params = dict(
        sites=sites, hop=hop, pair_coupling=pair_coupling, n_max=n_max, single_coupling=single_coupling,
        onsite=onsite, hop_phase=hop_phase, coupling_phase=coupling_phase, site_cap=basis.site_cap,
    )
    return ModelHamiltonian(basis, h0, h_int, inter.leak_matrix(), hbar, 1.0, "bell-lattice", params)


def form_factor(basis: GridBasis, sources, width: float) -> np.ndarray:
    """Sum of unit-area Gaussians of the given width centred at ``sources``."""
    x = basis.centres()
    f = np.zeros(basis.points)
    for s in sources:
        d = (x - s + basis.length / 2) % basis.length - basis.length / 2
        f += np.exp(-(d**2) / (2 * width**2)) / (math.sqrt(2 * math.pi) * width)
    return f


def build_emission_absorption_model(
    points: int,
    g: float,
    w: float,
    n_max: int,
    dx: float = 1.0,
    omega0: float = 1.0,
    mass: float = 1.0,
    sources=None,
    coupling_phase: float = 0.0,
    static_particles: int = 0,
    hbar: float = 1.0,
) -> ModelHamiltonian:
    """Free bosons on a periodic grid emitted and absorbed by fixed sources.

    H0 is the 3-point discrete Laplacian per particle plus a rest energy
    ``omega0`` per boson.  H_int = g sqrt(dx) sum_i f_i (e^{i phase} a+_i + h.c.)
    with ``f`` the Gaussian form factor of width ``w`` around each source
    (default: one source at the grid centre).
    """
    if points < 16:
        raise ValueError("grid needs at least 16 points")
    if w < 2 * dx:
        raise ValueError(f"form factor under-resolved: w={w} < 2*dx={2 * dx}")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    basis = GridBasis(points, dx, n_max)
    if sources is None:
        sources = [basis.length / 2]
    f = form_factor(basis, sources, w)
    coef = g * math.sqrt(dx) * np.exp(1j * coupling_phase)
    kin = hbar**2 / (2 * mass * dx**2)
    free, inter = _Assembler(basis), _Assembler(basis)
    for col, cells in enumerate(basis.labels):
        for x in set(cells):
            mid, a1 = _grid_destroy(cells, x)
            up, a2 = _grid_create(mid, (x + 1) % points)
            free.add(up, col, -kin * a1 * a2)
        if coef != 0:
            for x in range(points):
                up, a = _grid_create(cells, x)
                inter.add(up, col, coef * f[x] * a)
    diag = (2 * kin + omega0) * basis.sectors
    h0 = _hermitian(free.matrix(), diag)
    h_int = _hermitian(inter.matrix())
    params = dict(
        points=points, g=g, w=w, n_max=n_max, dx=dx, omega0=omega0, mass=mass,
        sources=[float(s) for s in sources], coupling_phase=coupling_phase,
    )
    return ModelHamiltonian(
        basis, h0, h_int, inter.leak_matrix(), hbar, mass, "btqft-emission", params, static_particles
    )


# -- Schrödinger evolution ---------------------------------------------------
def _check_basis(state: QuantumState, h: ModelHamiltonian) -> None:
    if state.basis != h.basis:
        raise BasisMismatchError("state and Hamiltonian use different bases")


def _exact_step(h: ModelHamiltonian, amps: np.ndarray, dt: float) -> np.ndarray:
    evals, evecs = h.eigh()
    return evecs @ (np.exp(-1j * evals * dt / h.hbar) * (evecs.conj().T @ amps))


def _midpoint_step(h: ModelHamiltonian, amps: np.ndarray, dt: float) -> np.ndarray:
    key = ("cn", dt)
    if key not in h._cache:
        a = (sp.identity(h.dim, format="csc") + 0.5j * dt / h.hbar * h.h).tocsc()
        b = (sp.identity(h.dim, format="csr") - 0.5j * dt / h.hbar * h.h).tocsr()
        h._cache[key] = (spla.splu(a), b)
    lu, b = h._cache[key]
    return lu.solve(b @ amps)


def _method(h: ModelHamiltonian, method: str) -> str:
    if method == "auto":
        return "exact" if h.dim <= EXACT_DIM_LIMIT else "midpoint"
    if method not in ("exact", "midpoint"):
        raise ValueError(f"unknown method {method!r}")
    return method


def evolve(
    state: QuantumState,
    h: ModelHamiltonian,
    dt: float,
    method: str = "auto",
    tol: float = UNITARITY_TOL,
    _depth: int = 0,
) -> QuantumState:
    """Advance ``state`` by ``dt`` under ``h``.

    ``method`` is ``"exact"`` (eigendecomposition), ``"midpoint"``
    (implicit midpoint / Crank-Nicolson) or ``"auto"``.  A step whose norm
    defect exceeds ``tol`` is redone as two half steps.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_basis(state, h)
    step = _exact_step if _method(h, method) == "exact" else _midpoint_step
    out = step(h, state.amplitudes, dt)
    defect = abs(np.vdot(out, out).real - norm_squared(state))
    if defect > tol:
        if _depth >= 20:
            raise FloatingPointError(f"unitarity defect {defect:.3g} persists at dt={dt:.3g}")
        log.warning("step rejected (norm defect %.3g), halving dt=%.3g", defect, dt)
        half = evolve(state, h, dt / 2, method, tol, _depth + 1)
        return evolve(half, h, dt / 2, method, tol, _depth + 1)
    return state.with_amplitudes(out)


class Propagator:
    """Psi(t) = exp(-i H t / hbar) Psi0 at arbitrary nondecreasing times.

    Uses the cached eigendecomposition when the dimension allows; otherwise
    integrates forward with implicit midpoint steps no longer than ``max_dt``.
    """

    def __init__(self, h: ModelHamiltonian, psi0: QuantumState, method: str = "auto", max_dt: float = 1e-3):
        _check_basis(psi0, h)
        self.h = h
        self.psi0 = psi0
        self.method = _method(h, method)
        self.max_dt = max_dt
        if self.method == "exact":
            evals, evecs = h.eigh()
            self._evals = evals
            self._evecs = evecs
            self._coeffs = evecs.conj().T @ psi0.amplitudes
        # midpoint method: states already computed, used as restart anchors
        self._anchor_t = [0.0]
        self._anchor_a = [psi0.amplitudes.copy()]

    def amplitudes(self, t: float, anchor: bool = True) -> np.ndarray:
        """Amplitudes at time ``t``.

        In midpoint mode the result is integrated from the latest anchor
        at or before ``t``; ``anchor=False`` keeps it out of the anchor list
        so later requests do not depend on it.
        """
        if self.method == "exact":
            return self._evecs @ (np.exp(-1j * self._evals * t / self.h.hbar) * self._coeffs)
        k = bisect.bisect_right(self._anchor_t, t) - 1
        if k < 0:
            raise ValueError(f"time {t} precedes every retained anchor")
        t0, amps = self._anchor_t[k], self._anchor_a[k]
        remaining = t - t0
        if remaining > 0:
            n = max(1, math.ceil(remaining / self.max_dt - 1e-9))
            for _ in range(n):
                amps = _midpoint_step(self.h, amps, remaining / n)
            if anchor:
                self._anchor_t.insert(k + 1, t)
                self._anchor_a.insert(k + 1, amps)
        return amps.copy()

    def forget_before(self, t: float) -> None:
        """Drop midpoint anchors older than the newest one at or before ``t``."""
        k = bisect.bisect_right(self._anchor_t, t) - 1
        if k > 0:
            del self._anchor_t[:k]
            del self._anchor_a[:k]

    def state(self, t: float) -> QuantumState:
        return self.psi0.with_amplitudes(self.amplitudes(t))

    def born(self, t: float) -> np.ndarray:
        return np.abs(self.amplitudes(t)) ** 2

