"""Configuration bases, quantum states, projections and Born densities.

Two kinds of configuration basis are supported:

* ``LatticeBasis`` -- occupation-number vectors q(x) on a finite set of
  lattice sites, truncated at a maximum total particle number.
* ``GridBasis`` -- identical bosons on a periodic 1D grid.  A basis label is
  a sorted tuple of cell indices (a multiset), i.e. one point of the
  permutation-reduced N-particle configuration space.  Sector 0 is the
  vacuum ``()``.

A ``QuantumState`` stores one complex coefficient per basis label in an
orthonormal basis, so the Born weight of a label is simply ``|c|**2``.
The symmetric first-quantized wave function of a grid sector is
reconstructed on demand with :meth:`QuantumState.sector_array`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "BasisMismatchError",
    "NormalizationError",
    "LatticeBasis",
    "GridBasis",
    "LatticeConfig",
    "SectorConfig",
    "QuantumState",
    "Projection",
    "DensityTable",
    "norm_squared",
    "project_expectation",
    "born_density",
    "grid_orbital",
]

NORM_TOL = 1e-10


class BasisMismatchError(ValueError):
    """Raised when a state, projection or operator live on different bases."""


class NormalizationError(ValueError):
    """Raised when a normalized state is required but not supplied."""


class _Basis:
    kind = ""

    labels: tuple
    sectors: np.ndarray
    n_max: int

    def _finish(self, labels: list) -> None:
        self.labels = tuple(labels)
        self.sectors = np.array([self.sector_of(lab) for lab in labels], dtype=np.int64)
        self._index = {lab: i for i, lab in enumerate(self.labels)}
        bounds = np.searchsorted(self.sectors, np.arange(self.n_max + 2))
        self._slices = [slice(int(bounds[n]), int(bounds[n + 1])) for n in range(self.n_max + 1)]

    @property
    def dim(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self._index[tuple(label)]
        except KeyError:
            raise KeyError(f"{label!r} is not a configuration of this basis") from None

    def sector_slice(self, n: int) -> slice:
        if not 0 <= n <= self.n_max:
            raise ValueError(f"sector {n} outside 0..{self.n_max}")
        return self._slices[n]

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def _key(self) -> tuple:
        raise NotImplementedError


class LatticeBasis(_Basis):
    """Occupation basis of Gamma(Lambda) truncated at ``n_max`` particles."""

    kind = "lattice"
    cell_volume = 1.0

    def __init__(self, sites: int, n_max: int, site_cap: int | None = None):
        if sites < 1:
            raise ValueError("need at least one lattice site")
        if n_max < 0:
            raise ValueError("n_max must be >= 0")
        self.sites = int(sites)
        self.n_max = int(n_max)
        self.site_cap = int(n_max if site_cap is None else site_cap)
        labels = []
        for n in range(self.n_max + 1):
            block = [
                occ
                for occ in itertools.product(range(min(n, self.site_cap) + 1), repeat=self.sites)
                if sum(occ) == n
            ]
            labels.extend(sorted(block, reverse=True))
        self._finish(labels)

    @staticmethod
    def sector_of(label) -> int:
        return int(sum(label))

    def _key(self) -> tuple:
        return ("lattice", self.sites, self.n_max, self.site_cap)

    def describe(self) -> dict:
        return {"kind": self.kind, "sites": self.sites, "n_max": self.n_max, "site_cap": self.site_cap}


class GridBasis(_Basis):
    """Bosonic Fock basis on a periodic grid of ``points`` cells of width ``dx``.

    Cell ``i`` covers ``[i*dx, (i+1)*dx)``; its grid point is the centre.
    """

    kind = "grid"

    def __init__(self, points: int, dx: float, n_max: int):
        if points < 2:
            raise ValueError("need at least two grid points")
        if dx <= 0:
            raise ValueError("dx must be positive")
        self.points = int(points)
        self.dx = float(dx)
        self.n_max = int(n_max)
        labels = []
        for n in range(self.n_max + 1):
            labels.extend(itertools.combinations_with_replacement(range(self.points), n))
        self._finish(labels)
        self._layout: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @staticmethod
    def sector_of(label) -> int:
        return len(label)

    @property
    def length(self) -> float:
        return self.points * self.dx

    @property
    def cell_volume(self) -> float:
        return self.dx

    def centres(self) -> np.ndarray:
        return (np.arange(self.points) + 0.5) * self.dx

    def cell_of(self, x) -> np.ndarray:
        return np.floor(np.mod(x, self.length) / self.dx).astype(np.int64) % self.points

    def _key(self) -> tuple:
        return ("grid", self.points, self.dx, self.n_max)

    def describe(self) -> dict:
        return {"kind": self.kind, "points": self.points, "dx": self.dx, "n_max": self.n_max}

    def layout(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Map every ordered n-tuple of cells to (basis index, amplitude factor).

        With ``psi[i1..in] = c[label] * factor`` the first-quantized array is
        symmetric and ``sum |psi|**2 dx**n == sum |c|**2`` over the sector.
        """
        if n not in self._layout:
            shape = (self.points,) * n
            idx = np.empty(self.points**n, dtype=np.int64)
            fac = np.empty(self.points**n)
            for flat, tup in enumerate(itertools.product(range(self.points), repeat=n)):
                label = tuple(sorted(tup))
                idx[flat] = self._index[label]
                mult = np.prod([math.factorial(tup.count(c)) for c in set(tup)]) if n else 1
                fac[flat] = math.sqrt(mult / math.factorial(n)) / self.dx ** (n / 2)
            self._layout[n] = (idx.reshape(shape), fac.reshape(shape))
        return self._layout[n]


def _basis_from_description(desc: Mapping) -> _Basis:
    if desc["kind"] == "lattice":
        return LatticeBasis(desc["sites"], desc["n_max"], desc.get("site_cap"))
    if desc["kind"] == "grid":
        return GridBasis(desc["points"], desc["dx"], desc["n_max"])
    raise ValueError(f"unknown basis kind {desc['kind']!r}")


@dataclass(frozen=True)
class LatticeConfig:
    """Fermion numbers q(x), one per lattice site."""

    occupation: tuple[int, ...]

    def __post_init__(self):
        occ = tuple(int(v) for v in self.occupation)
        if any(v < 0 for v in occ):
            raise ValueError(f"negative occupation in {occ}")
        object.__setattr__(self, "occupation", occ)

    @property
    def total(self) -> int:
        return sum(self.occupation)

    def label(self, basis: LatticeBasis) -> tuple[int, ...]:
        if len(self.occupation) != basis.sites:
            raise BasisMismatchError(f"{len(self.occupation)} sites given, basis has {basis.sites}")
        if self.total > basis.n_max:
            raise ValueError(f"total count {self.total} exceeds n_max={basis.n_max}")
        return self.occupation


@dataclass(frozen=True)
class SectorConfig:
    """An unordered tuple of particle positions; stored sorted."""

    positions: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(sorted(float(x) for x in self.positions)))

    @property
    def sector(self) -> int:
        return len(self.positions)

    def label(self, basis: GridBasis) -> tuple[int, ...]:
        if self.sector > basis.n_max:
            raise ValueError(f"{self.sector} particles exceed n_max={basis.n_max}")
        if any(not 0.0 <= x < basis.length for x in self.positions):
            raise ValueError(f"positions {self.positions} outside [0, {basis.length})")
        return tuple(sorted(int(c) for c in basis.cell_of(np.asarray(self.positions))))


class QuantumState:
    """Immutable vector of amplitudes over a configuration basis."""

    def __init__(self, basis: _Basis, amplitudes, hbar: float = 1.0):
        amps = np.array(amplitudes, dtype=np.complex128)
        if amps.shape != (basis.dim,):
            raise BasisMismatchError(f"expected {basis.dim} amplitudes, got shape {amps.shape}")
        amps.setflags(write=False)
        self.basis = basis
        self.amplitudes = amps
        self.hbar = float(hbar)

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_labels(cls, basis: _Basis, amps: Mapping, hbar: float = 1.0, normalize: bool = True):
        vec = np.zeros(basis.dim, dtype=np.complex128)
        for label, a in amps.items():
            vec[basis.index(label)] += a
        state = cls(basis, vec, hbar)
        return state.normalized() if normalize else state

    @classmethod
    def basis_state(cls, basis: _Basis, label, hbar: float = 1.0):
        return cls.from_labels(basis, {tuple(label): 1.0}, hbar)

    @classmethod
    def from_sector_arrays(
        cls, basis: GridBasis, arrays: Mapping[int, np.ndarray], hbar: float = 1.0, normalize: bool = True
    ):
        """Build a grid state from first-quantized sector wave functions.

        Arrays are symmetrized over their axes on the way in; sectors not
        given are empty.
        """
        if not isinstance(basis, GridBasis):
            raise BasisMismatchError("sector arrays need a GridBasis")
        vec = np.zeros(basis.dim, dtype=np.complex128)
        for n, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.complex128)
            if arr.shape != (basis.points,) * n:
                raise BasisMismatchError(f"sector {n} array has shape {arr.shape}")
            if n > 1:
                arr = sum(np.transpose(arr, p) for p in itertools.permutations(range(n))) / math.factorial(n)
            sl = basis.sector_slice(n)
            if n == 0:
                vec[sl] = arr
                continue
            idx, fac = basis.layout(n)
            # any ordered representative recovers c = psi / factor
            vec[idx.ravel()] = arr.ravel() / fac.ravel()
        state = cls(basis, vec, hbar)
        return state.normalized() if normalize else state

    # -- derived states ---------------------------------------------------
    def normalized(self) -> "QuantumState":
        n2 = norm_squared(self)
        if n2 == 0:
            raise NormalizationError("cannot normalize the zero vector")
        return QuantumState(self.basis, self.amplitudes / math.sqrt(n2), self.hbar)

    def conj(self) -> "QuantumState":
        return QuantumState(self.basis, self.amplitudes.conj(), self.hbar)

    def scaled(self, factor: complex) -> "QuantumState":
        return QuantumState(self.basis, self.amplitudes * factor, self.hbar)

    def with_amplitudes(self, amps) -> "QuantumState":
        return QuantumState(self.basis, amps, self.hbar)

    # -- views --------------------------------------------------------------
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def sector_probabilities(self) -> np.ndarray:
        return np.bincount(self.basis.sectors, weights=self.probabilities(), minlength=self.basis.n_max + 1)

    def sector_array(self, n: int) -> np.ndarray:
        """Symmetric first-quantized wave function of sector ``n`` (grid bases only)."""
        basis = self.basis
        if not isinstance(basis, GridBasis):
            return self.amplitudes[basis.sector_slice(n)].copy()
        if n == 0:
            return np.array(self.amplitudes[basis.sector_slice(0)][0])
        idx, fac = basis.layout(n)
        return self.amplitudes[idx] * fac

    def __repr__(self) -> str:
        return f"QuantumState({self.basis.kind}, dim={self.basis.dim}, norm2={norm_squared(self):.6g})"

    # -- serialization ---------------------------------------------------
    def to_json(self) -> dict:
        """Snapshot as ``{sectors: [{n, shape, re, im}], dx, hbar, basis}``."""
        basis = self.basis
        sectors = []
        for n in range(basis.n_max + 1):
            arr = np.asarray(self.sector_array(n))
            sectors.append(
                {
                    "n": n,
                    "shape": list(arr.shape),
                    "re": arr.real.ravel().tolist(),
                    "im": arr.imag.ravel().tolist(),
                }
            )
        return {"sectors": sectors, "dx": float(basis.cell_volume), "hbar": self.hbar, "basis": basis.describe()}

    @classmethod
    def from_json(cls, doc: Mapping) -> "QuantumState":
        basis = _basis_from_description(doc["basis"])
        if not math.isclose(float(doc["dx"]), basis.cell_volume):
            raise BasisMismatchError("dx does not match the basis description")
        arrays = {}
        for sec in doc["sectors"]:
            arr = np.asarray(sec["re"], dtype=float) + 1j * np.asarray(sec["im"], dtype=float)
            arrays[int(sec["n"])] = arr.reshape(sec["shape"])
        if isinstance(basis, GridBasis):
            for n, arr in arrays.items():
                for p in itertools.permutations(range(n)):
                    if not np.allclose(np.transpose(arr, p), arr, rtol=0, atol=1e-12):
                        raise ValueError(f"sector {n} array is not permutation symmetric")
            return cls.from_sector_arrays(basis, arrays, doc["hbar"], normalize=False)
        vec = np.concatenate([arrays[n].ravel() for n in range(basis.n_max + 1)])
        return cls(basis, vec, doc["hbar"])


@dataclass(frozen=True)
class Projection:
    """Projector onto a set of basis labels (one configuration, a sector, or cells)."""

    basis: _Basis
    indices: tuple[int, ...]
    description: str = ""

    @classmethod
    def configuration(cls, basis: _Basis, label) -> "Projection":
        return cls(basis, (basis.index(label),), f"config {tuple(label)}")

    @classmethod
    def sector(cls, basis: _Basis, n: int) -> "Projection":
        sl = basis.sector_slice(n)
        return cls(basis, tuple(range(sl.start, sl.stop)), f"sector {n}")

    @classmethod
    def cells(cls, basis: _Basis, labels: Iterable) -> "Projection":
        labels = [tuple(lab) for lab in labels]
        sectors = {basis.sector_of(lab) for lab in labels}
        if len(sectors) > 1:
            raise ValueError("a cell projection must stay inside one sector")
        return cls(basis, tuple(sorted({basis.index(lab) for lab in labels})), "cells")

    def mask(self) -> np.ndarray:
        m = np.zeros(self.basis.dim, dtype=bool)
        m[list(self.indices)] = True
        return m


@dataclass(frozen=True)
class DensityTable:
    """Probability masses attached to an ordered tuple of cell labels."""

    labels: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (len(self.labels),):
            raise ValueError("one probability per label required")
        object.__setattr__(self, "probs", probs)

    def __getitem__(self, label) -> float:
        return float(self.probs[self.labels.index(label)])

    def total(self) -> float:
        return float(np.sum(self.probs))

    def as_dict(self) -> dict:
        return dict(zip(self.labels, self.probs.tolist()))

    def coarsen(self, key) -> "DensityTable":
        """Merge labels that map to the same ``key(label)``; keys keep first-seen order."""
        out: dict = {}
        for lab, p in zip(self.labels, self.probs):
            k = key(lab)
            out[k] = out.get(k, 0.0) + p
        return DensityTable(tuple(out), np.fromiter(out.values(), float, len(out)))


def norm_squared(state: QuantumState) -> float:
    """``sum |c|**2`` -- equal to ``sum_n sum |psi_n|**2 dx**n`` on grids."""
    return float(np.vdot(state.amplitudes, state.amplitudes).real)


def project_expectation(state: QuantumState, p: Projection) -> float:
    if p.basis != state.basis:
        raise BasisMismatchError("projection and state use different bases")
    amps = state.amplitudes[list(p.indices)]
    return float(np.vdot(amps, amps).real)


def born_density(state: QuantumState, auto_normalize: bool = False) -> DensityTable:
    n2 = norm_squared(state)
    if abs(n2 - 1.0) > NORM_TOL:
        if not auto_normalize:
            raise NormalizationError(f"state has norm^2 {n2:.12g}; pass auto_normalize=True to rescale")
        state = state.normalized()
    return DensityTable(state.basis.labels, state.probabilities())


def grid_orbital(basis: GridBasis, centre: float, width: float, momentum: float = 0.0) -> np.ndarray:
    """Gaussian packet sampled at cell centres with periodic distance,
    normalized so that ``sum |phi|**2 dx == 1``."""
    x = basis.centres()
    d = (x - centre + basis.length / 2) % basis.length - basis.length / 2
    phi = np.exp(-(d**2) / (4 * width**2) + 1j * momentum * d)
    return phi / math.sqrt(np.sum(np.abs(phi) ** 2) * basis.dx)
