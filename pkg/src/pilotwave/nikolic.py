"""Deterministic multi-time pilot-wave model for a decay superposition.

Three particles carry their own spacetime coordinates ``X_k = (t_k, x_k)``
in 1+1 dimensions (c = hbar = 1).  The wave function is

    Psi = a1 psi1(X_1) E1(y) + a2 psi2(X_2) psi3(X_3) E2(y)

where ``psi1`` describes the unstable particle, ``psi2 psi3`` the decay
products and ``E1, E2`` two Gaussian pointer states of a detector
coordinate ``y``.  Each particle moves along an auxiliary parameter ``s``:

    dX_k^mu / ds = (i/2) Psi* d<->_k^mu Psi / |Psi|^2 = -Im(Psi* d_k^mu Psi) / |Psi|^2

with ``d^mu = (d_t, -d_x)``; a plane wave ``exp(i(kx - Et))`` moves with
``(E, k)``.  The pointer follows the ordinary single-time law
``dY/ds = Im(d_y Psi / Psi) / m_y``.

Packets are finite, Gaussian-weighted superpositions of Klein-Gordon plane
waves, so they solve the wave equation exactly and all derivatives are
analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

__all__ = [
    "NodeError",
    "Packet",
    "DecayScenario",
    "MultiTimePoint",
    "MultiTimePath",
    "wave_function",
    "four_velocity",
    "pointer_velocity",
    "integrate_multitime",
    "dead_particle_speed",
    "dead_particle_speed_direct",
    "settled_scenario",
    "sweep_dead_speed",
    "continuity_residual",
    "two_stage_paths",
    "default_scenario",
    "mirror_scenario",
]

DENSITY_FLOOR = 1e-300


class NodeError(ArithmeticError):
    """|Psi|^2 underflows at the requested point."""


@dataclass(frozen=True)
class Packet:
    """Wave packet ``sum_j w_j exp(i(k_j (x - center) - E_j t) + i phase)``.

    ``k_j = momentum + sqrt(2) sigma_p u_j`` on probabilists' Hermite nodes
    ``u_j`` with ``sigma_p = 1/(2 width)``; at ``t = 0`` the density is close
    to a normal density of standard deviation ``width``.
    """

    center: float = 0.0
    width: float = 1.0
    momentum: float = 0.0
    phase: float = 0.0
    mass: float = 0.0
    nodes: int = 24

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("packet width must be positive")
        if self.mass < 0:
            raise ValueError("mass must be non-negative")
        if self.nodes < 1:
            raise ValueError("need at least one quadrature node")

    def modes(self):
        return _modes(self)

    def evaluate(self, t, x):
        """Return ``(psi, d_t psi, d_x psi)`` for scalar or array ``t, x``."""
        k, E, c = self.modes()
        t = np.asarray(t, float)[..., None]
        x = np.asarray(x, float)[..., None]
        waves = c * np.exp(1j * (k * (x - self.center) - E * t))
        return waves.sum(-1), (-1j * E * waves).sum(-1), (1j * k * waves).sum(-1)

    def mirrored(self) -> "Packet":
        """The packet reflected through x = 0."""
        return replace(self, center=-self.center, momentum=-self.momentum)


@lru_cache(maxsize=256)
def _modes(p: Packet):
    u, w = hermegauss(p.nodes)
    k = p.momentum + math.sqrt(2.0) / (2.0 * p.width) * u
    E = np.sqrt(k * k + p.mass**2)
    norm = (2.0 * math.pi * p.width**2) ** -0.25 / math.sqrt(2.0 * math.pi)
    return k, E, norm * w * np.exp(1j * p.phase)


@dataclass(frozen=True)
class DecayScenario:
    """Branch packets, pointer states and branch weights.

    ``collapse`` is ``"none"`` for the full superposition, ``"exact"`` for
    exact selection of the two-particle branch (disjoint pointer supports),
    or ``"exact-1"`` for selection of the one-particle branch.
    ``detectors=False`` removes the pointer factors altogether.
    """

    psi1: Packet = Packet()
    psi2: Packet = Packet()
    psi3: Packet = Packet()
    mu1: float = -3.0
    mu2: float = 3.0
    w_E: float = 0.5
    a1: complex = 1 / math.sqrt(2)
    a2: complex = 1 / math.sqrt(2)
    pointer_mass: float = 1.0
    collapse: str = "none"
    detectors: bool = True

    def __post_init__(self):
        if not self.w_E > 0:
            raise ValueError("detector width w_E must be positive")
        if not self.pointer_mass > 0:
            raise ValueError("pointer mass must be positive")
        if abs(abs(self.a1) ** 2 + abs(self.a2) ** 2 - 1.0) > 1e-12:
            raise ValueError("branch weights must satisfy |a1|^2 + |a2|^2 = 1")
        if self.collapse not in ("none", "exact", "exact-1"):
            raise ValueError(f"unknown collapse mode {self.collapse!r}")

    @property
    def separation(self) -> float:
        return abs(self.mu1 - self.mu2)

    def overlap(self) -> float:
        """Bhattacharyya overlap of the pointer densities, exp(-sep^2 / (8 w_E^2))."""
        return math.exp(-self.separation**2 / (8.0 * self.w_E**2))

    def pointer_state(self, j: int, y):
        """``(E_j(y), E_j'(y))`` with E_j = (2 pi w^2)^(-1/4) exp(-(y - mu_j)^2 / (4 w^2))."""
        mu = self.mu1 if j == 1 else self.mu2
        y = np.asarray(y, float)
        e = (2.0 * math.pi * self.w_E**2) ** -0.25 * np.exp(-((y - mu) ** 2) / (4.0 * self.w_E**2))
        return e, -(y - mu) / (2.0 * self.w_E**2) * e

    def reference_point(self, t: float = 0.0) -> "MultiTimePoint":
        coords = np.array([[t, self.psi1.center], [t, self.psi2.center], [t, self.psi3.center]])
        return MultiTimePoint(coords, 0.0, self.mu2)


@dataclass(frozen=True)
class MultiTimePoint:
    """Spacetime coordinates ``coords[k] = (t_k, x_k)`` of the three particles,
    the parameter ``s`` and the pointer coordinate ``y``."""

    coords: np.ndarray
    s: float = 0.0
    y: float = 0.0

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(3, 2)
        if not np.all(np.isfinite(c)) or not math.isfinite(self.y):
            raise ValueError("multi-time coordinates must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.coords.ravel(), [self.y]])


def _branches(sc: DecayScenario, coords: np.ndarray, y: float):
    """Returns ``(psi, d, dy, b1, b2)``.

    ``d[k, mu]`` is ``d_k^mu`` of the full wave function (contravariant,
    ``d^1 = -d_x``), ``dy`` its pointer derivative and ``b1, b2`` the two
    branch values.
    """
    (t1, x1), (t2, x2), (t3, x3) = coords
    p1, p1t, p1x = sc.psi1.evaluate(t1, x1)
    p2, p2t, p2x = sc.psi2.evaluate(t2, x2)
    p3, p3t, p3x = sc.psi3.evaluate(t3, x3)
    if sc.detectors:
        e1, e1y = sc.pointer_state(1, y)
        e2, e2y = sc.pointer_state(2, y)
    else:
        e1, e1y, e2, e2y = 1.0, 0.0, 1.0, 0.0
    w1 = 0.0 if sc.collapse == "exact" else sc.a1
    w2 = 0.0 if sc.collapse == "exact-1" else sc.a2
    b1 = w1 * p1 * e1
    b2 = w2 * p2 * p3 * e2
    d = np.zeros((3, 2), dtype=complex)
    if w1 != 0.0:
        d[0] = w1 * e1 * p1t, -w1 * e1 * p1x
    if w2 != 0.0:
        d[1] = w2 * e2 * p3 * p2t, -w2 * e2 * p3 * p2x
        d[2] = w2 * e2 * p2 * p3t, -w2 * e2 * p2 * p3x
    dy = w1 * p1 * e1y + w2 * p2 * p3 * e2y
    return complex(b1 + b2), d, complex(dy), complex(b1), complex(b2)


def wave_function(sc: DecayScenario, X: MultiTimePoint) -> complex:
    return _branches(sc, X.coords, X.y)[0]


def four_velocity(sc: DecayScenario, X: MultiTimePoint) -> np.ndarray:
    """Array ``v[k] = (dX_k^0/ds, dX_k^1/ds)`` for the three particles."""
    psi, d, _, _, _ = _branches(sc, X.coords, X.y)
    rho = abs(psi) ** 2
    if rho < DENSITY_FLOOR:
        raise NodeError(f"node encountered at {X.flat()}")
    return -np.imag(np.conj(psi) * d) / rho


def pointer_velocity(sc: DecayScenario, X: MultiTimePoint) -> float:
    if not sc.detectors:
        return 0.0
    psi, _, dy, _, _ = _branches(sc, X.coords, X.y)
    if abs(psi) ** 2 < DENSITY_FLOOR:
        raise NodeError(f"node encountered at {X.flat()}")
    return float(np.imag(dy / psi)) / sc.pointer_mass


def _rhs(sc, z, move_pointer):
    X = MultiTimePoint(z[:6], 0.0, z[6])
    out = np.empty(7)
    out[:6] = four_velocity(sc, X).ravel()
    out[6] = pointer_velocity(sc, X) if move_pointer else 0.0
    return out


def _dominant(sc, z) -> int:
    _, _, _, b1, b2 = _branches(sc, z[:6].reshape(3, 2), z[6])
    return 1 if abs(b1) >= abs(b2) else 2


@dataclass
class MultiTimePath:
    s: np.ndarray  # (n,)
    points: np.ndarray  # (n, 7): t1, x1, t2, x2, t3, x3, y
    dominant: np.ndarray  # (n,) branch with larger |amplitude| at the actual point
    rejected_steps: int = 0

    COLUMNS = ("s", "X1_0", "X1_1", "X2_0", "X2_1", "X3_0", "X3_1", "Y")

    def end(self) -> MultiTimePoint:
        z = self.points[-1]
        return MultiTimePoint(z[:6], float(self.s[-1]), float(z[6]))

    def rows(self):
        for s, z in zip(self.s, self.points):
            yield (float(s),) + tuple(float(v) for v in z)

    def to_csv(self, dest=None, with_dominant: bool = False) -> str:
        cols = self.COLUMNS + (("dominant_branch",) if with_dominant else ())
        lines = [",".join(cols)]
        for i, row in enumerate(self.rows()):
            vals = [repr(v) for v in row]
            if with_dominant:
                vals.append(str(int(self.dominant[i])))
            lines.append(",".join(vals))
        text = "\n".join(lines) + "\n"
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


def integrate_multitime(
    sc: DecayScenario,
    X0: MultiTimePoint,
    s_span: float,
    ds: float,
    move_pointer: bool = True,
    ds_min: float = 1e-9,
) -> MultiTimePath:
    """Explicit midpoint integration of all particles (and the pointer) along s.

    A step that meets a node is retried with half the step size.
    """
    if not (s_span > 0 and ds > 0):
        raise ValueError("s_span and ds must be positive")
    n = max(1, int(round(s_span / ds)))
    h = s_span / n
    z = X0.flat()
    s = X0.s
    S, Z, D = [s], [z.copy()], [_dominant(sc, z)]
    rejected = 0

    def step(z, h):
        k1 = _rhs(sc, z, move_pointer)
        return z + h * _rhs(sc, z + 0.5 * h * k1, move_pointer)

    def advance(z, h):
        nonlocal rejected
        try:
            return step(z, h)
        except NodeError:
            rejected += 1
            if h / 2 < ds_min:
                raise
            return advance(advance(z, h / 2), h / 2)

    for i in range(n):
        z = advance(z, h)
        s = X0.s + (i + 1) * h
        S.append(s)
        Z.append(z.copy())
        D.append(_dominant(sc, z))
    return MultiTimePath(np.array(S), np.array(Z), np.array(D), rejected)


# -- dead-particle analysis -----------------------------------------------
def settled_scenario(sc: DecayScenario, separation: float) -> DecayScenario:
    """Scenario with the branch-1 pointer state moved to ``mu2 - separation``;
    an infinite separation becomes exact selection of branch 2."""
    if separation < 0:
        raise ValueError("separation must be non-negative")
    if math.isinf(separation):
        return replace(sc, collapse="exact", detectors=True)
    return replace(sc, mu1=sc.mu2 - separation, collapse="none", detectors=True)


def dead_particle_speed(sc: DecayScenario, separation: float, X: MultiTimePoint | None = None) -> float:
    """Max-norm of particle 1's 4-velocity once the pointer sits at ``Y = mu2``.

    Evaluated on the conditional wave function with the pointer ratio
    ``r = E1(Y)/E2(Y) = exp(-sep^2 / (4 w_E^2))`` taken in closed form, so
    the particle-1 log-derivative is ``a1 r d psi1 / (a1 r psi1 + a2 psi2 psi3)``.
    """
    if separation < 0:
        raise ValueError("separation must be non-negative")
    if math.isinf(separation):
        return 0.0
    X = sc.reference_point() if X is None else X
    r = math.exp(-(separation**2) / (4.0 * sc.w_E**2))
    (t1, x1), (t2, x2), (t3, x3) = X.coords
    p1, p1t, p1x = sc.psi1.evaluate(t1, x1)
    p2 = sc.psi2.evaluate(t2, x2)[0]
    p3 = sc.psi3.evaluate(t3, x3)[0]
    cond = sc.a1 * r * p1 + sc.a2 * p2 * p3
    log_t = sc.a1 * r * p1t / cond
    log_x = sc.a1 * r * p1x / cond
    v = np.array([-np.imag(log_t), np.imag(log_x)])
    return float(np.max(np.abs(v)))


def dead_particle_speed_direct(sc: DecayScenario, separation: float, X: MultiTimePoint | None = None) -> float:
    """Same quantity through ``four_velocity`` on the full wave function."""
    s2 = settled_scenario(sc, separation)
    X = s2.reference_point() if X is None else X
    X = MultiTimePoint(X.coords, X.s, s2.mu2)
    return float(np.max(np.abs(four_velocity(s2, X)[0])))


def sweep_dead_speed(sc: DecayScenario, separations) -> list[dict]:
    rows = []
    for sep in separations:
        s2 = settled_scenario(sc, sep)
        rows.append(
            {
                "separation": float(sep),
                "overlap": 0.0 if math.isinf(sep) else s2.overlap(),
                "dead_speed": dead_particle_speed(sc, sep),
                "direct_speed": dead_particle_speed_direct(sc, sep),
            }
        )
    return rows


def continuity_residual(sc: DecayScenario, rng: np.random.Generator, n_points: int = 100, h: float = 1e-4, t_range=(0.0, 1.0)) -> float:
    """Max over random points of |sum_k d_mu j_k^mu| / |Psi|^2 (central differences).

    The current is ``j_k^mu = |Psi|^2 dX_k^mu/ds``; points are drawn within
    1.5 widths of each packet centre at times in ``t_range``; the pointer
    sits at ``mu2``.
    """
    packets = (sc.psi1, sc.psi2, sc.psi3)

    def current(c, y):
        psi, d, _, _, _ = _branches(sc, c, y)
        return -np.imag(np.conj(psi) * d), abs(psi) ** 2

    worst = 0.0
    for _ in range(n_points):
        c = np.empty((3, 2))
        for k, p in enumerate(packets):
            c[k, 0] = rng.uniform(*t_range)
            c[k, 1] = p.center + p.momentum * c[k, 0] + rng.uniform(-1.5, 1.5) * p.width
        y = sc.mu2
        div = 0.0
        for k in range(3):
            for mu in range(2):
                e = np.zeros((3, 2))
                e[k, mu] = h
                jp, _ = current(c + e, y)
                jm, _ = current(c - e, y)
                div += (jp[k, mu] - jm[k, mu]) / (2 * h)
        _, rho = current(c, y)
        worst = max(worst, float(abs(div) / rho))
    return worst


def two_stage_paths(sc: DecayScenario, X0: MultiTimePoint, s1: float, s2: float, ds: float):
    """Sequential number measurements: outcome 2 first, then outcome 1.

    Stage one evolves with the two-particle branch selected, which freezes
    particle 1; stage two continues from the end point with the
    one-particle branch selected.  Returns both paths.  Interpretive: no
    sequential-measurement law is prescribed, both stages reuse the exact
    selection rule.
    """
    first = integrate_multitime(replace(sc, collapse="exact"), X0, s1, ds, move_pointer=False)
    second = integrate_multitime(replace(sc, collapse="exact-1"), first.end(), s2, ds, move_pointer=False)
    return first, second


# -- presets -----------------------------------------------------------------
def default_scenario() -> DecayScenario:
    return DecayScenario(
        psi1=Packet(center=0.0, width=1.0, momentum=1.0),
        psi2=Packet(center=-2.0, width=1.0, momentum=-1.5, phase=0.4),
        psi3=Packet(center=2.0, width=1.0, momentum=1.5),
        mu1=-3.0,
        mu2=3.0,
        w_E=0.5,
        a1=complex(math.sqrt(0.5), 0.0),
        a2=complex(0.0, math.sqrt(0.5)),
    )


def mirror_scenario() -> DecayScenario:
    """Particle 1 even about x = 0; packets 2 and 3 mirror images of each other."""
    p2 = Packet(center=-2.0, width=1.0, momentum=-1.0)
    return DecayScenario(
        psi1=Packet(center=0.0, width=1.0, momentum=0.0),
        psi2=p2,
        psi3=p2.mirrored(),
        a1=complex(math.sqrt(0.5), 0.0),
        a2=complex(0.0, math.sqrt(0.5)),
        detectors=False,
    )
