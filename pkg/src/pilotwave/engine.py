"""Vectorized ensemble driver shared by the lattice jump process and the
Bell-type piecewise deterministic process.

Each time interval ``[a, a + h]`` is handled as

1. jumps: rates are frozen at Psi(a + h/2) and event times are drawn
   exactly for those frozen rates (several jumps per interval allowed);
2. flow (continuum sectors only): an explicit midpoint step of the
   guiding field, recursively halved on CFL violation or nodes.

Intervals are refined so that ``rate * h < MAX_RATE_DT`` for every
configuration carrying non-negligible Born weight.

Trajectories are grouped in fixed-size chunks, each drawing from its own
stream ``SeedSequence(seed, spawn_key=(chunk,))``.  Chunks only share
read-only wave-function data, so results are independent of how chunks
are spread over worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .guidance import interpolated_velocity, sector_fluxes
from .jumps import SUPPORT_EPS, CurrentPattern
from .models import ModelHamiltonian, Propagator
from .state import BasisMismatchError, GridBasis, QuantumState

__all__ = [
    "Snapshot",
    "EventLog",
    "EnsembleResult",
    "run_ensemble",
    "simulate_chunk",
    "time_grid",
    "CHUNK_SIZE",
]

CHUNK_SIZE = 4096
MAX_RATE_DT = 0.05
MAX_SUBSTEPS = 64
PROBABLE = 1e-6
DT_MIN = 1e-6
KINDS = ("bell", "btqft")


@dataclass
class Snapshot:
    t: float
    config: np.ndarray
    positions: np.ndarray | None = None


@dataclass
class EventLog:
    traj: np.ndarray
    t: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    dn: np.ndarray
    position: np.ndarray

    @classmethod
    def empty(cls) -> "EventLog":
        i, f = np.zeros(0, np.int64), np.zeros(0)
        return cls(i, f, i, i, i, f)

    @classmethod
    def concat(cls, logs) -> "EventLog":
        logs = list(logs)
        if not logs:
            return cls.empty()
        return cls(*(np.concatenate([getattr(g, k) for g in logs]) for k in ("traj", "t", "src", "dst", "dn", "position")))

    def __len__(self) -> int:
        return len(self.t)

    def for_trajectory(self, j: int) -> "EventLog":
        m = self.traj == j
        return EventLog(self.traj[m], self.t[m], self.src[m], self.dst[m], self.dn[m], self.position[m])


@dataclass
class EnsembleResult:
    kind: str
    model: str
    basis: object
    M: int
    seed: int | None
    T: float
    dt: float
    snapshots: dict
    events: EventLog
    flagged: np.ndarray
    flag_reasons: dict
    diagnostics: dict
    paths: list | None = None

    def snapshot(self, t: float) -> Snapshot:
        if t > self.T + 1e-12:
            raise ValueError(f"t={t} is beyond the simulated horizon T={self.T}")
        for key, snap in self.snapshots.items():
            if abs(key - t) <= 1e-9:
                return snap
        raise ValueError(f"no checkpoint stored at t={t}; available: {sorted(self.snapshots)}")


def time_grid(T: float, dt: float, checkpoints=()) -> np.ndarray:
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    n = max(1, math.ceil(T / dt - 1e-9))
    pts = list(np.linspace(0.0, T, n + 1))
    for c in checkpoints:
        if not 0.0 <= c <= T + 1e-12:
            raise ValueError(f"checkpoint {c} outside [0, {T}]")
        if min(abs(p - c) for p in pts) > 1e-9:
            pts.append(float(c))
    return np.array(sorted(pts))


class _Data:
    """Read-only per-time quantities derived from Psi(t)."""

    __slots__ = ("t", "amps", "probs", "rates", "totals", "base", "flux", "rho")


class _Chunk:
    def __init__(self, cid, offset, cfg, X, sec, rng):
        self.cid = cid
        self.offset = offset
        self.cfg = cfg
        self.X = X
        self.sec = sec
        self.rng = rng
        self.flagged = np.zeros(len(cfg), dtype=bool)
        self.reasons: dict[int, str] = {}
        self.events: list[tuple] = []
        self.snapshots: dict[float, Snapshot] = {}
        self.paths: list[Snapshot] = []

    def flag(self, idx, reason: str) -> None:
        for i in np.atleast_1d(idx):
            if not self.flagged[i]:
                self.flagged[i] = True
                self.reasons[int(i) + self.offset] = reason

    def snapshot(self, t: float) -> Snapshot:
        cfg = np.where(self.flagged, -1, self.cfg)
        pos = None
        if self.X is not None:
            pos = np.sort(self.X, axis=1)
            pos[self.flagged] = np.nan
        return Snapshot(t, cfg, pos)


class _Runner:
    def __init__(self, h: ModelHamiltonian, psi0: QuantumState, kind: str, rule: str, method: str):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if psi0.basis != h.basis:
            raise BasisMismatchError("state and Hamiltonian use different bases")
        self.h = h
        self.basis = h.basis
        self.kind = kind
        self.rule = rule
        self.flow = kind == "btqft"
        if self.flow and not isinstance(self.basis, GridBasis):
            raise BasisMismatchError("the piecewise deterministic process needs a grid basis")
        op = h.h if kind == "bell" else h.h_int
        self.pattern = CurrentPattern(op, h.hbar)
        self.prop = Propagator(h, psi0, method)
        self._cache: dict[float, _Data] = {}
        self.diag = {"max_norm_defect": 0.0, "max_leak_rate": 0.0, "max_rate_dt": 0.0, "substeps": 0}
        self._prepare_deltas()

    def _prepare_deltas(self) -> None:
        s = self.basis.sectors
        self.dn = s[self.pattern.dest] - s[self.pattern.src]
        self.delta_cell = np.full(len(self.dn), -1, dtype=np.int64)
        if self.flow:
            labels = self.basis.labels
            for k, (d, c) in enumerate(zip(self.pattern.dest, self.pattern.src)):
                big, small = (labels[d], labels[c]) if self.dn[k] > 0 else (labels[c], labels[d])
                rest = list(big)
                for x in small:
                    rest.remove(x)
                self.delta_cell[k] = rest[0]
            self.layouts = {n: self.basis.layout(n) for n in range(1, self.basis.n_max + 1)}

    # -- per-time data -------------------------------------------------------
    def data(self, t: float, anchor: bool = False) -> _Data:
        d = self._cache.get(t)
        if d is not None:
            return d
        d = _Data()
        d.t = t
        d.amps = self.prop.amplitudes(t, anchor=anchor)
        d.probs = np.abs(d.amps) ** 2
        self.diag["max_norm_defect"] = max(self.diag["max_norm_defect"], abs(float(np.sum(d.probs)) - 1.0))
        if self.h.leak.shape[0]:
            leak = float(np.linalg.norm(self.h.leak @ d.amps)) / self.h.hbar
            self.diag["max_leak_rate"] = max(self.diag["max_leak_rate"], leak)
        d.rates, d.totals = self.pattern.rates(d.amps, d.probs, self.rule)
        cs = np.concatenate([[0.0], np.cumsum(d.rates)])
        d.base = cs
        if self.flow:
            d.flux, d.rho = {}, {}
            for n in self.layouts:
                d.flux[n], d.rho[n] = sector_fluxes(d.amps, self.basis, n, self.h.hbar, self.h.mass)
        self._cache[t] = d
        return d

    def forget_before(self, t: float) -> None:
        for key in [k for k in self._cache if k < t]:
            del self._cache[key]
        self.prop.forget_before(t)

    # -- initial conditions ------------------------------------------------
    def sample_initial(self, m: int, rng: np.random.Generator, probs: np.ndarray):
        cum = np.cumsum(probs)
        cfg = np.searchsorted(cum, rng.random(m) * cum[-1], side="right")
        cfg = np.minimum(cfg, len(probs) - 1)
        return self.place(cfg, rng)

    def place(self, cfg: np.ndarray, rng: np.random.Generator):
        """Positions uniform inside the cells of each configuration label."""
        if not self.flow:
            return cfg, None, self.basis.sectors[cfg].copy()
        n_max = self.basis.n_max
        X = np.full((len(cfg), n_max), np.nan)
        sec = self.basis.sectors[cfg].copy()
        u = rng.random((len(cfg), n_max))
        for i, c in enumerate(cfg):
            cells = self.basis.labels[c]
            X[i, : len(cells)] = (np.array(cells) + u[i, : len(cells)]) * self.basis.dx
        return cfg, X, sec

    # -- jumps ---------------------------------------------------------------
    def _pick(self, d: _Data, s: np.ndarray, u: np.ndarray) -> np.ndarray:
        lo = self.pattern.indptr[s]
        hi = self.pattern.indptr[s + 1]
        target = d.base[lo] + u * d.totals[s]
        k = np.searchsorted(d.base[1:], target, side="right")
        k = np.clip(k, lo, hi - 1)
        # rounding at the top of a segment may land on a zero-rate entry
        for j in np.flatnonzero(d.rates[k] <= 0):
            seg = np.flatnonzero(d.rates[lo[j] : hi[j]] > 0)
            k[j] = lo[j] + seg[-1]
        return k

    def jumps(self, ch: _Chunk, d: _Data, a: float, h: float) -> None:
        rem = np.full(len(ch.cfg), h)
        act = np.flatnonzero(~ch.flagged)
        while act.size:
            s = ch.cfg[act]
            lost = d.probs[s] <= SUPPORT_EPS
            if lost.any():
                ch.flag(act[lost], "support loss")
                act, s = act[~lost], s[~lost]
            lam = d.totals[s]
            e = ch.rng.standard_exponential(act.size)
            pos = lam > 0
            tau = np.full(act.size, np.inf)
            tau[pos] = e[pos] / lam[pos]
            hit = tau < rem[act]
            act, s, tau = act[hit], s[hit], tau[hit]
            if not act.size:
                break
            u = ch.rng.random(act.size)
            u2 = ch.rng.random(act.size)
            k = self._pick(d, s, u)
            dst = self.pattern.dest[k]
            t_ev = a + (h - rem[act]) + tau
            rem[act] -= tau
            where = np.full(act.size, np.nan)
            if self.flow:
                where = self._move_particles(ch, act, k, u2)
            ch.cfg[act] = dst
            ch.sec[act] = self.basis.sectors[dst]
            ch.events.append((act + ch.offset, t_ev, s, dst, self.dn[k], where))

    def _move_particles(self, ch: _Chunk, act, k, u2) -> np.ndarray:
        dx = self.basis.dx
        cell = self.delta_cell[k]
        where = np.empty(act.size)
        up = self.dn[k] > 0
        # creation: new particle uniform inside the chosen cell
        ia = act[up]
        newx = (cell[up] + u2[up]) * dx
        ch.X[ia, ch.sec[ia]] = newx
        where[up] = newx
        # annihilation: remove one of the particles sitting in the cell
        ib = act[~up]
        if ib.size:
            Xb = ch.X[ib]
            cells = np.floor(Xb / dx)
            cells = np.where(np.isnan(cells), -1, cells).astype(np.int64) % self.basis.points
            cells[np.isnan(Xb)] = -1
            match = cells == cell[~up][:, None]
            count = match.sum(axis=1)
            r = np.floor(u2[~up] * count).astype(np.int64)
            col = np.argmax(np.cumsum(match, axis=1) > r[:, None], axis=1)
            last = ch.sec[ib] - 1
            where[~up] = Xb[np.arange(ib.size), col]
            ch.X[ib, col] = ch.X[ib, last]
            ch.X[ib, last] = np.nan
        return where

    # -- flow ----------------------------------------------------------------
    def _midpoint(self, X, sec, a, h):
        L, dx = self.basis.length, self.basis.dx
        d0, d1 = self.data(a), self.data(a + 0.5 * h)
        Xn = X.copy()
        bad = np.zeros(len(X), dtype=bool)
        for n in np.unique(sec):
            if n == 0:
                continue
            rows = sec == n
            P = X[rows, :n]
            v0, node0 = interpolated_velocity(d0.flux[n], d0.rho[n], P, self.basis)
            Ph = np.mod(P + 0.5 * h * v0, L)
            v1, node1 = interpolated_velocity(d1.flux[n], d1.rho[n], Ph, self.basis)
            Xn[rows, :n] = np.mod(P + h * v1, L)
            cfl = (np.abs(v0) * h >= dx).any(axis=1) | (np.abs(v1) * h >= dx).any(axis=1)
            bad[rows] = node0 | node1 | cfl
        return Xn, bad

    def advance(self, X, sec, a, h):
        Xn, bad = self._midpoint(X, sec, a, h)
        failed = np.zeros(len(X), dtype=bool)
        if bad.any():
            if 0.5 * h < DT_MIN:
                return Xn, bad
            X1, f1 = self.advance(X[bad], sec[bad], a, 0.5 * h)
            X2, f2 = self.advance(X1, sec[bad], a + 0.5 * h, 0.5 * h)
            Xn[bad] = X2
            failed[bad] = f1 | f2
        return Xn, failed

    def flow_chunk(self, ch: _Chunk, a: float, h: float) -> None:
        rows = np.flatnonzero(~ch.flagged & (ch.sec > 0))
        if not rows.size:
            return
        Xn, failed = self.advance(ch.X[rows], ch.sec[rows], a, h)
        ch.X[rows] = Xn
        if failed.any():
            ch.flag(rows[failed], "node or CFL refinement below dt_min")
        self.relabel(ch, rows)

    def relabel(self, ch: _Chunk, rows: np.ndarray) -> None:
        dx, G = self.basis.dx, self.basis.points
        for n in range(1, self.basis.n_max + 1):
            r = rows[ch.sec[rows] == n]
            if not r.size:
                continue
            C = np.floor(ch.X[r, :n] / dx).astype(np.int64) % G
            ch.cfg[r] = self.layouts[n][0][tuple(C.T)]

    # -- driver ----------------------------------------------------------------
    def run(self, chunks: list[_Chunk], grid: np.ndarray, checkpoints, record_paths: bool) -> None:
        cps = [float(c) for c in checkpoints]

        def at_checkpoint(t):
            return any(abs(t - c) <= 1e-9 for c in cps)

        self.data(float(grid[0]), anchor=True)
        for ch in chunks:
            if at_checkpoint(grid[0]):
                ch.snapshots[float(grid[0])] = ch.snapshot(float(grid[0]))
            if record_paths:
                ch.paths.append(ch.snapshot(float(grid[0])))
        for a, b in zip(grid[:-1], grid[1:]):
            a, b = float(a), float(b)
            self.forget_before(a)
            mid = self.data(0.5 * (a + b))
            probable = mid.probs > PROBABLE
            lam_max = float(np.max(mid.totals[probable])) if probable.any() else 0.0
            nsub = min(MAX_SUBSTEPS, max(1, math.ceil(lam_max * (b - a) / MAX_RATE_DT)))
            self.diag["substeps"] += nsub
            edges = [a + (b - a) * j / nsub for j in range(nsub)] + [b]
            for sa, sb in zip(edges[:-1], edges[1:]):
                hs = sb - sa
                d = self.data(0.5 * (sa + sb))
                p = d.probs > PROBABLE
                if p.any():
                    self.diag["max_rate_dt"] = max(self.diag["max_rate_dt"], float(np.max(d.totals[p])) * hs)
                for ch in chunks:
                    self.jumps(ch, d, sa, hs)
                if self.flow:
                    for ch in chunks:
                        self.flow_chunk(ch, sa, hs)
            self.data(b, anchor=True)
            for ch in chunks:
                if at_checkpoint(b):
                    ch.snapshots[b] = ch.snapshot(b)
                if record_paths:
                    ch.paths.append(ch.snapshot(b))


def _chunk_rng(seed: int, cid: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cid,)))


def _make_chunks(runner: _Runner, M, seed, chunk_size, chunk_ids, initial, psi0) -> list[_Chunk]:
    chunks = []
    for cid in chunk_ids:
        lo, hi = cid * chunk_size, min(M, (cid + 1) * chunk_size)
        rng = _chunk_rng(seed, cid)
        if initial is None:
            cfg, X, sec = runner.sample_initial(hi - lo, rng, psi0.probabilities())
        else:
            cfg0, X0 = initial
            cfg = np.array(cfg0[lo:hi], dtype=np.int64)
            if runner.flow:
                X = np.array(X0[lo:hi], dtype=float)
                sec = runner.basis.sectors[cfg].copy()
            else:
                cfg, X, sec = runner.place(cfg, rng)
        chunks.append(_Chunk(cid, lo, cfg, X, sec, rng))
    if runner.flow:
        for ch in chunks:
            runner.relabel(ch, np.arange(len(ch.cfg)))
    return chunks


def _work(args):
    (h, psi0, kind, rule, method, M, seed, chunk_size, chunk_ids, initial, grid, checkpoints, record_paths) = args
    runner = _Runner(h, psi0, kind, rule, method)
    chunks = _make_chunks(runner, M, seed, chunk_size, chunk_ids, initial, psi0)
    runner.run(chunks, grid, checkpoints, record_paths)
    for ch in chunks:
        ch.rng = None
    return chunks, runner.diag


def _merge_snapshots(parts: list[dict]) -> dict:
    out = {}
    for t in parts[0]:
        snaps = [p[t] for p in parts]
        pos = None if snaps[0].positions is None else np.concatenate([s.positions for s in snaps])
        out[t] = Snapshot(t, np.concatenate([s.config for s in snaps]), pos)
    return out


def run_ensemble(
    h: ModelHamiltonian,
    psi0: QuantumState,
    M: int,
    T: float,
    dt: float,
    *,
    kind: str,
    seed: int,
    checkpoints=(),
    workers: int = 1,
    rule: str = "minimal",
    initial=None,
    record_paths: bool = False,
    chunk_size: int = CHUNK_SIZE,
    method: str = "auto",
) -> EnsembleResult:
    """Simulate ``M`` trajectories on ``[0, T]``.

    ``kind="bell"`` is the pure jump process driven by the full H;
    ``kind="btqft"`` jumps with H_int and flows with the guiding field.
    ``initial`` optionally fixes the starting configurations as
    ``(config_indices, positions)``; otherwise they are drawn from
    ``|psi0|**2``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    grid = time_grid(T, dt, checkpoints)
    nchunks = math.ceil(M / chunk_size)
    base = (h, psi0, kind, rule, method, M, seed, chunk_size)
    tail = (initial, grid, tuple(checkpoints), record_paths)
    if workers <= 1 or nchunks == 1:
        groups = [list(range(nchunks))]
        results = [_work(base + (groups[0],) + tail)]
    else:
        groups = [list(range(w, nchunks, workers)) for w in range(min(workers, nchunks))]
        with ProcessPoolExecutor(max_workers=len(groups)) as ex:
            results = list(ex.map(_work, [base + (g,) + tail for g in groups]))
    chunks = sorted((ch for part, _ in results for ch in part), key=lambda c: c.cid)
    diag = dict(results[0][1])
    for _, dg in results[1:]:
        for k, v in dg.items():
            diag[k] = max(diag[k], v)
    flagged = np.concatenate([ch.flagged for ch in chunks])
    reasons = {}
    for ch in chunks:
        reasons.update(ch.reasons)
    events = []
    for ch in chunks:
        for traj, t, s, d, dn, pos in ch.events:
            events.append(EventLog(traj, t, s, d, dn, pos))
    log = EventLog.concat(events)
    order = np.lexsort((log.t, log.traj))
    log = EventLog(*(getattr(log, k)[order] for k in ("traj", "t", "src", "dst", "dn", "position")))
    snaps = _merge_snapshots([ch.snapshots for ch in chunks]) if chunks[0].snapshots else {}
    paths = None
    if record_paths:
        paths = [
            Snapshot(
                chunks[0].paths[i].t,
                np.concatenate([ch.paths[i].config for ch in chunks]),
                None if chunks[0].paths[i].positions is None else np.concatenate([ch.paths[i].positions for ch in chunks]),
            )
            for i in range(len(chunks[0].paths))
        ]
    diag["flagged"] = int(flagged.sum())
    return EnsembleResult(kind, h.name, h.basis, M, seed, float(T), float(dt), snaps, log, flagged, reasons, diag, paths)


def simulate_chunk(h, psi0, kind, T, dt, rng, initial, checkpoints=(), rule="minimal", record_paths=True, method="auto"):
    """Run one group of trajectories with a caller-supplied generator."""
    runner = _Runner(h, psi0, kind, rule, method)
    cfg, X = initial
    cfg = np.array(cfg, dtype=np.int64)
    sec = runner.basis.sectors[cfg].copy()
    X = None if X is None else np.array(X, dtype=float)
    ch = _Chunk(0, 0, cfg, X, sec, rng)
    if runner.flow:
        runner.relabel(ch, np.arange(len(cfg)))
    runner.run([ch], time_grid(T, dt, checkpoints), checkpoints, record_paths)
    events = EventLog.concat(EventLog(*e) for e in ch.events)
    return ch, events, runner.diag
