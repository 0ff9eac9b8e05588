"""Probability currents, Bell-type minimal jump rates and event sampling.

For an operator H with matrix elements H[q, q'] the current from q' into q is

    J(q, q') = (2 / hbar) Im( conj(c_q) H[q, q'] c_q' )

and the minimal jump rate is ``sigma(q | q') = max(J(q, q'), 0) / |c_q'|**2``.
``J`` is computed once per unordered pair and antisymmetrized, so at most
one direction of a pair ever carries a nonzero rate, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SupportLossError",
    "JumpRateTable",
    "CurrentPattern",
    "jump_rates",
    "sample_next_jump",
    "RATE_RULES",
]

SUPPORT_EPS = 1e-300
RATE_RULES = ("minimal", "absolute")


class SupportLossError(RuntimeError):
    """The actual configuration carries no Born weight."""

    def __init__(self, label=None):
        super().__init__(f"configuration outside support: {label!r}")
        self.label = label


@dataclass(frozen=True)
class JumpRateTable:
    """Rates ``sigma(destination | source)`` at time ``t``; zero rates omitted."""

    source: tuple
    rates: dict = field(default_factory=dict)
    t: float = 0.0

    @property
    def total(self) -> float:
        return float(sum(self.rates.values()))

    def __getitem__(self, dest) -> float:
        return self.rates.get(tuple(dest), 0.0)

    def __len__(self) -> int:
        return len(self.rates)


class CurrentPattern:
    """Sparsity pattern of an off-diagonal Hermitian operator, prepared for
    repeated current and rate evaluation.

    Pairs are taken from the strict upper triangle; ``dest``/``src`` list
    both orientations so that entry ``k`` and ``k + npairs`` are mirror
    images.  Entries are ordered by source (CSC-like) for fast sampling.
    """

    def __init__(self, op: sp.spmatrix, hbar: float = 1.0):
        coo = sp.triu(op, k=1).tocoo()
        keep = coo.data != 0
        r, c, v = coo.row[keep], coo.col[keep], coo.data[keep]
        self.dim = op.shape[0]
        self.hbar = hbar
        self.pair_row, self.pair_col, self.pair_val = r, c, v
        npairs = len(v)
        dest = np.concatenate([r, c])
        src = np.concatenate([c, r])
        sign = np.concatenate([np.ones(npairs), -np.ones(npairs)])
        order = np.lexsort((dest, src))
        self.dest = dest[order]
        self.src = src[order]
        self._sign = sign[order]
        self._pair = np.concatenate([np.arange(npairs), np.arange(npairs)])[order]
        self.indptr = np.searchsorted(self.src, np.arange(self.dim + 1))

    def pair_currents(self, amps: np.ndarray) -> np.ndarray:
        """J(row, col) for each stored upper-triangle pair."""
        return (2.0 / self.hbar) * np.imag(np.conj(amps[self.pair_row]) * self.pair_val * amps[self.pair_col])

    def currents(self, amps: np.ndarray) -> np.ndarray:
        """J(dest, src) for every directed entry; exactly antisymmetric."""
        return self._sign * self.pair_currents(amps)[self._pair]

    def rates(self, amps: np.ndarray, probs: np.ndarray | None = None, rule: str = "minimal"):
        """Directed rates and per-source totals.

        Sources without Born weight get rate 0 here; callers decide whether
        occupying such a source is an error.
        """
        if probs is None:
            probs = np.abs(amps) ** 2
        j = self.currents(amps)
        if rule == "minimal":
            num = np.maximum(j, 0.0)
        elif rule == "absolute":
            num = np.abs(j)
        else:
            raise ValueError(f"unknown rate rule {rule!r}")
        p = probs[self.src]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(p > SUPPORT_EPS, num / np.where(p > SUPPORT_EPS, p, 1.0), 0.0)
        totals = np.add.reduceat(np.append(r, 0.0), self.indptr[:-1]) if len(r) else np.zeros(self.dim)
        totals = np.where(np.diff(self.indptr) > 0, totals, 0.0)
        return r, totals

    def net_flux(self, amps: np.ndarray, rule: str = "minimal") -> np.ndarray:
        """Sum over q' of sigma(q|q')P(q') - sigma(q'|q)P(q), for each q."""
        probs = np.abs(amps) ** 2
        r, _ = self.rates(amps, probs, rule)
        flow = r * probs[self.src]
        return np.bincount(self.dest, weights=flow, minlength=self.dim) - np.bincount(
            self.src, weights=flow, minlength=self.dim
        )


def jump_rates(amps: np.ndarray, op: sp.spmatrix, src: int, hbar: float = 1.0, rule: str = "minimal"):
    """Rates out of basis index ``src``: ``{dest_index: rate}`` (nonzero only)."""
    p = float(abs(amps[src]) ** 2)
    if p <= SUPPORT_EPS:
        raise SupportLossError(src)
    col = op.getcol(src).tocoo()
    out = {}
    for dest, h in zip(col.row, col.data):
        if dest == src or h == 0:
            continue
        # orient each pair from the lower index so both directions share one number
        if dest < src:
            j = (2.0 / hbar) * np.imag(np.conj(amps[dest]) * h * amps[src])
        else:
            j = -(2.0 / hbar) * np.imag(np.conj(amps[src]) * np.conj(h) * amps[dest])
        if rule == "minimal":
            num = max(j, 0.0)
        elif rule == "absolute":
            num = abs(j)
        else:
            raise ValueError(f"unknown rate rule {rule!r}")
        if num > 0:
            out[int(dest)] = num / p
    return out


def sample_next_jump(rates: JumpRateTable, rng: np.random.Generator, window: float):
    """Sample a jump within ``window`` with rates frozen.

    Returns ``(destination, offset)`` with ``0 <= offset < window``, or
    ``None`` when no jump happens (probability ``exp(-total * window)``).
    """
    if window <= 0:
        raise ValueError("window must be positive")
    total = rates.total
    if total <= 0:
        return None
    tau = rng.exponential(1.0 / total)
    if tau >= window:
        return None
    dests = list(rates.rates)
    w = np.fromiter(rates.rates.values(), float, len(dests))
    k = int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))
    return dests[min(k, len(dests) - 1)], tau


def exact_jump_probability(total_rate: float, window: float) -> float:
    return 1.0 - math.exp(-total_rate * window)
