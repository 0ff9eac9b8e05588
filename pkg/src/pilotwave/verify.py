"""Ensemble statistics against the exact Born distribution.

Reference distributions always come from exact evolution of the truncated
model (``Propagator``), never from the sampler under test.  Every
statistical verdict is two-sided: besides an upper TV threshold, the
observed TV must not fall below the 0.1% quantile of the TV of ``M``
fresh i.i.d. Born samples (a result that is too good points at an oracle
leaking into the sampler).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .bell import net_rate_flux
from .btqft import flow_cell_flux, jump_cell_flux
from .engine import EnsembleResult, run_ensemble
from .models import ModelHamiltonian, Propagator
from .records import TrajectoryRecord
from .state import DensityTable, GridBasis, LatticeBasis, QuantumState

__all__ = [
    "CheckpointResult",
    "EnsembleReport",
    "empirical_distribution",
    "reference_distribution",
    "tv_distance",
    "noise_floor",
    "check_equivariance",
    "check_master_equation",
    "check_time_reversal",
    "sector_increment_violations",
]

FLAG_LIMIT = 0.01
NOISE_REPLICATES = 4000
NOISE_QUANTILE = 1e-3


# -- binning -----------------------------------------------------------------
def _bin_labels(basis, cfg: np.ndarray, X: np.ndarray | None, binning) -> list:
    if binning == "config":
        return [basis.labels[i] for i in cfg]
    if binning == "sector":
        return [int(basis.sectors[i]) for i in cfg]
    if not isinstance(basis, GridBasis):
        raise ValueError("position binning needs a continuum (grid) model")
    B = int(binning)
    out = []
    for i, row in zip(cfg, X):
        n = int(basis.sectors[i])
        bins = np.floor(row[:n] / basis.length * B).astype(int) % B
        out.append((n, tuple(sorted(bins.tolist()))))
    return out


def _check_binning(basis, binning) -> None:
    if binning in ("config", "sector"):
        return
    B = int(binning)
    if not isinstance(basis, GridBasis):
        raise ValueError("position binning needs a continuum (grid) model")
    if B < 1 or basis.points % B:
        raise ValueError(f"{B} position bins do not align with {basis.points} grid cells")


def reference_distribution(state: QuantumState, binning="config") -> DensityTable:
    """Exact Born masses of ``state`` on the cells of ``binning``."""
    basis = state.basis
    _check_binning(basis, binning)
    probs = state.probabilities()
    if binning == "config":
        return DensityTable(basis.labels, probs)
    if binning == "sector":
        masses = np.bincount(basis.sectors, weights=probs, minlength=basis.n_max + 1)
        return DensityTable(tuple(range(basis.n_max + 1)), masses)
    per = basis.points // int(binning)
    table = DensityTable(basis.labels, probs)
    return table.coarsen(lambda lab: (len(lab), tuple(sorted(c // per for c in lab))))


def empirical_distribution(source, t: float, binning="config", support=None) -> DensityTable:
    """Histogram of the configurations at time ``t``.

    ``source`` is an ``EnsembleResult`` or a list of ``TrajectoryRecord``.
    ``binning`` is ``"config"``, ``"sector"`` or an integer number of
    position bins (continuum runs: cells are ``(sector, sorted bins)``).
    ``support`` fixes the label order, with zero mass for unvisited labels.
    """
    if isinstance(source, EnsembleResult):
        basis = source.basis
        snap = source.snapshot(t)
        cfg, X = snap.config, snap.positions
    else:
        records = list(source)
        if not records:
            raise ValueError("no trajectories given")
        basis = records[0].basis
        cfg = np.array([r.config_at(t) for r in records])
        X = None
        if binning not in ("config", "sector"):
            X = np.full((len(records), basis.n_max), np.nan)
            for j, r in enumerate(records):
                pos = _positions_at(r, t)
                X[j, : len(pos)] = pos
    _check_binning(basis, binning)
    labels = _bin_labels(basis, cfg, X, binning)
    counts: dict = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    if support is None:
        support = tuple(sorted(counts))
    else:
        support = tuple(support)
        missing = set(counts) - set(support)
        if missing:
            raise ValueError(f"samples outside the given support: {sorted(missing)[:5]}")
    total = len(labels)
    return DensityTable(support, np.array([counts.get(lab, 0) / total for lab in support]))


def _positions_at(record: TrajectoryRecord, t: float) -> tuple:
    for r in record.rows:
        if r.event == "flow" and abs(r.t - t) <= 1e-9:
            return r.positions
    raise ValueError(f"t={t} is not a recorded step of the trajectory")


def tv_distance(p: DensityTable, q: DensityTable) -> float:
    """(1/2) sum |p - q| over a common partition."""
    if set(p.labels) != set(q.labels) or len(p.labels) != len(q.labels):
        raise ValueError("distributions are defined on different partitions")
    qd = q.as_dict()
    qv = np.array([qd[lab] for lab in p.labels])
    return float(0.5 * np.sum(np.abs(p.probs - qv)))


def noise_floor(probs: np.ndarray, M: int, seed: int, replicates: int = NOISE_REPLICATES) -> tuple[float, float]:
    """(low quantile, mean) of the TV between ``M`` i.i.d. samples and ``probs``."""
    p = np.clip(np.asarray(probs, float), 0.0, None)
    p = p / p.sum()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x6E6F,)))
    counts = rng.multinomial(M, p, size=replicates)
    tv = 0.5 * np.abs(counts / M - p).sum(axis=1)
    return float(np.quantile(tv, NOISE_QUANTILE)), float(tv.mean())


def _chi_square(emp: DensityTable, ref: DensityTable, M: int):
    expected = ref.probs * M
    observed = np.array([emp[lab] for lab in ref.labels]) * M
    live = expected > 0
    if np.any(observed[~live] > 0):
        return math.inf, int(live.sum() - 1), 0.0
    stat = float(np.sum((observed[live] - expected[live]) ** 2 / expected[live]))
    dof = max(int(live.sum()) - 1, 1)
    return stat, dof, float(stats.chi2.sf(stat, dof))


# -- reports -----------------------------------------------------------------
@dataclass
class CheckpointResult:
    t: float
    binning: str
    tv: float
    threshold: float
    noise_floor: float
    noise_mean: float
    chi2: float
    chi2_dof: int
    chi2_pvalue: float
    sector_marginal: dict  # sector -> [empirical, exact]
    passed: bool
    reason: str = ""


@dataclass
class EnsembleReport:
    model: str
    check: str
    M: int
    seed: int
    checkpoints: list
    results: list = field(default_factory=list)
    flagged: int = 0
    extra: dict = field(default_factory=dict)
    ensemble: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.flagged <= self.M:
            raise ValueError("flagged count must lie in [0, M]")

    @property
    def inconclusive(self) -> bool:
        return self.flagged > FLAG_LIMIT * self.M

    @property
    def passed(self) -> bool:
        return not self.inconclusive and all(r.passed for r in self.results) and not self.extra.get("violations", 0)

    @property
    def status(self) -> str:
        if self.inconclusive:
            return "INCONCLUSIVE"
        return "PASS" if self.passed else "FAIL"

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("ensemble")
        for r in d["results"]:
            r["sector_marginal"] = {str(k): v for k, v in r["sector_marginal"].items()}
            if math.isinf(r["chi2"]):
                r["chi2"] = "inf"
        d["status"] = self.status
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self) -> str:
        lines = [f"{self.check} [{self.model}] M={self.M} seed={self.seed} flagged={self.flagged}: {self.status}"]
        for r in self.results:
            verdict = "pass" if r.passed else "FAIL"
            lines.append(
                f"  t={r.t:g} {r.binning}: TV={r.tv:.5f} (threshold {r.threshold:.4f}, noise floor {r.noise_floor:.5f}) "
                f"chi2={r.chi2:.1f}/{r.chi2_dof} {verdict}{' - ' + r.reason if r.reason else ''}"
            )
        for k, v in self.extra.items():
            lines.append(f"  {k}: {v}")
        return "\n".join(lines)


def _score(ens, exact_state, t, binning, threshold, M, seed, k) -> CheckpointResult:
    ref = reference_distribution(exact_state, binning)
    emp = empirical_distribution(ens, t, binning, support=ref.labels)
    tv = tv_distance(emp, ref)
    floor, mean = noise_floor(ref.probs, M, seed + 7919 * (k + 1))
    thr = threshold if threshold is not None else 3.0 * math.sqrt(len(ref.labels) / (4.0 * M))
    chi2, dof, pval = _chi_square(emp, ref, M)
    sec_emp = empirical_distribution(ens, t, "sector", support=range(exact_state.basis.n_max + 1))
    sec_ref = reference_distribution(exact_state, "sector")
    marg = {int(n): [float(sec_emp.probs[n]), float(sec_ref.probs[n])] for n in sec_ref.labels}
    reason = ""
    if tv >= thr:
        reason = "TV above threshold"
    elif tv < floor:
        reason = "TV below the sampling-noise floor"
    return CheckpointResult(float(t), str(binning), tv, thr, floor, mean, chi2, dof, pval, marg, not reason, reason)


def sector_increment_violations(result: EnsembleResult) -> int:
    """Recorded jumps that change the particle number by anything but one."""
    return int(np.count_nonzero(np.abs(result.events.dn) != 1))


def _kind(h: ModelHamiltonian, kind):
    if kind is not None:
        return kind
    return "bell" if isinstance(h.basis, LatticeBasis) else "btqft"


def check_equivariance(
    h: ModelHamiltonian,
    psi0: QuantumState,
    M: int,
    checkpoints,
    seed: int,
    *,
    binnings=("config",),
    thresholds=None,
    dt: float = 1e-3,
    kind=None,
    workers: int = 1,
    rule: str = "minimal",
) -> EnsembleReport:
    """Run ``M`` trajectories from ``|psi0|**2`` and compare with ``|psi_t|**2``.

    ``thresholds`` maps a binning to its TV threshold; the default is
    ``3 sqrt(K / 4M)`` with K the number of cells.
    """
    if M < 1000:
        raise ValueError("equivariance checks need M >= 1000")
    kind = _kind(h, kind)
    checkpoints = sorted(float(t) for t in checkpoints)
    thresholds = dict(thresholds or {})
    ens = run_ensemble(h, psi0, M, max(checkpoints), dt, kind=kind, seed=seed, checkpoints=checkpoints, workers=workers, rule=rule)
    prop = Propagator(h, psi0, method="exact")
    report = EnsembleReport(h.name, "equivariance", M, seed, checkpoints, flagged=int(ens.flagged.sum()), ensemble=ens)
    k = 0
    for t in checkpoints:
        exact = prop.state(t)
        for b in binnings:
            report.results.append(_score(ens, exact, t, b, thresholds.get(b), M, seed, k))
            k += 1
    report.extra["max_norm_defect"] = float(ens.diagnostics.get("max_norm_defect", 0.0))
    if kind == "btqft":
        report.extra["jump_events"] = len(ens.events)
        report.extra["violations"] = sector_increment_violations(ens)
    return report


def check_master_equation(
    h: ModelHamiltonian,
    psi0: QuantumState,
    times,
    dt_fd: float = 1e-4,
    level: str = "config",
    kind=None,
    rule: str = "minimal",
) -> float:
    """max over (q, t) of |dP(q)/dt - predicted flux|.

    dP/dt is a centred finite difference of the exact Born weights.  The
    lattice process predicts the net jump flux of H; the continuum process
    adds the guiding-flow flux to the H_int jump flux.  ``level="sector"``
    sums both sides over each particle-number sector first.
    """
    kind = _kind(h, kind)
    prop = Propagator(h, psi0, method="exact")
    worst = 0.0
    for t in times:
        dP = (prop.born(t + dt_fd) - prop.born(t - dt_fd)) / (2.0 * dt_fd)
        state = prop.state(t)
        if kind == "bell":
            flux = net_rate_flux(state, h, rule=rule)
        else:
            flux = flow_cell_flux(state, h) + jump_cell_flux(state, h, rule)
        if level == "sector":
            n = h.basis.n_max + 1
            dP = np.bincount(h.basis.sectors, weights=dP, minlength=n)
            flux = np.bincount(h.basis.sectors, weights=flux, minlength=n)
        worst = max(worst, float(np.max(np.abs(dP - flux))))
    return worst


def check_time_reversal(
    h: ModelHamiltonian,
    psi0: QuantumState,
    T: float,
    M: int,
    seed: int,
    *,
    conjugate: bool = True,
    binning="config",
    threshold: float | None = 0.03,
    dt: float = 1e-3,
    kind=None,
    workers: int = 1,
    rule: str = "minimal",
) -> EnsembleReport:
    """Forward run to ``T``, then the reversed process for another ``T``.

    The reversed process is driven by ``conj(H)`` from ``conj(psi_T)`` and
    starts from the forward terminal configurations (which are
    ``|psi_T|**2`` distributed).  Its terminal histogram is scored against
    ``|psi0|**2``.  ``conjugate=False`` skips the conjugation of psi_T
    (negative control).
    """
    kind = _kind(h, kind)
    fwd = run_ensemble(h, psi0, M, T, dt, kind=kind, seed=seed, checkpoints=[T], workers=workers, rule=rule)
    snap = fwd.snapshot(T)
    psi_T = Propagator(h, psi0, method="exact").state(T)
    start = psi_T.conj() if conjugate else psi_T
    h_rev = h.conj()
    back = run_ensemble(
        h_rev, start, M, T, dt, kind=kind, seed=seed + 1, checkpoints=[T], workers=workers, rule=rule,
        initial=(snap.config, snap.positions),
    )
    flagged = int(np.count_nonzero(fwd.flagged | back.flagged))
    report = EnsembleReport(h.name, "time-reversal", M, seed, [T], flagged=flagged, ensemble=back)
    report.results.append(_score(back, psi0, T, binning, threshold, M, seed, 0))
    report.extra["conjugated"] = conjugate
    report.extra["forward_tv"] = tv_distance(
        empirical_distribution(fwd, T, binning, support=reference_distribution(psi_T, binning).labels),
        reference_distribution(psi_T, binning),
    )
    return report
