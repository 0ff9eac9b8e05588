"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from pilotwave.bell import bell_rates, pair_current
from pilotwave.cli import build_model, run
from pilotwave.jumps import CurrentPattern
from pilotwave.models import build_bell_lattice_model, build_emission_absorption_model
from pilotwave.nikolic import dead_particle_speed, dead_particle_speed_direct, default_scenario, four_velocity
from pilotwave.scenario import preset
from pilotwave.verify import check_equivariance, check_master_equation, check_time_reversal, sector_increment_violations

from conftest import random_state

DRAWS = 1000
M = 20_000
CHECKPOINTS = [0.5, 1.0]

pytestmark = pytest.mark.slow


def _line(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def _random_lattice(rng):
    return build_bell_lattice_model(
        2, rng.uniform(-2, 2), rng.uniform(-1, 1), 2,
        single_coupling=rng.uniform(-1, 1), hop_phase=rng.uniform(0, 2 * math.pi),
        coupling_phase=rng.uniform(0, 2 * math.pi), onsite=rng.uniform(-1, 1),
    )


class _RandomInteraction:
    """H_int(g, phase) of the 32-cell model from one unit-coupling build."""

    def __init__(self, n_max):
        h = build_emission_absorption_model(32, 1.0, 4.0, n_max)
        self.basis = h.basis
        s = h.basis.sectors
        coo = h.h_int.tocoo()
        up = s[coo.row] > s[coo.col]
        self.rows, self.cols, self.vals = coo.row[up], coo.col[up], coo.data[up]

    def draw(self, rng):
        c = rng.uniform(-3, 3) * np.exp(1j * rng.uniform(0, 2 * math.pi)) * self.vals
        dim = self.basis.dim
        create = sp.csr_matrix((c, (self.rows, self.cols)), shape=(dim, dim))
        return (create + create.conj().T).tocsr()


def _pair_flows(pattern, amps):
    p = np.abs(amps) ** 2
    r, _ = pattern.rates(amps, p)
    return dict(zip(zip(pattern.dest.tolist(), pattern.src.tolist()), (r * p[pattern.src]).tolist()))


# -- 1 -------------------------------------------------------------------------------------
def test_criterion_1_minimal_rates(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    bad = 0
    checked = 0
    for _ in range(DRAWS):
        h = _random_lattice(rng)
        psi = random_state(h.basis, rng)
        p = psi.probabilities()
        tables = {lab: bell_rates(psi, lab, h) for lab in h.basis.labels}
        for i, a in enumerate(h.basis.labels):
            for j, b in enumerate(h.basis.labels):
                if i < j:
                    checked += 1
                    bad += min(tables[a][b] * p[i], tables[b][a] * p[j]) != 0.0
    cont = _RandomInteraction(n_max=2)
    for _ in range(DRAWS):
        amps = random_state(cont.basis, rng).amplitudes
        flows = _pair_flows(CurrentPattern(cont.draw(rng)), amps)
        for (d, s), f in flows.items():
            if d < s:
                checked += 1
                bad += min(f, flows[(s, d)]) != 0.0
    elapsed = time.perf_counter() - start
    ok = bad == 0 and elapsed < 30
    _line(capsys, "1 minimal rates", ok, f"{bad} violations in {checked} pairs over 2x{DRAWS} draws, {elapsed:.1f}s")
    assert ok


# -- 2 -------------------------------------------------------------------------------------
def test_criterion_2_net_current_identity(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    h = build_model(preset("bell-lattice"))[0]
    labels = h.basis.labels
    for _ in range(DRAWS):
        psi = random_state(h.basis, rng)
        p = psi.probabilities()
        tables = {lab: bell_rates(psi, lab, h) for lab in labels}
        for i, q in enumerate(labels):
            for j, qs in enumerate(labels):
                if i != j:
                    lhs = tables[qs][q] * p[j] - tables[q][qs] * p[i]
                    worst = max(worst, abs(lhs - pair_current(psi, q, qs, h.h)))
    hb = build_emission_absorption_model(32, 2.0, 4.0, 2, coupling_phase=0.7)
    pattern = CurrentPattern(hb.h_int, hb.hbar)
    dense = hb.h_int.toarray()
    for _ in range(DRAWS):
        c = random_state(hb.basis, rng).amplitudes
        flows = _pair_flows(pattern, c)
        oracle = 2.0 / hb.hbar * np.imag(np.conj(c)[:, None] * dense * c[None, :])
        for (d, s), f in flows.items():
            worst = max(worst, abs(f - flows[(s, d)] - oracle[d, s]))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 30
    _line(capsys, "2 net-current identity", ok, f"max deviation {worst:.2e} over 2x{DRAWS} states, {elapsed:.1f}s")
    assert ok


# -- 3 -------------------------------------------------------------------------------------
def test_criterion_3_master_equation(capsys):
    start = time.perf_counter()
    times = np.linspace(0.1, 1.0, 10)
    lattice = check_master_equation(*build_model(preset("bell-lattice")), times)
    pairs = check_master_equation(*build_model(preset("pair-creation")), times)
    cont = check_master_equation(*build_model(preset("btqft-emission")), times, level="sector")
    two = build_emission_absorption_model(32, 1.0, 4.0, 2, coupling_phase=0.3)
    psi2 = random_state(two.basis, np.random.default_rng(3))
    cont2 = check_master_equation(two, psi2, times, level="sector")
    elapsed = time.perf_counter() - start
    ok = max(lattice, pairs) < 1e-6 and max(cont, cont2) < 1e-5 and elapsed < 60
    _line(
        capsys, "3 master equation", ok,
        f"lattice {max(lattice, pairs):.2e} (<1e-6), continuum sectors {max(cont, cont2):.2e} (<1e-5), {elapsed:.1f}s",
    )
    assert ok


# -- 4, 5 ---------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def equivariance_runs():
    start = time.perf_counter()
    bell = check_equivariance(*build_model(preset("bell-lattice")), M, CHECKPOINTS, seed=1, thresholds={"config": 0.03})
    cfg = preset("btqft-emission")
    btqft = check_equivariance(
        *build_model(cfg), M, CHECKPOINTS, seed=3, binnings=("sector", 16), thresholds={"sector": 0.03, 16: 0.05},
        dt=cfg.dt,
    )
    return bell, btqft, time.perf_counter() - start


def test_criterion_4_equivariance(capsys, equivariance_runs):
    bell, btqft, elapsed = equivariance_runs
    ok = bell.passed and btqft.passed and elapsed < 300
    tvs = ", ".join(f"{r.binning}@{r.t:g} {r.tv:.4f}" for r in bell.results + btqft.results)
    _line(capsys, "4 equivariance", ok, f"M={M}: {tvs}; {elapsed:.1f}s")
    assert ok, bell.summary() + "\n" + btqft.summary()
    for r in bell.results + btqft.results:
        assert r.tv > r.noise_floor


def test_criterion_5_number_steps(capsys, equivariance_runs):
    _, btqft, _ = equivariance_runs
    ens = btqft.ensemble
    bad = sector_increment_violations(ens)
    ok = bad == 0 and len(ens.events) > 0
    _line(capsys, "5 n+-1 transitions", ok, f"{bad} violations in {len(ens.events)} jump events")
    assert ok


# -- 6 -------------------------------------------------------------------------------------
def test_criterion_6_time_reversal(capsys):
    start = time.perf_counter()
    h, psi = build_model(preset("bell-lattice"))
    rep = check_time_reversal(h, psi, 1.0, M, seed=1, threshold=0.03)
    ctrl = check_time_reversal(h, psi, 1.0, M, seed=1, threshold=0.03, conjugate=False)
    elapsed = time.perf_counter() - start
    ok = rep.passed and not ctrl.passed and elapsed < 180
    _line(
        capsys, "6 time reversal", ok,
        f"reversed TV {rep.results[0].tv:.4f} (<0.03), unconjugated control TV {ctrl.results[0].tv:.4f} fails, {elapsed:.1f}s",
    )
    assert ok


# -- 7 -------------------------------------------------------------------------------------
def test_criterion_7_dead_particle(capsys):
    start = time.perf_counter()
    sc = default_scenario()
    X = sc.reference_point()
    frozen = four_velocity(replace(sc, collapse="exact"), X)[0]
    seps = [k * sc.w_E for k in (2, 4, 6, 8)]
    speeds = [dead_particle_speed(sc, s) for s in seps]
    direct = [dead_particle_speed_direct(sc, s) for s in seps]
    elapsed = time.perf_counter() - start
    ok = (
        bool(np.all(frozen == 0.0))
        and all(v > 0 for v in speeds)
        and all(a > b for a, b in zip(speeds, speeds[1:]))
        and max(abs(a - b) for a, b in zip(speeds, direct)) < 1e-6
        and elapsed < 10
    )
    pretty = ", ".join(f"{v:.3e}" for v in speeds)
    _line(capsys, "7 dead particle", ok, f"exact-collapse velocity {frozen.tolist()}; speeds at 2,4,6,8 w_E: {pretty}; {elapsed:.2f}s")
    assert ok


# -- 8 -------------------------------------------------------------------------------------
def test_criterion_8_unitarity_and_determinism(capsys, equivariance_runs, tmp_path):
    bell, btqft, _ = equivariance_runs
    defect = max(bell.extra["max_norm_defect"], btqft.extra["max_norm_defect"])
    manifests = {}
    for name, over in (("bell-lattice", {"M": 9000}), ("picture-a", {"M": 5000, "T": 1.0, "dt": 1e-2, "checkpoints": [1.0]})):
        cfg = preset(name, {"mode": "ensemble", "dt": 1e-2, **over})
        for workers in (1, 2, 3):
            out = tmp_path / f"{name}-{workers}"
            assert run(cfg, out, workers=workers) == 0
            summary = json.loads((out / "summary.json").read_text())
            defect = max(defect, summary["max_norm_defect"])
            manifests.setdefault(name, []).append((out / "manifest.json").read_bytes())
    identical = all(len(set(m)) == 1 for m in manifests.values())
    ok = defect < 1e-7 and identical
    _line(capsys, "8 unitarity and determinism", ok, f"max norm defect {defect:.1e}; manifests identical across 1/2/3 workers: {identical}")
    assert ok
