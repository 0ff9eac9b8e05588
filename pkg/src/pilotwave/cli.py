"""Command-line front end: ``pilotwave run <scenario-file> [options]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import nikolic as nk
from .btqft import expected_event_counts
from .engine import Snapshot, run_ensemble
from .models import Propagator, build_bell_lattice_model, build_emission_absorption_model
from .records import TrajectoryRecord
from .scenario import PRESETS, BellScenario, ScenarioError, dump_scenario, parse_scenario, preset
from .state import QuantumState, grid_orbital
from .verify import (
    check_equivariance,
    check_master_equation,
    check_time_reversal,
    empirical_distribution,
    reference_distribution,
)

__all__ = ["main", "run", "build_model"]

UNITARITY_LIMIT = 1e-7


class _Artifacts:
    """Files written by one run; hashed into the manifest at the end."""

    def __init__(self, root: Path):
        self.root = root
        self.paths: list[Path] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        self.paths.append(p)
        return p

    def text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def json(self, name: str, doc) -> Path:
        return self.text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return self.text(name, buf.getvalue())

    def manifest(self) -> Path:
        entries = []
        for p in sorted(set(self.paths)):
            if p.exists():
                data = p.read_bytes()
                entries.append({"path": p.name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        out = self.root / "manifest.json"
        out.write_text(json.dumps({"artifacts": entries}, indent=2, sort_keys=True) + "\n")
        return out

    def mark_partial(self) -> None:
        for p in sorted(set(self.paths)):
            if p.exists():
                os.replace(p, p.with_name(p.name + ".partial"))


def _complex(pair) -> complex:
    return complex(pair[0], pair[1])


def build_model(cfg):
    """Hamiltonian and initial state of a bell-lattice or btqft-emission scenario."""
    p = cfg.params
    if isinstance(cfg, BellScenario):
        h = build_bell_lattice_model(
            p.sites, p.hop, p.pair_coupling, p.n_max, single_coupling=p.single_coupling, onsite=p.onsite,
            hop_phase=p.hop_phase, coupling_phase=p.coupling_phase, site_cap=p.site_cap, hbar=cfg.hbar,
        )
        amps: dict = {}
        for term in p.initial:
            lab = tuple(term.occupation)
            amps[lab] = amps.get(lab, 0) + _complex(term.amplitude)
        return h, QuantumState.from_labels(h.basis, amps, cfg.hbar)
    h = build_emission_absorption_model(
        p.points, p.g, p.w, p.n_max, dx=p.dx, omega0=p.omega0, mass=p.mass, sources=p.sources,
        coupling_phase=p.coupling_phase, static_particles=p.static_particles, hbar=cfg.hbar,
    )
    arrays = {0: np.array(_complex(p.vacuum))}
    if p.orbitals:
        arrays[1] = sum(_complex(o.amplitude) * grid_orbital(h.basis, o.centre, o.width, o.momentum) for o in p.orbitals)
    return h, QuantumState.from_sector_arrays(h.basis, arrays, cfg.hbar)


def _kind(cfg) -> str:
    return "bell" if isinstance(cfg, BellScenario) else "btqft"


def _check_unitarity(ens) -> float:
    defect = float(ens.diagnostics.get("max_norm_defect", 0.0))
    if defect >= UNITARITY_LIMIT:
        raise RuntimeError(f"norm drift {defect:.3g} exceeds {UNITARITY_LIMIT:g}")
    return defect


def _label_str(label) -> str:
    return json.dumps(label, separators=(",", ":")).replace('"', "")


# -- stochastic models ------------------------------------------------------------------
def _run_trajectories(cfg, art: _Artifacts, workers: int) -> int:
    h, psi0 = build_model(cfg)
    kind = _kind(cfg)
    ens = run_ensemble(
        h, psi0, cfg.M, cfg.T, cfg.dt, kind=kind, seed=cfg.seed, checkpoints=cfg.checkpoints, workers=workers,
        record_paths=True,
    )
    defect = _check_unitarity(ens)
    summary = []
    for j in range(cfg.M):
        snaps = [Snapshot(s.t, s.config[j : j + 1], None if s.positions is None else s.positions[j : j + 1]) for s in ens.paths]
        rec = TrajectoryRecord.from_run(
            kind, h.basis, snaps, ens.events.for_trajectory(j), bool(ens.flagged[j]), ens.flag_reasons.get(j, ""),
            static_particles=h.static_particles,
        )
        rec.to_csv(art.path(f"trajectory_{j:05d}.csv"))
        summary.append({"trajectory": j, "jumps": len(rec.jumps()), "flagged": rec.flagged, "sectors": rec.sector_sequence()})
    art.json("summary.json", {"model": h.name, "max_norm_defect": defect, "trajectories": summary})
    print(f"{cfg.M} trajectories of {h.name} written to {art.root}")
    return 0


def _event_statistics(cfg, h, psi0, ens) -> dict:
    """Per-trajectory creation/annihilation counts against the exact integrated flux."""
    dn = ens.events.dn
    counts = {}
    for name, sel in (("creation", dn > 0), ("annihilation", dn < 0)):
        per = np.bincount(ens.events.traj[sel], minlength=cfg.M)
        counts[name] = (float(per.mean()), float(per.std(ddof=1) / math.sqrt(cfg.M)) if cfg.M > 1 else 0.0)
    expected = expected_event_counts(h, psi0, cfg.T)
    base = h.static_particles
    start = h.basis.sectors[ens.snapshot(0.0).config] + base
    pattern = 0
    for j in range(cfg.M):
        ev = ens.events.for_trajectory(j)
        seq = [int(start[j])] + [int(h.basis.sectors[d]) + base for d in ev.dst]
        if any(seq[i : i + 3] == [base, base + 1, base] for i in range(len(seq))):
            pattern += 1
    out = {}
    for name, (mean, err) in counts.items():
        out[name] = {
            "mean_per_trajectory": mean,
            "standard_error": err,
            "exact": expected[name],
            "within_2_sigma": bool(abs(mean - expected[name]) <= 2 * err) if err > 0 else mean == expected[name],
        }
    out["emission_then_absorption_fraction"] = pattern / cfg.M
    return out


def _run_ensemble(cfg, art: _Artifacts, workers: int) -> int:
    h, psi0 = build_model(cfg)
    kind = _kind(cfg)
    checkpoints = sorted(set(cfg.checkpoints) | {0.0, cfg.T})
    ens = run_ensemble(h, psi0, cfg.M, cfg.T, cfg.dt, kind=kind, seed=cfg.seed, checkpoints=checkpoints, workers=workers)
    defect = _check_unitarity(ens)
    prop = Propagator(h, psi0, method="exact")
    binnings = ["config"] if kind == "bell" else ["sector", "config"]
    for t in checkpoints:
        exact = prop.state(t)
        for b in binnings:
            ref = reference_distribution(exact, b)
            emp = empirical_distribution(ens, t, b, support=ref.labels)
            rows = [(_label_str(lab), float(e), float(r)) for lab, e, r in zip(ref.labels, emp.probs, ref.probs)]
            art.csv(f"histogram_{b}_t{t:g}.csv", ["label", "empirical", "exact"], rows)
    ev = ens.events
    art.csv(
        "events.csv",
        ["trajectory", "t", "source_id", "destination_id", "sector_change", "position"],
        ((int(a), float(b), int(c), int(d), int(e), "" if np.isnan(f) else float(f)) for a, b, c, d, e, f in zip(ev.traj, ev.t, ev.src, ev.dst, ev.dn, ev.position)),
    )
    art.json("psi0.json", psi0.to_json())
    art.json("psi_T.json", prop.state(cfg.T).to_json())
    summary = {
        "model": h.name,
        "M": cfg.M,
        "seed": cfg.seed,
        "jump_events": len(ev),
        "flagged": int(ens.flagged.sum()),
        "max_norm_defect": defect,
    }
    if kind == "btqft":
        summary["sector_increment_violations"] = int(np.count_nonzero(np.abs(ev.dn) != 1))
        summary["event_statistics"] = _event_statistics(cfg, h, psi0, ens)
    art.json("summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _run_verify(cfg, art: _Artifacts, workers: int) -> int:
    h, psi0 = build_model(cfg)
    kind = _kind(cfg)
    v = cfg.verify
    checks = v.checks or (
        ["equivariance", "master-equation", "time-reversal", "time-reversal-control"]
        if kind == "bell"
        else ["equivariance", "master-equation"]
    )
    checkpoints = cfg.checkpoints or [cfg.T]
    if kind == "bell":
        binnings = ["config"]
    else:
        binnings = ["sector"] + ([v.bins] if h.basis.points % v.bins == 0 else [])
    thresholds = {"config": v.config_threshold, "sector": v.sector_threshold, v.bins: v.position_threshold}
    ok = True
    for check in checks:
        if check == "equivariance":
            rep = check_equivariance(
                h, psi0, cfg.M, checkpoints, cfg.seed, binnings=binnings, thresholds=thresholds, dt=cfg.dt,
                workers=workers,
            )
            _check_unitarity(rep.ensemble)
            art.text("report_equivariance.json", rep.to_json())
            print(rep.summary())
            ok &= rep.passed
        elif check == "master-equation":
            tol = v.master_tolerance or (1e-6 if kind == "bell" else 1e-5)
            level = "config" if kind == "bell" else "sector"
            res = check_master_equation(h, psi0, v.master_times, level=level)
            passed = res < tol
            art.json("report_master_equation.json", {"model": h.name, "level": level, "residual": res, "tolerance": tol, "status": "PASS" if passed else "FAIL"})
            print(f"master-equation [{h.name}] residual={res:.3e} (tolerance {tol:g}): {'PASS' if passed else 'FAIL'}")
            ok &= passed
        else:
            control = check == "time-reversal-control"
            b = binnings[0]
            rep = check_time_reversal(
                h, psi0, cfg.T, cfg.M, cfg.seed, conjugate=not control, binning=b, threshold=thresholds[b], dt=cfg.dt,
                workers=workers,
            )
            if control:
                rep.extra["expected_status"] = "FAIL"
            name = "report_time_reversal_control.json" if control else "report_time_reversal.json"
            art.text(name, rep.to_json())
            print(rep.summary())
            ok &= (not rep.passed) if control else rep.passed
    print("verify:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


# -- multi-time model -----------------------------------------------------------------
def _scenario(cfg) -> nk.DecayScenario:
    p = cfg.params
    packets = [nk.Packet(**q.model_dump()) for q in (p.psi1, p.psi2, p.psi3)]
    return nk.DecayScenario(
        *packets, mu1=p.mu1, mu2=p.mu2, w_E=p.w_E, a1=_complex(p.a1), a2=_complex(p.a2),
        pointer_mass=p.pointer_mass, collapse=p.collapse, detectors=p.detectors,
    )


def _separations(cfg) -> list[float]:
    p = cfg.params
    return list(p.separations) if p.separations is not None else [k * p.w_E for k in (2, 4, 6, 8)]


def _run_nikolic_trajectory(cfg, art: _Artifacts) -> int:
    sc, p = _scenario(cfg), cfg.params
    X0 = sc.reference_point()
    if p.variant == "two-stage":
        first, second = nk.two_stage_paths(sc, X0, p.s_span / 2, p.s_span / 2, p.ds)
        first.to_csv(art.path("path_stage1.csv"))
        second.to_csv(art.path("path_stage2.csv"))
        summary = {
            "interpretive": True,
            "stage1_particle1_time_advance": float(first.points[-1, 0] - first.points[0, 0]),
            "stage2_particle1_time_advance": float(second.points[-1, 0] - second.points[0, 0]),
        }
    else:
        path = nk.integrate_multitime(sc, X0, p.s_span, p.ds)
        box = p.variant == "decay-box"
        path.to_csv(art.path("path.csv"), with_dominant=box)
        summary = {"variant": p.variant, "end": list(path.rows())[-1], "rejected_steps": path.rejected_steps}
        if box:
            d = path.dominant
            summary["dominant_branch_fraction"] = {"1": float(np.mean(d == 1)), "2": float(np.mean(d == 2))}
            summary["particles_moving"] = 3
    art.json("summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _run_nikolic_sweep(cfg, art: _Artifacts) -> int:
    rows = nk.sweep_dead_speed(_scenario(cfg), _separations(cfg))
    art.csv(
        "sweep.csv",
        ["separation", "overlap", "dead_speed", "direct_speed"],
        ((r["separation"], r["overlap"], r["dead_speed"], r["direct_speed"]) for r in rows),
    )
    for r in rows:
        print(f"separation={r['separation']:g} overlap={r['overlap']:.3e} dead_speed={r['dead_speed']:.6e}")
    return 0


def _run_nikolic_verify(cfg, art: _Artifacts) -> int:
    sc, p = _scenario(cfg), cfg.params
    X = sc.reference_point()
    results = {}
    v = nk.four_velocity(replace(sc, collapse="exact"), X)[0]
    results["exact_collapse_zero"] = {"velocity": v.tolist(), "passed": bool(np.all(v == 0.0))}
    rows = nk.sweep_dead_speed(sc, _separations(cfg))
    speeds = [r["dead_speed"] for r in rows]
    agree = max(abs(r["dead_speed"] - r["direct_speed"]) for r in rows)
    results["dead_speed_sweep"] = {
        "rows": rows,
        "max_route_difference": agree,
        "passed": bool(all(s > 0 for s in speeds) and all(a > b for a, b in zip(speeds, speeds[1:])) and agree < 1e-6),
    }
    res = float(nk.continuity_residual(sc, np.random.default_rng(cfg.seed), p.continuity_points))
    results["continuity"] = {"residual": res, "tolerance": 1e-4, "passed": res < 1e-4}
    a = nk.integrate_multitime(sc, X, p.s_span, p.ds).points[-1]
    b = nk.integrate_multitime(sc, X, p.s_span, p.ds / 2).points[-1]
    diff = float(np.max(np.abs(a - b)))
    results["step_convergence"] = {"endpoint_difference": diff, "tolerance": 1e-6, "passed": diff < 1e-6}
    ok = all(r["passed"] for r in results.values())
    art.json("report_multitime.json", {"model": "nikolic-decay", "checks": results, "status": "PASS" if ok else "FAIL"})
    for k, r in results.items():
        print(f"{k}: {'pass' if r['passed'] else 'FAIL'}")
    print("verify:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


# -- entry points -------------------------------------------------------------------------
def run(cfg, out_dir=None, workers: int = 1) -> int:
    """Execute a validated scenario; returns the process exit status."""
    root = Path(out_dir if out_dir is not None else cfg.output_dir)
    art = _Artifacts(root)
    try:
        art.text("scenario.yaml", dump_scenario(cfg))
        if cfg.model == "nikolic-decay":
            handler = {"trajectory": _run_nikolic_trajectory, "sweep": _run_nikolic_sweep, "verify": _run_nikolic_verify}[cfg.mode]
            status = handler(cfg, art)
        else:
            handler = {"trajectory": _run_trajectories, "ensemble": _run_ensemble, "verify": _run_verify}[cfg.mode]
            status = handler(cfg, art, workers)
    except Exception as exc:  # keep what was written, marked as incomplete
        art.mark_partial()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    art.manifest()
    return status


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pilotwave", description="Pilot-wave dynamics with particle creation and annihilation.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file or preset")
    r.add_argument("scenario", nargs="?", help="YAML scenario file (overrides preset values)")
    r.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--out-dir", help="output directory (default: the scenario's output_dir)")
    r.add_argument("--workers", type=int, default=1, help="worker processes for ensembles")
    sub.add_parser("presets", help="list presets")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(f"{name}: {PRESETS[name]['model']} ({PRESETS[name]['mode']})")
        return 0
    if args.scenario is None and args.preset is None:
        print("error: give a scenario file, --preset, or both", file=sys.stderr)
        return 2
    try:
        if args.preset:
            overrides = {}
            if args.scenario:
                overrides = yaml.safe_load(Path(args.scenario).read_text()) or {}
                if not isinstance(overrides, dict):
                    raise ScenarioError(["<root>: scenario must be a mapping"])
            if args.seed is not None:
                overrides["seed"] = args.seed
            cfg = preset(args.preset, overrides)
        else:
            cfg = parse_scenario(args.scenario)
            if args.seed is not None:
                cfg = type(cfg).model_validate({**cfg.model_dump(), "seed": args.seed})
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    return run(cfg, args.out_dir, args.workers)


if __name__ == "__main__":
    sys.exit(main())
