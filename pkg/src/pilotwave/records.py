"""Single-trajectory records and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .engine import EventLog, Snapshot

__all__ = ["TrajectoryRow", "TrajectoryRecord", "JumpEvent"]


@dataclass(frozen=True)
class TrajectoryRow:
    t: float
    event: str  # "flow" or "jump"
    config_id: int
    destination_id: int | None = None
    positions: tuple = ()
    position: float | None = None  # created or removed particle


@dataclass(frozen=True)
class JumpEvent:
    time: float
    source: tuple
    destination: tuple
    kind: str  # "creation", "annihilation" or "move"

    @property
    def sector_change(self) -> int:
        return len(self.destination) - len(self.source) if self.kind != "move" else 0


@dataclass
class TrajectoryRecord:
    """Piecewise path of one configuration with its jump events."""

    kind: str
    basis: object
    rows: list = field(default_factory=list)
    flagged: bool = False
    reason: str = ""
    diagnostics: dict = field(default_factory=dict)
    static_particles: int = 0

    @classmethod
    def from_run(cls, kind, basis, paths: list[Snapshot], events: EventLog, flagged=False, reason="", diagnostics=None, static_particles=0):
        rows = []
        keep = range(len(paths)) if kind == "btqft" else {0, len(paths) - 1}
        for i in sorted(keep):
            snap = paths[i]
            pos = () if snap.positions is None else tuple(float(x) for x in snap.positions[0] if not np.isnan(x))
            rows.append(TrajectoryRow(float(snap.t), "flow", int(snap.config[0]), None, pos))
        for k in range(len(events)):
            pos = None if np.isnan(events.position[k]) else float(events.position[k])
            rows.append(TrajectoryRow(float(events.t[k]), "jump", int(events.src[k]), int(events.dst[k]), (), pos))
        # flow rows sort before jumps at equal times
        rows.sort(key=lambda r: (r.t, r.event == "jump"))
        return cls(kind, basis, rows, flagged, reason, dict(diagnostics or {}), static_particles)

    def jumps(self) -> list[TrajectoryRow]:
        return [r for r in self.rows if r.event == "jump"]

    def jump_events(self) -> list[JumpEvent]:
        out = []
        for r in self.jumps():
            src, dst = self.basis.labels[r.config_id], self.basis.labels[r.destination_id]
            ds = self.basis.sectors[r.destination_id] - self.basis.sectors[r.config_id]
            kind = "creation" if ds > 0 else "annihilation" if ds < 0 else "move"
            out.append(JumpEvent(r.t, src, dst, kind))
        return out

    def sector_sequence(self) -> list[int]:
        """Particle numbers visited, counting ``static_particles`` as present."""
        s = self.basis.sectors
        seq = [int(s[self.rows[0].config_id]) + self.static_particles]
        for r in self.jumps():
            seq.append(int(s[r.destination_id]) + self.static_particles)
        return seq

    def config_at(self, t: float) -> int:
        if t < self.rows[0].t or t > self.rows[-1].t + 1e-12:
            raise ValueError(f"t={t} outside the recorded horizon")
        cfg = self.rows[0].config_id
        for r in self.rows:
            if r.t > t + 1e-12:
                break
            cfg = r.destination_id if r.event == "jump" else r.config_id
        return cfg

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t", "event_type", "config_id", "destination_id"]
        if self.kind == "btqft":
            header += ["sector", "destination_sector", "position", "positions"]
        w.writerow(header)
        s = self.basis.sectors
        for r in self.rows:
            row = [repr(r.t), r.event, r.config_id, "" if r.destination_id is None else r.destination_id]
            if self.kind == "btqft":
                row += [
                    int(s[r.config_id]) + self.static_particles,
                    "" if r.destination_id is None else int(s[r.destination_id]) + self.static_particles,
                    "" if r.position is None else repr(r.position),
                    ";".join(repr(x) for x in r.positions),
                ]
            w.writerow(row)
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text
