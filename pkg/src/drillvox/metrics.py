"""Skill metrics: kinematic derivatives, force statistics, removal accounting.

Kinematic quantities are in mm, s and derived mm/s^n. Derivatives use central
differences where possible and one-sided differences at the series ends.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError
from .events import BurrChange, ForceSample, Kinematics, VoxelRemoved
from .recording import read_recording
from .volume import SegmentTable

__all__ = [
    "KinematicsSeries",
    "KinematicsStats",
    "MetricsReport",
    "kinematics_metrics",
    "force_metrics",
    "removal_metrics",
    "report",
    "report_from_events",
    "render_json",
    "render_table",
    "export_removed_ply",
]


@dataclass
class KinematicsSeries:
    """Uniformly sampled positions (mm)."""

    t0: float
    dt: float
    positions: np.ndarray   # (n, 3)

    @classmethod
    def from_events(cls, events, dt: float) -> "KinematicsSeries":
        samples = [(ev.t, ev.drill_pose[:3]) for ev in events if isinstance(ev, Kinematics)]
        if len(samples) < 2:
            raise InsufficientDataError("need at least two kinematics samples")
        t = np.array([s[0] for s in samples])
        pos = np.array([s[1] for s in samples], dtype=np.float64)
        grid = np.arange(t[0], t[-1] + dt / 2, dt)
        out = np.column_stack([np.interp(grid, t, pos[:, d]) for d in range(3)])
        return cls(float(t[0]), dt, out)


def _derivative(x: np.ndarray, dt: float) -> np.ndarray:
    """Central differences, second-order one-sided at the ends. x is (n, 3).

    The one-sided stencils match the interior's O(dt^2) accuracy; a plain
    forward/backward difference at the ends leaks large spurious values into
    chained derivatives (acceleration, jerk).
    """
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2 * dt)
    if len(x) >= 3:
        d[0] = (-3 * x[0] + 4 * x[1] - x[2]) / (2 * dt)
        d[-1] = (3 * x[-1] - 4 * x[-2] + x[-3]) / (2 * dt)
    else:
        d[0] = (x[1] - x[0]) / dt
        d[-1] = (x[-1] - x[-2]) / dt
    return d


@dataclass
class KinematicsStats:
    duration_s: float
    path_length_mm: float
    mean_speed: float
    max_speed: float
    mean_accel: float
    max_accel: float
    mean_jerk: float
    max_jerk: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "duration_s", "path_length_mm", "mean_speed", "max_speed",
            "mean_accel", "max_accel", "mean_jerk", "max_jerk")}


def kinematics_metrics(series: KinematicsSeries) -> KinematicsStats:
    x = series.positions
    n = len(x)
    if n < 2:
        raise InsufficientDataError("need at least two samples")
    path = float(np.sum(np.linalg.norm(np.diff(x, axis=0), axis=1)))
    v = _derivative(x, series.dt)
    speed = np.linalg.norm(v, axis=1)
    a = _derivative(v, series.dt)
    accel = np.linalg.norm(a, axis=1)
    if n < 4:
        raise InsufficientDataError("need at least four samples for jerk")
    j = _derivative(a, series.dt)
    jerk = np.linalg.norm(j, axis=1)
    return KinematicsStats(
        duration_s=(n - 1) * series.dt,
        path_length_mm=path,
        mean_speed=float(speed.mean()), max_speed=float(speed.max()),
        mean_accel=float(accel.mean()), max_accel=float(accel.max()),
        mean_jerk=float(jerk.mean()), max_jerk=float(jerk.max()),
    )


def force_metrics(events) -> tuple[float, float] | None:
    """(mean, max) of force magnitudes, or None when no samples exist."""
    mags = [float(np.linalg.norm(ev.force)) for ev in events
            if isinstance(ev, ForceSample)]
    if not mags:
        return None
    return float(np.mean(mags)), float(np.max(mags))


@dataclass
class RemovalStats:
    counts: dict[int, int]
    volumes_mm3: dict[int, float]
    unintended: bool
    sensitive_counts: dict[int, int]
    unknown_labels: list[int]
    points: list[tuple[tuple[int, int, int], int, tuple[float, float, float]]]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def removal_metrics(events, table: SegmentTable, sensitive: set[int],
                    voxel_volume_mm3: float = 1.0) -> RemovalStats:
    counts: dict[int, int] = {}
    sensitive_counts: dict[int, int] = {}
    unknown: set[int] = set()
    points = []
    for ev in events:
        if not isinstance(ev, VoxelRemoved):
            continue
        counts[ev.label] = counts.get(ev.label, 0) + 1
        if ev.label not in table:
            unknown.add(ev.label)
        if ev.label in sensitive:
            sensitive_counts[ev.label] = sensitive_counts.get(ev.label, 0) + 1
        points.append((ev.index, ev.label, ev.color))
    return RemovalStats(
        counts=counts,
        volumes_mm3={lb: c * voxel_volume_mm3 for lb, c in counts.items()},
        unintended=bool(sensitive_counts),
        sensitive_counts=sensitive_counts,
        unknown_labels=sorted(unknown),
        points=points,
    )


@dataclass
class MetricsReport:
    duration_s: float
    kinematics: KinematicsStats | None
    force_mean: float | None
    force_max: float | None
    removal: RemovalStats | None
    participant_id: str = "anonymous"

    def to_dict(self) -> dict:
        rem = None
        if self.removal is not None:
            rem = {
                "counts": {str(k): v for k, v in sorted(self.removal.counts.items())},
                "volumes_mm3": {str(k): v for k, v in sorted(self.removal.volumes_mm3.items())},
                "unintended": self.removal.unintended,
                "sensitive_counts": {str(k): v for k, v in
                                     sorted(self.removal.sensitive_counts.items())},
                "unknown_labels": self.removal.unknown_labels,
                "total": self.removal.total,
            }
        return {
            "participant_id": self.participant_id,
            "duration_s": self.duration_s,
            "kinematics": self.kinematics.to_dict() if self.kinematics else None,
            "force": None if self.force_mean is None else
                     {"mean": self.force_mean, "max": self.force_max},
            "removal": rem,
        }


def report_from_events(events, meta=None, table: SegmentTable | None = None,
                       sensitive: set[int] | None = None,
                       voxel_volume_mm3: float = 1.0) -> MetricsReport:
    events = list(events)
    if not events:
        raise InsufficientDataError("recording holds no events")
    times = [ev.t for ev in events]
    duration = max(times) - min(times)
    table = table or SegmentTable()
    sensitive = sensitive if sensitive is not None else table.sensitive_labels()

    kin = None
    try:
        kin_t = np.array([ev.t for ev in events if isinstance(ev, Kinematics)])
        if len(kin_t) < 2:
            raise InsufficientDataError("too few kinematics samples")
        dt = float(np.median(np.diff(kin_t)))
        series = KinematicsSeries.from_events(events, dt=dt)
        kin = kinematics_metrics(series)
    except InsufficientDataError:
        pass
    force = force_metrics(events)
    removal = removal_metrics(events, table, sensitive, voxel_volume_mm3)
    return MetricsReport(
        duration_s=duration,
        kinematics=kin,
        force_mean=None if force is None else force[0],
        force_max=None if force is None else force[1],
        removal=removal,
        participant_id=meta.participant_id if meta else "anonymous",
    )


def report(recording_dir, table: SegmentTable | None = None,
           sensitive: set[int] | None = None,
           voxel_volume_mm3: float = 1.0) -> MetricsReport:
    meta, events = read_recording(recording_dir)
    return report_from_events(events, meta, table, sensitive, voxel_volume_mm3)


def render_json(rep: MetricsReport) -> str:
    """Canonical machine rendering: sorted keys, repr floats, byte-stable."""
    return json.dumps(rep.to_dict(), sort_keys=True, indent=1)


def render_table(rep: MetricsReport) -> str:
    rows = [("participant", rep.participant_id),
            ("duration [s]", f"{rep.duration_s:.3f}")]
    if rep.kinematics:
        k = rep.kinematics
        rows += [
            ("path length [mm]", f"{k.path_length_mm:.3f}"),
            ("speed mean/max [mm/s]", f"{k.mean_speed:.3f} / {k.max_speed:.3f}"),
            ("accel mean/max [mm/s^2]", f"{k.mean_accel:.3f} / {k.max_accel:.3f}"),
            ("jerk mean/max [mm/s^3]", f"{k.mean_jerk:.3f} / {k.max_jerk:.3f}"),
        ]
    if rep.force_mean is not None:
        rows.append(("force mean/max [N]", f"{rep.force_mean:.4f} / {rep.force_max:.4f}"))
    else:
        rows.append(("force", "no samples"))
    if rep.removal:
        rows.append(("voxels removed", str(rep.removal.total)))
        for label, count in sorted(rep.removal.counts.items()):
            rows.append((f"  label {label}", str(count)))
        rows.append(("unintended removal", "YES" if rep.removal.unintended else "no"))
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def export_removed_ply(removal: RemovalStats, path) -> int:
    """Write the removed-voxel point set as an ASCII PLY colored point cloud."""
    pts = removal.points
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for (i, j, k), _label, color in pts:
            r, g, b = (int(round(255 * min(max(c, 0.0), 1.0))) for c in color)
            fh.write(f"{i} {j} {k} {r} {g} {b}\n")
    return len(pts)
