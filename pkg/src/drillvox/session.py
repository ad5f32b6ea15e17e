"""Deterministic fixed-timestep drilling session and scripted trajectories."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .drill import (
    AudioConfig,
    Burr,
    DrillInput,
    HapticConfig,
    TickOutcome,
    apply_drill_tick,
    default_burr_catalog,
)
from .errors import ContractViolation, StateError, ValidationError
from .events import BurrChange, ForceSample, Kinematics, VoxelRemoved
from .recording import Recorder
from .volume import LabeledVolume, grid_digest

__all__ = ["SessionConfig", "Session", "Trajectory", "Keyframe", "StepReport",
           "SessionSummary", "load_trajectory", "run_script"]

IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)


@dataclass
class SessionConfig:
    tick_rate_hz: float = 1000.0
    burrs: list[Burr] = field(default_factory=default_burr_catalog)
    audio: AudioConfig = field(default_factory=AudioConfig)
    haptic: HapticConfig = field(default_factory=HapticConfig)
    sensitive_labels: set[int] | None = None    # None -> from the segment table
    hardness: dict[int, float] = field(default_factory=dict)
    batch_size: int = 10_000
    force_sample_hz: float = 100.0
    kinematics_sample_hz: float | None = None   # None -> every tick

    def __post_init__(self):
        if self.tick_rate_hz <= 0:
            raise ContractViolation("tick rate must be positive")
        if self.batch_size < 1:
            raise ContractViolation("batch size must be >= 1")

    def snapshot(self) -> dict:
        return {
            "tick_rate_hz": self.tick_rate_hz,
            "burrs": [{"radius_mm": b.radius_mm, "tip": b.tip, "brr": b.brr}
                      for b in self.burrs],
            "audio": {"p_max": self.audio.p_max, "F_max": self.audio.F_max},
            "haptic": {"A_drill": self.haptic.A_drill, "f": self.haptic.f,
                       "k_c": self.haptic.k_c},
            "sensitive_labels": sorted(self.sensitive_labels) if self.sensitive_labels else None,
            "batch_size": self.batch_size,
            "force_sample_hz": self.force_sample_hz,
        }


def default_burr_id(burrs: list[Burr]) -> int:
    """Largest cutting burr, the usual start for cortical work."""
    best, best_r = 0, -1.0
    for i, b in enumerate(burrs):
        if b.tip == "cutting" and b.radius_mm > best_r:
            best, best_r = i, b.radius_mm
    return best


@dataclass
class StepReport:
    t: float
    outcome: TickOutcome
    drill_pose: tuple[float, ...]
    camera_pose: tuple[float, ...]


@dataclass
class SessionSummary:
    steps: int
    removed_voxels: int
    max_force: float
    warning_count: int
    final_digest: int


class Session:
    """Owns the volume and damage field; one logical owner thread.

    Time is an integer tick count divided by the tick rate, so t never
    accumulates floating-point drift.
    """

    def __init__(self, vol: LabeledVolume, cfg: SessionConfig | None = None,
                 recorder: Recorder | None = None):
        if vol.occupied_count() == 0:
            raise ContractViolation("cannot open a session on an empty volume")
        self.cfg = cfg or SessionConfig()
        self.vol = vol
        self.damage = np.zeros(vol.dims, dtype=np.float64)
        self.recorder = recorder
        self.burr_id = default_burr_id(self.cfg.burrs)
        self._tick = 0
        self._closed = False
        self._removed_total = 0
        self._max_force = 0.0
        self._warnings = 0
        self._force_div = max(1, round(self.cfg.tick_rate_hz / self.cfg.force_sample_hz))
        if self.cfg.kinematics_sample_hz:
            self._kin_div = max(1, round(self.cfg.tick_rate_hz / self.cfg.kinematics_sample_hz))
        else:
            self._kin_div = 1
        self.camera_pose: tuple[float, ...] = (0.0, 0.0, 0.0) + IDENTITY_QUAT
        self.listeners: list = []    # callables taking (event)
        self._sensitive = (self.cfg.sensitive_labels
                           if self.cfg.sensitive_labels is not None
                           else vol.segment_table.sensitive_labels())

    @property
    def t(self) -> float:
        return self._tick / self.cfg.tick_rate_hz

    @property
    def tick_count(self) -> int:
        return self._tick

    def digest(self) -> int:
        return grid_digest(self.vol)

    def _emit(self, ev) -> None:
        if self.recorder is not None:
            self.recorder.append(ev)
        for cb in self.listeners:
            cb(ev)

    def step(self, inp: DrillInput, camera_pose: tuple[float, ...] | None = None) -> StepReport:
        if self._closed:
            raise StateError("session is closed")
        if camera_pose is not None:
            self.camera_pose = tuple(float(c) for c in camera_pose)
        self._tick += 1
        t_now = self._tick / self.cfg.tick_rate_hz

        if inp.burr_id != self.burr_id:
            if not (0 <= inp.burr_id < len(self.cfg.burrs)):
                raise ContractViolation(f"burr id {inp.burr_id} outside the catalog")
            self.burr_id = inp.burr_id
            b = self.cfg.burrs[self.burr_id]
            self._emit(BurrChange(t_now, b.radius_mm, b.tip))

        burr = self.cfg.burrs[self.burr_id]
        outcome = apply_drill_tick(
            self.vol, self.damage, inp, burr,
            dt=1.0 / self.cfg.tick_rate_hz, t=t_now,
            audio=self.cfg.audio, haptic=self.cfg.haptic,
            hardness=self.cfg.hardness, sensitive=self._sensitive,
        )
        for idx, label in outcome.removed:
            color = self.vol.segment_table.color_of(label)
            self._emit(VoxelRemoved(t_now, idx, label, color))
        if self._tick % self._force_div == 0:
            self._emit(ForceSample(t_now, tuple(outcome.F_haptic)))
        drill_pose = tuple(float(c) for c in inp.tip_position) + tuple(inp.tip_orientation)
        if self._tick % self._kin_div == 0:
            self._emit(Kinematics(t_now, drill_pose, self.camera_pose))

        self._removed_total += len(outcome.removed)
        self._max_force = max(self._max_force, float(np.linalg.norm(outcome.F_haptic)))
        self._warnings += len(outcome.warnings)
        return StepReport(t_now, outcome, drill_pose, self.camera_pose)

    def close(self) -> SessionSummary:
        if self._closed:
            raise StateError("session already closed")
        self._closed = True
        return SessionSummary(self._tick, self._removed_total, self._max_force,
                              self._warnings, self.digest())


@dataclass(frozen=True)
class Keyframe:
    t: float
    pos: tuple[float, float, float]
    quat: tuple[float, float, float, float] = IDENTITY_QUAT
    pedal: float = 0.0
    burr_id: int | None = None   # None -> keep current


@dataclass
class Trajectory:
    keyframes: list[Keyframe]
    mode: str = "linear"   # "linear" | "hold"

    def __post_init__(self):
        if not self.keyframes:
            raise ValidationError("trajectory needs at least one keyframe")
        if self.keyframes[0].t != 0.0:
            raise ValidationError("first keyframe must be at t=0")
        times = [k.t for k in self.keyframes]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("keyframe times must be strictly increasing")
        if self.mode not in ("linear", "hold"):
            raise ValidationError(f"unknown interpolation mode {self.mode!r}")

    @property
    def duration(self) -> float:
        return self.keyframes[-1].t


def _slerp(qa, qb, u: float) -> tuple[float, float, float, float]:
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb, dot = -qb, -dot
    if dot > 0.9995:
        q = qa + u * (qb - qa)
    else:
        theta = math.acos(min(dot, 1.0))
        q = (math.sin((1 - u) * theta) * qa + math.sin(u * theta) * qb) / math.sin(theta)
    q = q / np.linalg.norm(q)
    return tuple(float(c) for c in q)


def sample_trajectory(traj: Trajectory, t: float, current_burr: int) -> DrillInput:
    kfs = traj.keyframes
    if t <= kfs[0].t:
        k = kfs[0]
        return DrillInput(k.pos, k.quat, k.pedal,
                          k.burr_id if k.burr_id is not None else current_burr)
    if t >= kfs[-1].t:
        k = kfs[-1]
        return DrillInput(k.pos, k.quat, k.pedal,
                          k.burr_id if k.burr_id is not None else current_burr)
    hi = next(i for i, k in enumerate(kfs) if k.t > t)
    a, b = kfs[hi - 1], kfs[hi]
    burr = a.burr_id if a.burr_id is not None else current_burr
    if traj.mode == "hold":
        return DrillInput(a.pos, a.quat, a.pedal, burr)
    u = (t - a.t) / (b.t - a.t)
    pos = tuple((1 - u) * pa + u * pb for pa, pb in zip(a.pos, b.pos))
    quat = _slerp(a.quat, b.quat, u)
    pedal = (1 - u) * a.pedal + u * b.pedal
    return DrillInput(pos, quat, pedal, burr)


def run_script(session: Session, traj: Trajectory) -> SessionSummary:
    """Step the session through the trajectory at tick boundaries, then close it."""
    n_ticks = round(traj.duration * session.cfg.tick_rate_hz)
    for n in range(session.tick_count + 1, session.tick_count + n_ticks + 1):
        t = n / session.cfg.tick_rate_hz
        session.step(sample_trajectory(traj, t, session.burr_id))
    return session.close()


def load_trajectory(source) -> Trajectory:
    """Parse a trajectory from a JSON file path, bytes, or an already-loaded dict."""
    if isinstance(source, dict):
        doc = source
    else:
        try:
            if isinstance(source, (bytes, str)) and (
                    isinstance(source, bytes) or source.lstrip().startswith("{")):
                doc = json.loads(source)
            else:
                with open(source, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot load trajectory: {exc}") from exc
    try:
        kfs = [Keyframe(
            t=float(k["t"]),
            pos=tuple(float(c) for c in k["pos"]),
            quat=tuple(float(c) for c in k.get("quat", IDENTITY_QUAT)),
            pedal=float(k.get("pedal", 0.0)),
            burr_id=k.get("burr"),
        ) for k in doc["keyframes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed trajectory document: {exc}") from exc
    return Trajectory(kfs, mode=doc.get("mode", "linear"))
