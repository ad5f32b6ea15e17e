"""Burr models, voxel ablation, collision/haptic forces and audio pitch."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .volume import LabeledVolume, world_to_voxel

__all__ = [
    "Burr",
    "DrillInput",
    "AudioConfig",
    "HapticConfig",
    "ContactState",
    "SensitiveWarning",
    "TickOutcome",
    "default_burr_catalog",
    "intersect_voxels",
    "contact_state",
    "apply_drill_tick",
    "collision_force",
    "audio_pitch",
    "haptic_force",
    "check_sensitive",
]

DEFAULT_RADII_MM = (1.0, 2.0, 4.0, 6.0)
CUTTING_BRR_PER_MM = 2.0   # damage units / s at full pedal, per mm of radius
DIAMOND_BRR_PER_MM = 0.8


@dataclass(frozen=True)
class Burr:
    radius_mm: float
    tip: str           # "cutting" | "diamond"
    brr: float         # damage units per second at full pedal

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ContractViolation("burr radius must be positive")
        if self.tip not in ("cutting", "diamond"):
            raise ContractViolation(f"unknown tip type {self.tip!r}")
        if self.brr <= 0:
            raise ContractViolation("bone removal rate must be positive")


def default_burr_catalog() -> list[Burr]:
    """Cutting and diamond tips at 1/2/4/6 mm; cutting ablates faster."""
    catalog = []
    for r in DEFAULT_RADII_MM:
        catalog.append(Burr(r, "cutting", CUTTING_BRR_PER_MM * r))
        catalog.append(Burr(r, "diamond", DIAMOND_BRR_PER_MM * r))
    return catalog


@dataclass(frozen=True)
class DrillInput:
    tip_position: tuple[float, float, float]
    tip_orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)  # w,x,y,z
    pedal: float = 0.0
    burr_id: int = 0

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.tip_orientation))
        if abs(n - 1.0) > 1e-6:
            raise ContractViolation(f"tip orientation quaternion norm {n} is not 1")
        object.__setattr__(self, "pedal", min(max(self.pedal, 0.0), 1.0))


@dataclass(frozen=True)
class AudioConfig:
    p_max: float = 2.0     # maximum pitch multiplier
    F_max: float = 6.0     # device force saturation, N

    def __post_init__(self):
        if self.p_max <= 0 or self.F_max <= 0:
            raise ContractViolation("p_max and F_max must be positive")


@dataclass(frozen=True)
class HapticConfig:
    A_drill: float = 0.25  # vibration magnitude, N
    f: float = 500.0       # vibration frequency, rad/s
    k_c: float = 20.0      # contact stiffness, N per unit overlap fraction

    def __post_init__(self):
        if self.A_drill < 0 or self.f <= 0 or self.k_c <= 0:
            raise ContractViolation("bad haptic parameters")


@dataclass
class ContactState:
    overlapped: np.ndarray        # (n, 3) voxel indices, removal-sorted
    centroid: np.ndarray | None   # world mm, None when no contact
    overlap_fraction: float

    @property
    def in_contact(self) -> bool:
        return len(self.overlapped) > 0


@dataclass(frozen=True)
class SensitiveWarning:
    label: int
    name: str
    kind: str  # "contact" | "removal"


@dataclass
class TickOutcome:
    removed: list[tuple[tuple[int, int, int], int]]
    F_collision: np.ndarray
    F_haptic: np.ndarray
    pitch: float
    warnings: list[SensitiveWarning]
    contact: ContactState


def _intersect_array(vol: LabeledVolume, tip, radius_mm: float) -> np.ndarray:
    """Sorted (n, 3) index array of occupied voxels inside the burr sphere."""
    if radius_mm <= 0:
        raise ContractViolation("radius must be positive")
    tip = np.asarray(tip, dtype=np.float64)
    spacing = np.asarray(vol.spacing)
    ctr = world_to_voxel(vol, tip)
    lo = np.maximum(np.ceil(ctr - radius_mm / spacing), 0).astype(int)
    hi = np.minimum(np.floor(ctr + radius_mm / spacing), np.array(vol.dims) - 1).astype(int)
    if np.any(lo > hi):
        return np.empty((0, 3), dtype=np.int64)
    ii, jj, kk = np.meshgrid(
        np.arange(lo[0], hi[0] + 1),
        np.arange(lo[1], hi[1] + 1),
        np.arange(lo[2], hi[2] + 1),
        indexing="ij",
    )
    centers = np.stack([ii, jj, kk], axis=-1) * spacing + np.asarray(vol.origin)
    d2 = np.sum((centers - tip) ** 2, axis=-1)
    occupied = vol.labels[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] != 0
    mask = (d2 <= radius_mm * radius_mm) & occupied
    if not mask.any():
        return np.empty((0, 3), dtype=np.int64)
    idx = np.argwhere(mask) + lo
    dist = np.sqrt(d2[mask])
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0], dist))
    return idx[order]


def intersect_voxels(vol: LabeledVolume, tip, radius_mm: float) -> list[tuple[int, int, int]]:
    """In-bounds non-empty voxels whose centers lie within ``radius_mm`` of ``tip``.

    Sorted by distance to the tip, ties broken lexicographically on (i, j, k).
    """
    return [tuple(int(c) for c in row) for row in _intersect_array(vol, tip, radius_mm)]


def _ideal_sphere_count(vol: LabeledVolume, radius_mm: float) -> int:
    return max(1, int(round(4.0 / 3.0 * math.pi * radius_mm ** 3 / vol.voxel_volume_mm3)))


def contact_state(vol: LabeledVolume, tip, radius_mm: float) -> ContactState:
    overlapped = _intersect_array(vol, tip, radius_mm)
    if len(overlapped) == 0:
        return ContactState(overlapped, None, 0.0)
    centers = overlapped * np.asarray(vol.spacing) + np.asarray(vol.origin)
    centroid = centers.mean(axis=0)
    frac = min(1.0, len(overlapped) / _ideal_sphere_count(vol, radius_mm))
    return ContactState(overlapped, centroid, frac)


def collision_force(contact: ContactState, tip, cfg: HapticConfig, F_max: float) -> np.ndarray:
    """Penalty force pushing the tip out of the contact region, clamped at F_max."""
    if not contact.in_contact:
        return np.zeros(3)
    direction = np.asarray(tip, dtype=np.float64) - contact.centroid
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 1e-12 else np.array([0.0, 0.0, 1.0])
    magnitude = min(cfg.k_c * contact.overlap_fraction, F_max)
    return direction * magnitude


def audio_pitch(F_collision, cfg: AudioConfig) -> float:
    return cfg.p_max - float(np.linalg.norm(F_collision)) / cfg.F_max


def haptic_force(F_collision, drill_on: bool, t: float, cfg: HapticConfig) -> np.ndarray:
    F = np.asarray(F_collision, dtype=np.float64)
    if not drill_on:
        return F.copy()
    return F + np.ones(3) * cfg.A_drill * math.sin(cfg.f * t)


def check_sensitive(contacted_labels, removed_labels, table, sensitive_set) -> list[SensitiveWarning]:
    """One warning per distinct sensitive label touched; removal outranks contact."""
    warnings = []
    removed = {lb for lb in removed_labels if lb in sensitive_set}
    contacted = {lb for lb in contacted_labels if lb in sensitive_set} - removed
    for label in sorted(removed):
        name = table[label].name if label in table else f"label_{label}"
        warnings.append(SensitiveWarning(label, name, "removal"))
    for label in sorted(contacted):
        name = table[label].name if label in table else f"label_{label}"
        warnings.append(SensitiveWarning(label, name, "contact"))
    return warnings


def apply_drill_tick(
    vol: LabeledVolume,
    damage_field: np.ndarray,
    inp: DrillInput,
    burr: Burr,
    dt: float,
    t: float = 0.0,
    audio: AudioConfig = AudioConfig(),
    haptic: HapticConfig = HapticConfig(),
    hardness: dict[int, float] | None = None,
    sensitive: set[int] | None = None,
) -> TickOutcome:
    """Advance drilling by one tick; mutates ``vol.labels`` and ``damage_field``.

    Damage accrues uniformly over the overlapped voxels at pedal*brr per
    second; a voxel is removed once its damage reaches the hardness of its
    label (default 1.0). With pedal 0 contact and forces are still computed.
    """
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    if damage_field.shape != vol.labels.shape:
        raise ContractViolation("damage field dims differ from volume dims")
    hardness = hardness or {}
    sensitive = sensitive if sensitive is not None else vol.segment_table.sensitive_labels()

    contact = contact_state(vol, inp.tip_position, burr.radius_mm)
    removed: list[tuple[tuple[int, int, int], int]] = []
    if inp.pedal > 0.0 and contact.in_contact:
        ii, jj, kk = contact.overlapped.T
        dose = inp.pedal * burr.brr * dt
        damage_field[ii, jj, kk] += dose
        here = vol.labels[ii, jj, kk]
        if hardness:
            thresholds = np.array([hardness.get(int(lb), 1.0) for lb in here])
        else:
            thresholds = 1.0
        gone = damage_field[ii, jj, kk] >= thresholds
        if gone.any():
            # contact.overlapped is already in removal order, so the filtered
            # rows keep the distance-then-lexicographic ordering
            for row, label in zip(contact.overlapped[gone], here[gone]):
                removed.append(((int(row[0]), int(row[1]), int(row[2])), int(label)))
            vol.labels[ii[gone], jj[gone], kk[gone]] = 0
            damage_field[ii[gone], jj[gone], kk[gone]] = 0.0

    F_col = collision_force(contact, inp.tip_position, haptic, audio.F_max)
    drill_on = inp.pedal > 0.0
    F_hap = haptic_force(F_col, drill_on, t, haptic)
    pitch = audio_pitch(F_col, audio)
    if contact.in_contact:
        ii, jj, kk = contact.overlapped.T
        contacted_labels = set(np.unique(vol.labels[ii, jj, kk]).tolist()) - {0}
    else:
        contacted_labels = set()
    warnings = check_sensitive(
        contacted_labels, [lb for _, lb in removed], vol.segment_table, sensitive
    )
    return TickOutcome(removed, F_col, F_hap, pitch, warnings, contact)
