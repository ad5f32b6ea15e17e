"""Voxel-grid data model: labeled and intensity volumes, coordinate maps, digest."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

__all__ = [
    "Segment",
    "SegmentTable",
    "LabeledVolume",
    "IntensityVolume",
    "world_to_voxel",
    "voxel_to_world",
    "in_bounds",
    "grid_digest",
]


@dataclass(frozen=True)
class Segment:
    name: str
    color: tuple[float, float, float]
    sensitive: bool = False


class SegmentTable:
    """Map from label value to segment metadata. Label 0 (air) is never a key."""

    def __init__(self, entries: dict[int, Segment] | None = None):
        self.entries: dict[int, Segment] = {}
        if entries:
            for label, seg in entries.items():
                self.add(label, seg)

    def add(self, label: int, seg: Segment) -> None:
        if label == 0:
            raise ContractViolation("label 0 is reserved for empty space")
        names = {s.name for s in self.entries.values()}
        if seg.name in names and self.entries.get(label, None) != seg:
            raise ContractViolation(f"duplicate segment name {seg.name!r}")
        self.entries[label] = seg

    def __contains__(self, label: int) -> bool:
        return label in self.entries

    def __getitem__(self, label: int) -> Segment:
        return self.entries[label]

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, SegmentTable) and self.entries == other.entries

    def labels(self) -> list[int]:
        return sorted(self.entries)

    def color_of(self, label: int) -> tuple[float, float, float]:
        seg = self.entries.get(label)
        return seg.color if seg else (0.0, 0.0, 0.0)

    def sensitive_labels(self) -> set[int]:
        return {lb for lb, s in self.entries.items() if s.sensitive}


def _check_geometry(dims, spacing) -> None:
    if len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise ContractViolation(f"dims must be three integers >= 1, got {dims}")
    if len(spacing) != 3 or any(not (s > 0) for s in spacing):
        raise ContractViolation(f"spacing must be three positive reals, got {spacing}")


@dataclass
class LabeledVolume:
    """Dense grid of small-integer segment labels. Index order is (i, j, k) = (x, y, z).

    ``labels`` is a uint16 array of shape ``dims``; only the session module may
    mutate it, under an exclusive-writer contract.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    labels: np.ndarray
    segment_table: SegmentTable = field(default_factory=SegmentTable)

    def __post_init__(self):
        _check_geometry(self.dims, self.spacing)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.labels.shape != tuple(self.dims):
            if self.labels.size == int(np.prod(self.dims)):
                self.labels = self.labels.reshape(self.dims)
            else:
                raise ContractViolation(
                    f"label array size {self.labels.size} != {np.prod(self.dims)}"
                )
        present = set(np.unique(self.labels).tolist()) - {0}
        missing = present - set(self.segment_table.entries)
        if missing:
            raise ContractViolation(f"labels {sorted(missing)} absent from segment table")

    def copy(self) -> "LabeledVolume":
        return LabeledVolume(
            self.dims,
            self.spacing,
            self.origin,
            self.labels.copy(),
            SegmentTable(dict(self.segment_table.entries)),
        )

    @property
    def voxel_volume_mm3(self) -> float:
        return float(self.spacing[0] * self.spacing[1] * self.spacing[2])

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.labels))


@dataclass
class IntensityVolume:
    """Dense grid of normalized densities in [0, 1] with an iso threshold."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    values: np.ndarray
    iso_value: float = 0.5

    def __post_init__(self):
        _check_geometry(self.dims, self.spacing)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != tuple(self.dims):
            if self.values.size == int(np.prod(self.dims)):
                self.values = self.values.reshape(self.dims)
            else:
                raise ContractViolation(
                    f"value array size {self.values.size} != {np.prod(self.dims)}"
                )
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("intensity values must be finite")
        if not (0.0 < self.iso_value < 1.0):
            raise ContractViolation(f"iso_value must lie in (0,1), got {self.iso_value}")


def world_to_voxel(vol, p) -> np.ndarray:
    """Continuous voxel coordinates of world point ``p`` (mm). Inverse of voxel_to_world."""
    return (np.asarray(p, dtype=np.float64) - np.asarray(vol.origin)) / np.asarray(vol.spacing)


def voxel_to_world(vol, idx) -> np.ndarray:
    """World position (mm) of the center of voxel ``idx``."""
    return np.asarray(vol.origin) + np.asarray(idx, dtype=np.float64) * np.asarray(vol.spacing)


def in_bounds(vol, idx) -> bool:
    i, j, k = idx
    cx, cy, cz = vol.dims
    return 0 <= i < cx and 0 <= j < cy and 0 <= k < cz


def grid_digest(vol: LabeledVolume) -> int:
    """Deterministic 64-bit content hash over dims, spacing and the label grid.

    CRC32 of the canonical little-endian serialization in the high word,
    Adler-32 in the low word. Both are cheap at C speed here and small enough
    to reimplement in the browser mirror for consistency checks.
    """
    import zlib

    canon = b"VOLDIG1"
    canon += np.asarray(vol.dims, dtype="<u4").tobytes()
    canon += np.asarray(vol.spacing, dtype="<f8").tobytes()
    canon += np.ascontiguousarray(vol.labels, dtype="<u2").tobytes()
    return (zlib.crc32(canon) << 32) | zlib.adler32(canon)
