"""Session event records.

Real-valued payload fields are quantized to float32 at construction so an
in-memory event compares equal to its stored-and-reloaded twin; timestamps
stay float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["VoxelRemoved", "ForceSample", "BurrChange", "Kinematics", "DepthFrame", "Event"]


def _f32(x: float) -> float:
    return float(np.float32(x))


def _f32v(xs) -> tuple[float, ...]:
    return tuple(float(v) for v in np.asarray(xs, dtype=np.float32))


@dataclass(frozen=True)
class VoxelRemoved:
    t: float
    index: tuple[int, int, int]
    label: int
    color: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(c) for c in self.index))
        object.__setattr__(self, "color", _f32v(self.color))


@dataclass(frozen=True)
class ForceSample:
    t: float
    force: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "force", _f32v(self.force))


@dataclass(frozen=True)
class BurrChange:
    t: float
    radius_mm: float
    tip: str  # "cutting" | "diamond"

    def __post_init__(self):
        object.__setattr__(self, "radius_mm", _f32(self.radius_mm))


@dataclass(frozen=True)
class Kinematics:
    t: float
    drill_pose: tuple[float, ...]   # px,py,pz,qw,qx,qy,qz
    camera_pose: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "drill_pose", _f32v(self.drill_pose))
        object.__setattr__(self, "camera_pose", _f32v(self.camera_pose))


@dataclass(frozen=True)
class DepthFrame:
    t: float
    map_ref: int   # index of a sidecar map file


Event = VoxelRemoved | ForceSample | BurrChange | Kinematics | DepthFrame
