"""Iso-surface ray casting with interval bisection and kernel-smoothed normals.

Positions are normalized volume coordinates in [0,1]^3; voxel (i,j,k) is
centered at ((i+.5)/c_x, (j+.5)/c_y, (k+.5)/c_z). Sampling clamps at the
volume edge (texture-clamp semantics). Labeled volumes are sampled as
occupancy (label != 0 -> 1.0); the ray inside-predicate uses the nearest
voxel so material boundaries sit exactly on voxel faces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DegenerateNormalError
from .volume import IntensityVolume, LabeledVolume

__all__ = [
    "SmoothingKernel",
    "RaycastParams",
    "RayHit",
    "raycast_iso",
    "raw_gradient",
    "smoothed_normal",
    "render_ortho_maps",
    "gradient_eval_count",
    "reset_gradient_counter",
]

# instrumentation: number of gradient evaluations since the last reset
_gradient_evals = 0


def gradient_eval_count() -> int:
    return _gradient_evals


def reset_gradient_counter() -> None:
    global _gradient_evals
    _gradient_evals = 0


@dataclass(frozen=True)
class SmoothingKernel:
    """N^3 gradient-averaging kernel; N=1 degenerates to the raw gradient."""

    N: int = 3

    def __post_init__(self):
        if self.N < 1 or self.N % 2 == 0:
            raise ContractViolation(f"sample threshold must be an odd integer >= 1, got {self.N}")

    def delta_p(self) -> np.ndarray:
        return np.full(3, (self.N - 1) / 2.0)

    def phi(self, vol) -> np.ndarray:
        return 1.0 / np.asarray(vol.dims, dtype=np.float64)


@dataclass(frozen=True)
class RaycastParams:
    step: float | None = None      # normalized-space march step; default min(phi)/2
    bisect_iters: int = 8
    kernel: SmoothingKernel = field(default_factory=SmoothingKernel)


@dataclass
class RayHit:
    p_iso: np.ndarray             # normalized coords of the refined crossing
    t_hit: float                  # ray parameter in normalized space
    eta: np.ndarray               # smoothed unit normal
    voxel: tuple[int, int, int]   # inside voxel at the crossing
    degenerate_normal: bool = False


def _scalar_field(vol) -> np.ndarray:
    if isinstance(vol, LabeledVolume):
        return (vol.labels != 0).astype(np.float64)
    return vol.values


def _sample_trilinear(field_arr: np.ndarray, dims, pts: np.ndarray) -> np.ndarray:
    """Clamped trilinear samples at normalized points, shape (n, 3) -> (n,)."""
    dims = np.asarray(dims)
    q = pts * dims - 0.5
    i0 = np.floor(q).astype(np.int64)
    frac = q - i0
    i0c = np.clip(i0, 0, dims - 1)
    i1c = np.clip(i0 + 1, 0, dims - 1)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    x0, y0, z0 = i0c[:, 0], i0c[:, 1], i0c[:, 2]
    x1, y1, z1 = i1c[:, 0], i1c[:, 1], i1c[:, 2]
    c000 = field_arr[x0, y0, z0]
    c100 = field_arr[x1, y0, z0]
    c010 = field_arr[x0, y1, z0]
    c110 = field_arr[x1, y1, z0]
    c001 = field_arr[x0, y0, z1]
    c101 = field_arr[x1, y0, z1]
    c011 = field_arr[x0, y1, z1]
    c111 = field_arr[x1, y1, z1]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def _nearest_voxel(dims, pts: np.ndarray) -> np.ndarray:
    dims = np.asarray(dims)
    idx = np.floor(pts * dims).astype(np.int64)
    return np.clip(idx, 0, dims - 1)


def _inside_mask(vol, pts: np.ndarray) -> np.ndarray:
    if isinstance(vol, LabeledVolume):
        idx = _nearest_voxel(vol.dims, pts)
        return vol.labels[idx[:, 0], idx[:, 1], idx[:, 2]] != 0
    return _sample_trilinear(vol.values, vol.dims, pts) >= vol.iso_value


def _gradients_batch(vol, pts: np.ndarray) -> np.ndarray:
    """Central-difference gradients at normalized points; counts one eval each."""
    global _gradient_evals
    _gradient_evals += len(pts)
    field_arr = _scalar_field(vol)
    phi = 1.0 / np.asarray(vol.dims, dtype=np.float64)
    n = len(pts)
    probes = np.empty((6 * n, 3))
    for d in range(3):
        plus = pts.copy()
        plus[:, d] += phi[d]
        minus = pts.copy()
        minus[:, d] -= phi[d]
        probes[2 * d * n:(2 * d + 1) * n] = plus
        probes[(2 * d + 1) * n:(2 * d + 2) * n] = minus
    vals = _sample_trilinear(field_arr, vol.dims, probes)
    grad = np.empty((n, 3))
    for d in range(3):
        grad[:, d] = (vals[2 * d * n:(2 * d + 1) * n] - vals[(2 * d + 1) * n:(2 * d + 2) * n]) / 2.0
    return grad


def raw_gradient(vol, p) -> np.ndarray:
    """Central-difference gradient at one normalized point (clamped at edges)."""
    return _gradients_batch(vol, np.asarray(p, dtype=np.float64).reshape(1, 3))[0]


def smoothed_normal(vol, p_iso, kernel: SmoothingKernel = SmoothingKernel(),
                    fallback_dir=None) -> np.ndarray:
    """Average of N^3 central-difference gradients around p_iso, normalized.

    With a zero accumulated gradient the negated ``fallback_dir`` (typically
    the ray direction) is returned; without one the degenerate case raises.
    """
    eta, degenerate = _smoothed_normal_impl(vol, np.asarray(p_iso, dtype=np.float64),
                                            kernel, fallback_dir)
    if degenerate and fallback_dir is None:
        raise DegenerateNormalError(f"zero accumulated gradient at {p_iso}")
    return eta


def _smoothed_normal_impl(vol, p_iso, kernel, fallback_dir):
    n = kernel.N
    phi = kernel.phi(vol)
    dp = kernel.delta_p()
    offs = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n),
                                indexing="ij"), axis=-1).reshape(-1, 3)
    pts = p_iso + (offs - dp) * phi
    acc = _gradients_batch(vol, pts).sum(axis=0)
    norm = np.linalg.norm(acc)
    if norm < 1e-300:
        if fallback_dir is not None:
            fb = -np.asarray(fallback_dir, dtype=np.float64)
            return fb / np.linalg.norm(fb), True
        return np.zeros(3), True
    return acc / norm, False


def _clip_to_unit_cube(origin: np.ndarray, direction: np.ndarray) -> tuple[float, float] | None:
    """Entry/exit ray parameters of the unit cube, or None if it is missed."""
    t0, t1 = 0.0, math.inf
    for d in range(3):
        if abs(direction[d]) < 1e-15:
            if origin[d] < 0.0 or origin[d] > 1.0:
                return None
        else:
            ta = (0.0 - origin[d]) / direction[d]
            tb = (1.0 - origin[d]) / direction[d]
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
    if t0 > t1:
        return None
    return t0, t1


def raycast_iso(vol, origin, direction, params: RaycastParams = RaycastParams()) -> RayHit | None:
    """March a normalized-space ray to the first inside crossing, bisect, smooth.

    Returns None on a miss (ray leaves the unit cube without the inside
    predicate flipping).
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise ContractViolation("ray direction must be unit-norm")

    span = _clip_to_unit_cube(origin, direction)
    if span is None:
        return None
    t0, t1 = span
    phi = 1.0 / np.asarray(vol.dims, dtype=np.float64)
    step = params.step if params.step is not None else float(phi.min()) / 2.0
    if step <= 0:
        raise ContractViolation("march step must be positive")

    # march in chunks and stop at the first inside sample; most rays hit long
    # before the far side of the cube
    n_total = int(math.floor((t1 - t0) / step)) + 2
    chunk = 64
    hit_i = None
    base = 0
    while base < n_total:
        idx = np.arange(base, min(base + chunk, n_total))
        ts_c = t0 + idx * step
        pts = origin + ts_c[:, None] * direction
        inside = _inside_mask(vol, np.clip(pts, 0.0, 1.0))
        flips = np.nonzero(inside)[0]
        if len(flips):
            hit_i = base + int(flips[0])
            break
        base += chunk
    if hit_i is None:
        return None
    if hit_i == 0:
        t_out = t_in = t0
    else:
        t_out, t_in = t0 + (hit_i - 1) * step, t0 + hit_i * step

    for _ in range(params.bisect_iters):
        tm = 0.5 * (t_out + t_in)
        pm = np.clip(origin + tm * direction, 0.0, 1.0)
        if _inside_mask(vol, pm.reshape(1, 3))[0]:
            t_in = tm
        else:
            t_out = tm

    t_hit = 0.5 * (t_out + t_in)
    p_iso = np.clip(origin + t_hit * direction, 0.0, 1.0)
    p_in = np.clip(origin + t_in * direction, 0.0, 1.0)
    voxel = tuple(int(v) for v in _nearest_voxel(vol.dims, p_in.reshape(1, 3))[0])
    eta, degenerate = _smoothed_normal_impl(vol, p_iso, params.kernel, direction)
    return RayHit(p_iso, float(t_hit), eta, voxel, degenerate)


def render_ortho_maps(vol: LabeledVolume, camera: dict, res: tuple[int, int],
                      params: RaycastParams = RaycastParams()):
    """Orthographic depth / label / normal maps, one ray per pixel.

    ``camera`` keys: center (mm), view (unit), up, width_mm, height_mm.
    Depth is mm from the camera plane (inf on miss); labels are 0 on miss.
    """
    W, H = res
    if W < 1 or H < 1:
        raise ContractViolation("resolution must be at least 1x1")
    center = np.asarray(camera["center"], dtype=np.float64)
    view = np.asarray(camera["view"], dtype=np.float64)
    view = view / np.linalg.norm(view)
    up = np.asarray(camera["up"], dtype=np.float64)
    right = np.cross(view, up)
    if np.linalg.norm(right) < 1e-9:
        raise ContractViolation("camera up is parallel to the view direction")
    right /= np.linalg.norm(right)
    cam_up = np.cross(right, view)

    spacing = np.asarray(vol.spacing)
    dims = np.asarray(vol.dims)
    extent = spacing * dims

    def to_norm(p_world):
        return ((p_world - np.asarray(vol.origin)) / spacing + 0.5) / dims

    dir_n = (view / spacing) / dims
    scale = np.linalg.norm(dir_n)        # normalized-units per mm along the ray
    dir_n = dir_n / scale

    depth = np.full((H, W), np.inf)
    labels = np.zeros((H, W), dtype=np.uint16)
    normals = np.zeros((H, W, 3))
    for py in range(H):
        v = ((py + 0.5) / H - 0.5) * camera["height_mm"]
        for px in range(W):
            u = ((px + 0.5) / W - 0.5) * camera["width_mm"]
            o_world = center + u * right - v * cam_up
            hit = raycast_iso(vol, to_norm(o_world), dir_n, params)
            if hit is None:
                continue
            depth[py, px] = hit.t_hit / scale
            labels[py, px] = vol.labels[hit.voxel]
            normals[py, px] = hit.eta
    return depth, labels, normals
