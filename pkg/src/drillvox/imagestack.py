"""Export a labeled volume to a per-slice image stack, and re-import it.

Each z-slice k becomes one image of c_x by c_y pixels colored by segment color
(label 0 is black). A `stack.meta` sidecar (UTF-8 key=value lines, documented
in docs/formats.md) carries dims/spacing/origin and the segment table so the
stack is spatially self-describing. Round-trip identity holds for PNG only;
JPEG is lossy and rejected on import.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConflictError, ContractViolation, ParseError
from .volume import LabeledVolume, Segment, SegmentTable

__all__ = ["export_image_stack", "import_image_stack", "SIDECAR_NAME"]

SIDECAR_NAME = "stack.meta"
_PREFIX = "slice_"


def _quantized_color(color: tuple[float, float, float]) -> tuple[int, int, int]:
    return tuple(int(round(255 * min(max(c, 0.0), 1.0))) for c in color)


def export_image_stack(vol: LabeledVolume, out_dir: str | os.PathLike,
                       fmt: str = "png") -> int:
    """Write one image per z-slice plus the sidecar; returns the image count."""
    fmt = fmt.lower()
    if fmt not in ("png", "jpeg"):
        raise ContractViolation(f"unknown stack format {fmt!r} (use png or jpeg)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cx, cy, cz = vol.dims
    palette = {0: (0, 0, 0)}
    for label in vol.segment_table.labels():
        q = _quantized_color(vol.segment_table[label].color)
        if q in palette.values():
            raise ConflictError(
                f"segment colors collide after 8-bit quantization at label {label}; "
                "round-trippable export needs distinct colors"
            )
        palette[label] = q

    lut = np.zeros((max(palette) + 1, 3), dtype=np.uint8)
    for label, q in palette.items():
        lut[label] = q

    pad = max(4, len(str(cz - 1)))
    ext = "png" if fmt == "png" else "jpg"
    for k in range(cz):
        rgb = lut[vol.labels[:, :, k]]          # (cx, cy, 3)
        img = Image.fromarray(np.swapaxes(rgb, 0, 1), mode="RGB")  # rows = y
        img.save(out / f"{_PREFIX}{k:0{pad}d}.{ext}")

    with open(out / SIDECAR_NAME, "w", encoding="utf-8") as fh:
        fh.write("schema=drillvox-stack-1\n")
        fh.write(f"format={fmt}\n")
        fh.write(f"dims={cx} {cy} {cz}\n")
        fh.write(f"spacing={vol.spacing[0]!r} {vol.spacing[1]!r} {vol.spacing[2]!r}\n")
        fh.write(f"origin={vol.origin[0]!r} {vol.origin[1]!r} {vol.origin[2]!r}\n")
        fh.write(f"prefix={_PREFIX}\n")
        fh.write(f"pad={pad}\n")
        for label in vol.segment_table.labels():
            seg = vol.segment_table[label]
            fh.write(f"segment.{label}.name={seg.name}\n")
            fh.write(f"segment.{label}.color={seg.color[0]!r} {seg.color[1]!r} {seg.color[2]!r}\n")
            fh.write(f"segment.{label}.sensitive={int(seg.sensitive)}\n")
    return cz


def _read_sidecar(path: Path) -> dict[str, str]:
    if not path.exists():
        raise ParseError(f"sidecar {path} missing")
    fields: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"bad sidecar line: {line!r}")
        k, v = line.split("=", 1)
        fields[k] = v
    return fields


def import_image_stack(stack_dir: str | os.PathLike) -> LabeledVolume:
    """Rebuild a LabeledVolume from a PNG stack written by export_image_stack."""
    stack = Path(stack_dir)
    meta = _read_sidecar(stack / SIDECAR_NAME)
    if meta.get("schema") != "drillvox-stack-1":
        raise ParseError(f"unknown sidecar schema {meta.get('schema')!r}")
    if meta.get("format") != "png":
        raise ParseError("only png stacks are lossless; jpeg stacks cannot be re-imported")

    dims = tuple(int(x) for x in meta["dims"].split())
    spacing = tuple(float(x) for x in meta["spacing"].split())
    origin = tuple(float(x) for x in meta["origin"].split())
    prefix = meta.get("prefix", _PREFIX)
    pad = int(meta.get("pad", "4"))

    table = SegmentTable()
    color_to_label = {(0, 0, 0): 0}
    for key, value in meta.items():
        if key.startswith("segment.") and key.endswith(".name"):
            label = int(key.split(".")[1])
            color = tuple(float(c) for c in meta[f"segment.{label}.color"].split())
            sensitive = meta.get(f"segment.{label}.sensitive", "0") == "1"
            table.add(label, Segment(value, color, sensitive))
            color_to_label[_quantized_color(color)] = label

    cx, cy, cz = dims
    labels = np.zeros(dims, dtype=np.uint16)
    lookup = np.zeros(256 * 256 * 256, dtype=np.uint16)
    known = np.zeros(256 * 256 * 256, dtype=bool)
    for q, label in color_to_label.items():
        packed = (q[0] << 16) | (q[1] << 8) | q[2]
        lookup[packed] = label
        known[packed] = True
    for k in range(cz):
        path = stack / f"{prefix}{k:0{pad}d}.png"
        if not path.exists():
            raise ParseError(f"missing slice image {path.name}")
        rgb = np.asarray(Image.open(path).convert("RGB"))
        if rgb.shape[:2] != (cy, cx):
            raise ParseError(f"slice {path.name} is {rgb.shape[1]}x{rgb.shape[0]}, "
                             f"expected {cx}x{cy}")
        packed = (rgb[..., 0].astype(np.uint32) << 16) | \
                 (rgb[..., 1].astype(np.uint32) << 8) | rgb[..., 2]
        if not known[packed].all():
            raise ParseError(f"slice {path.name} holds colors absent from the sidecar")
        labels[:, :, k] = np.swapaxes(lookup[packed], 0, 1)
    return LabeledVolume(dims, spacing, origin, labels, table)
