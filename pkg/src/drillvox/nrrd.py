"""Minimal NRRD reader/writer covering 3D Slicer's default outputs.

Scope: 3D only, little-endian, raw or gzip encodings, element types
uint8/uint16/int16/float32. Segmented volumes use the incremental label-map
layout; one-hot multi-layer segmentations are rejected.
"""

from __future__ import annotations

import gzip
import math
import re

import numpy as np

from .errors import ConflictError, ParseError, TruncationError, UnsupportedFeatureError
from .volume import IntensityVolume, LabeledVolume, Segment, SegmentTable

__all__ = ["parse_nrrd", "parse_seg_metadata", "write_nrrd"]

_MAGIC_RE = re.compile(rb"^NRRD000[1-5]$")

_TYPE_ALIASES = {
    "uint8": "uint8", "uchar": "uint8", "unsigned char": "uint8",
    "uint16": "uint16", "ushort": "uint16", "unsigned short": "uint16",
    "int16": "int16", "short": "int16", "signed short": "int16",
    "float": "float32", "float32": "float32",
}
_DTYPES = {
    "uint8": np.dtype("<u1"),
    "uint16": np.dtype("<u2"),
    "int16": np.dtype("<i2"),
    "float32": np.dtype("<f4"),
}

_SEG_KEY_RE = re.compile(r"^Segment(\d+)_(\w+)$")


def _parse_vector(text: str, field: str) -> tuple[float, ...]:
    text = text.strip()
    if not (text.startswith("(") and text.endswith(")")):
        raise ParseError(f"malformed vector in field {field!r}: {text!r}")
    try:
        return tuple(float(x) for x in text[1:-1].split(","))
    except ValueError as exc:
        raise ParseError(f"non-numeric component in field {field!r}: {text!r}") from exc


def _split_header(data: bytes) -> tuple[dict[str, str], dict[str, str], int]:
    """Return (fields, key_values, payload offset)."""
    end = data.find(b"\n\n")
    sep_len = 2
    end_crlf = data.find(b"\r\n\r\n")
    if end_crlf != -1 and (end == -1 or end_crlf < end):
        end, sep_len = end_crlf, 4
    if end == -1:
        raise ParseError("missing blank-line header terminator")
    header = data[:end].decode("utf-8", errors="replace").splitlines()
    if not header or not _MAGIC_RE.match(header[0].strip().encode()):
        raise ParseError(f"bad magic line: {header[0]!r}" if header else "empty input")
    fields: dict[str, str] = {}
    key_values: dict[str, str] = {}
    for line in header[1:]:
        line = line.rstrip("\r")
        if not line or line.startswith("#"):
            continue
        if ":=" in line:
            k, v = line.split(":=", 1)
            key_values[k.strip()] = v.strip()
        elif ": " in line or line.endswith(":"):
            k, v = line.split(":", 1)
            fields[k.strip().lower()] = v.strip()
        else:
            raise ParseError(f"unparseable header line: {line!r}")
    return fields, key_values, end + sep_len


def parse_seg_metadata(header_fields: dict[str, str]) -> SegmentTable:
    """Build a SegmentTable from Segment<N>_* key-value pairs (contiguous N from 0)."""
    per_seg: dict[int, dict[str, str]] = {}
    for key, value in header_fields.items():
        m = _SEG_KEY_RE.match(key)
        if m:
            per_seg.setdefault(int(m.group(1)), {})[m.group(2)] = value

    table = SegmentTable()
    seen_labels: set[int] = set()
    for n in range(len(per_seg)):
        if n not in per_seg:
            raise ParseError(f"segment indices not contiguous: missing Segment{n}_*")
        props = per_seg[n]
        name = props.get("Name", f"segment_{n}")
        raw_label = props.get("LabelValue")
        if raw_label is None:
            raise ParseError(f"Segment{n}_LabelValue missing")
        try:
            label = int(raw_label)
        except ValueError as exc:
            raise ParseError(f"Segment{n}_LabelValue not numeric: {raw_label!r}") from exc
        if label in seen_labels:
            raise ConflictError(f"duplicate LabelValue {label} at Segment{n}")
        seen_labels.add(label)
        if "Color" in props:
            try:
                color = tuple(float(c) for c in props["Color"].split())
            except ValueError as exc:
                raise ParseError(f"Segment{n}_Color not numeric: {props['Color']!r}") from exc
            if len(color) != 3:
                raise ParseError(f"Segment{n}_Color needs three components")
        else:
            color = (0.8, 0.8, 0.7)
        sensitive = props.get("Sensitive", "").lower() in ("1", "true", "yes")
        table.add(label, Segment(name=name, color=color, sensitive=sensitive))
    return table


def parse_nrrd(data: bytes) -> IntensityVolume | LabeledVolume:
    """Parse an in-memory NRRD/seg.nrrd file.

    Integer-typed data accompanied by Segment0_* keys becomes a LabeledVolume;
    anything else becomes an IntensityVolume min-max normalized to [0, 1].
    """
    fields, key_values, offset = _split_header(data)

    if "dimension" not in fields:
        raise ParseError("missing field 'dimension'")
    if fields["dimension"].strip() != "3":
        if fields["dimension"].strip() == "4":
            raise UnsupportedFeatureError(
                "4D volumes (one-hot segment layers) are not supported; "
                "export an incremental label map instead"
            )
        raise ParseError(f"field 'dimension' must be 3, got {fields['dimension']!r}")

    type_name = _TYPE_ALIASES.get(fields.get("type", "").strip())
    if type_name is None:
        raise UnsupportedFeatureError(f"unsupported element type {fields.get('type')!r}")
    dtype = _DTYPES[type_name]

    encoding = fields.get("encoding", "raw").strip().lower()
    if encoding in ("gz",):
        encoding = "gzip"
    if encoding not in ("raw", "gzip"):
        raise UnsupportedFeatureError(f"unsupported encoding {encoding!r}")

    endian = fields.get("endian", "little").strip().lower()
    if dtype.itemsize > 1 and endian != "little":
        raise UnsupportedFeatureError(f"unsupported endianness {endian!r}")

    try:
        sizes = tuple(int(s) for s in fields["sizes"].split())
    except KeyError:
        raise ParseError("missing field 'sizes'") from None
    except ValueError as exc:
        raise ParseError(f"non-integer in field 'sizes': {fields['sizes']!r}") from exc
    if len(sizes) != 3 or any(s < 1 for s in sizes):
        raise ParseError(f"field 'sizes' must hold three positive integers, got {sizes}")

    if "space directions" in fields:
        vecs = re.findall(r"\([^)]*\)", fields["space directions"])
        if len(vecs) != 3:
            raise ParseError(
                f"field 'space directions' needs three vectors: {fields['space directions']!r}"
            )
        spacing = tuple(
            math.sqrt(sum(c * c for c in _parse_vector(v, "space directions")))
            for v in vecs
        )
    elif "spacings" in fields:
        try:
            spacing = tuple(float(s) for s in fields["spacings"].split())
        except ValueError as exc:
            raise ParseError(f"non-numeric in field 'spacings'") from exc
    else:
        spacing = (1.0, 1.0, 1.0)
    if any(not (s > 0) for s in spacing):
        raise ParseError(f"non-positive spacing derived from header: {spacing}")

    origin = (0.0, 0.0, 0.0)
    if "space origin" in fields:
        origin = _parse_vector(fields["space origin"], "space origin")
        if len(origin) != 3:
            raise ParseError("field 'space origin' needs three components")

    payload = data[offset:]
    if encoding == "gzip":
        try:
            payload = gzip.decompress(payload)
        except EOFError as exc:
            raise TruncationError(f"gzip payload is missing its tail: {exc}") from exc
        except OSError as exc:
            raise ParseError(f"gzip payload failed to decompress: {exc}") from exc
    expected = sizes[0] * sizes[1] * sizes[2] * dtype.itemsize
    if len(payload) < expected:
        raise TruncationError(
            f"payload holds {len(payload)} bytes, expected {expected} "
            f"({expected - len(payload)} missing)"
        )
    arr = np.frombuffer(payload[:expected], dtype=dtype)
    # NRRD stores the first ("sizes") axis fastest
    arr = arr.reshape((sizes[2], sizes[1], sizes[0])).transpose(2, 1, 0)

    has_segments = any(_SEG_KEY_RE.match(k) for k in key_values)
    is_integer = type_name in ("uint8", "uint16", "int16")
    if is_integer and has_segments:
        if np.any(arr.astype(np.int64) < 0):
            raise ParseError("negative label values in segmented volume")
        table = parse_seg_metadata(key_values)
        return LabeledVolume(sizes, spacing, origin, arr.astype(np.uint16), table)

    values = arr.astype(np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        values = (values - lo) / (hi - lo)
    else:
        values = np.zeros_like(values)
    iso = 0.5
    if "DrillvoxIsoValue" in key_values:
        try:
            iso = float(key_values["DrillvoxIsoValue"])
        except ValueError as exc:
            raise ParseError("DrillvoxIsoValue not numeric") from exc
    return IntensityVolume(sizes, spacing, origin, values, iso_value=iso)


def write_nrrd(vol: IntensityVolume | LabeledVolume, encoding: str = "gzip",
               dtype: str | None = None) -> bytes:
    """Serialize a volume to NRRD bytes readable by parse_nrrd (and 3D Slicer)."""
    if encoding not in ("raw", "gzip"):
        raise UnsupportedFeatureError(f"unsupported encoding {encoding!r}")

    labeled = isinstance(vol, LabeledVolume)
    if dtype is None:
        dtype = "uint16" if labeled else "float32"
    if dtype not in _DTYPES:
        raise UnsupportedFeatureError(f"unsupported element type {dtype!r}")

    if labeled:
        arr = vol.labels
    else:
        arr = vol.values
        if np.issubdtype(_DTYPES[dtype], np.integer):
            # quantize the normalized range over the full positive span
            top = float(np.iinfo(_DTYPES[dtype]).max)
            arr = np.round(np.clip(arr, 0.0, 1.0) * top)
    arr = np.ascontiguousarray(arr.transpose(2, 1, 0), dtype=_DTYPES[dtype])
    payload = arr.tobytes()
    if encoding == "gzip":
        payload = gzip.compress(payload, mtime=0)

    cx, cy, cz = vol.dims
    sx, sy, sz = vol.spacing
    ox, oy, oz = vol.origin
    lines = [
        "NRRD0005",
        "# drillvox volume export",
        f"type: {dtype}",
        "dimension: 3",
        "space: left-posterior-superior",
        f"sizes: {cx} {cy} {cz}",
        f"space directions: ({sx!r},0,0) (0,{sy!r},0) (0,0,{sz!r})",
        "kinds: domain domain domain",
        "endian: little",
        f"encoding: {encoding}",
        f"space origin: ({ox!r},{oy!r},{oz!r})",
    ]
    if not labeled:
        lines.append(f"DrillvoxIsoValue:={vol.iso_value!r}")
    if labeled:
        for n, label in enumerate(vol.segment_table.labels()):
            seg = vol.segment_table[label]
            lines.append(f"Segment{n}_Name:={seg.name}")
            lines.append(f"Segment{n}_LabelValue:={label}")
            lines.append(f"Segment{n}_Color:={seg.color[0]!r} {seg.color[1]!r} {seg.color[2]!r}")
            if seg.sensitive:
                lines.append(f"Segment{n}_Sensitive:=true")
    header = "\n".join(lines) + "\n\n"
    return header.encode("utf-8") + payload
