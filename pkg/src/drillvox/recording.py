"""FVR1 batch-split recording container.

Layout (little-endian throughout; full byte-level description in
docs/formats.md):

    magic "FVR1" | u16 schema | u32 batch_index | u32 meta_len | meta JSON
    u8 group_count
    per group: u8 id | u32 records | u32 comp_len | u32 crc32(comp) | comp
    footer: u32 crc32 of everything above | magic "1RVF"

Group payloads are column-major (all seq values, then all t values, then the
payload columns); each column is byte-shuffled (byte-plane transposed, as in
the HDF5 shuffle filter) and the concatenation is DEFLATE-compressed
(RFC 1951, raw). Column layout plus shuffling makes redundant streams
compress far better than record-interleaved bytes.

A `manifest.json` ties the batches together with per-file CRCs.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    CorruptionError,
    IncompleteRecordingError,
    OrderingError,
    ParseError,
    StateError,
    WrongAnatomyError,
)
from .events import BurrChange, DepthFrame, Event, ForceSample, Kinematics, VoxelRemoved
from .volume import LabeledVolume, grid_digest

__all__ = [
    "RecordingMeta",
    "Recorder",
    "open_recording",
    "read_recording",
    "iter_events",
    "replay_to_grid",
    "naive_log_size",
    "export_hdf5",
]

SCHEMA_VERSION = 1
MAGIC = b"FVR1"
END_MAGIC = b"1RVF"
MANIFEST_NAME = "manifest.json"

GROUP_VOXELS = 1
GROUP_FORCE = 2
GROUP_BURR = 3
GROUP_KINEMATICS = 4
GROUP_DEPTH = 5
GROUP_GAZE = 6          # reserved; never written

GROUP_NAMES = {
    GROUP_VOXELS: "voxels_removed",
    GROUP_FORCE: "force_feedback",
    GROUP_BURR: "burr_change",
    GROUP_KINEMATICS: "kinematics",
    GROUP_DEPTH: "depth_frames",
}

# (field name, numpy dtype, columns); 'seq' and 't' lead every group
_GROUP_FIELDS = {
    GROUP_VOXELS: [("i", "<u2", 1), ("j", "<u2", 1), ("k", "<u2", 1),
                   ("label", "<u2", 1), ("color", "<f4", 3)],
    GROUP_FORCE: [("force", "<f4", 3)],
    GROUP_BURR: [("radius_mm", "<f4", 1), ("tip", "<u1", 1)],
    GROUP_KINEMATICS: [("drill_pose", "<f4", 7), ("camera_pose", "<f4", 7)],
    GROUP_DEPTH: [("map_ref", "<u4", 1)],
}

# naive fixed-width widths (t f8 + payload, no seq) for the compression baseline
NAIVE_WIDTHS = {GROUP_VOXELS: 28, GROUP_FORCE: 20, GROUP_BURR: 13,
                GROUP_KINEMATICS: 64, GROUP_DEPTH: 12}

_TIPS = ("cutting", "diamond")


@dataclass
class RecordingMeta:
    anatomy_digest: int
    participant_id: str = "anonymous"
    config: dict = field(default_factory=dict)
    start_wallclock: float = 0.0
    tick_rate_hz: float = 1000.0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "anatomy_digest": self.anatomy_digest,
            "participant_id": self.participant_id,
            "config": self.config,
            "start_wallclock": self.start_wallclock,
            "tick_rate_hz": self.tick_rate_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecordingMeta":
        if "schema_version" not in d:
            raise ParseError("recording meta lacks schema_version")
        return cls(
            anatomy_digest=int(d["anatomy_digest"]),
            participant_id=d.get("participant_id", "anonymous"),
            config=d.get("config", {}),
            start_wallclock=float(d.get("start_wallclock", 0.0)),
            tick_rate_hz=float(d.get("tick_rate_hz", 1000.0)),
            schema_version=int(d["schema_version"]),
        )


def _group_of(ev: Event) -> int:
    if isinstance(ev, VoxelRemoved):
        return GROUP_VOXELS
    if isinstance(ev, ForceSample):
        return GROUP_FORCE
    if isinstance(ev, BurrChange):
        return GROUP_BURR
    if isinstance(ev, Kinematics):
        return GROUP_KINEMATICS
    if isinstance(ev, DepthFrame):
        return GROUP_DEPTH
    raise TypeError(f"not an event: {ev!r}")


def _shuffle(arr: np.ndarray) -> bytes:
    """Byte-plane transpose: all first bytes, then all second bytes, ..."""
    flat = np.ascontiguousarray(arr).reshape(-1)
    return flat.view(np.uint8).reshape(-1, flat.dtype.itemsize).T.tobytes()


def _unshuffle(buf: bytes, dtype, count: int) -> np.ndarray:
    dt = np.dtype(dtype)
    planes = np.frombuffer(buf, dtype=np.uint8).reshape(dt.itemsize, count)
    return np.ascontiguousarray(planes.T).reshape(-1).view(dt)


def _encode_group(gid: int, rows: list[tuple[int, Event]]) -> bytes:
    cols = [_shuffle(np.array([seq for seq, _ in rows], dtype="<u4")),
            _shuffle(np.array([ev.t for _, ev in rows], dtype="<f8"))]
    events = [ev for _, ev in rows]
    if gid == GROUP_VOXELS:
        cols.append(_shuffle(np.array([e.index[0] for e in events], dtype="<u2")))
        cols.append(_shuffle(np.array([e.index[1] for e in events], dtype="<u2")))
        cols.append(_shuffle(np.array([e.index[2] for e in events], dtype="<u2")))
        cols.append(_shuffle(np.array([e.label for e in events], dtype="<u2")))
        cols.append(_shuffle(np.array([e.color for e in events], dtype="<f4")))
    elif gid == GROUP_FORCE:
        cols.append(_shuffle(np.array([e.force for e in events], dtype="<f4")))
    elif gid == GROUP_BURR:
        cols.append(_shuffle(np.array([e.radius_mm for e in events], dtype="<f4")))
        cols.append(_shuffle(np.array([_TIPS.index(e.tip) for e in events], dtype="<u1")))
    elif gid == GROUP_KINEMATICS:
        cols.append(_shuffle(np.array([e.drill_pose for e in events], dtype="<f4")))
        cols.append(_shuffle(np.array([e.camera_pose for e in events], dtype="<f4")))
    elif gid == GROUP_DEPTH:
        cols.append(_shuffle(np.array([e.map_ref for e in events], dtype="<u4")))
    raw = b"".join(cols)
    comp = zlib.compressobj(level=6, wbits=-15)
    return comp.compress(raw) + comp.flush()


def _decode_group(gid: int, n: int, comp_bytes: bytes) -> list[tuple[int, Event]]:
    raw = zlib.decompressobj(wbits=-15).decompress(comp_bytes)
    off = 0

    def take(dtype, count):
        nonlocal off
        nbytes = np.dtype(dtype).itemsize * count
        arr = _unshuffle(raw[off:off + nbytes], dtype, count)
        off += nbytes
        return arr

    seq = take("<u4", n)
    t = take("<f8", n)
    out: list[tuple[int, Event]] = []
    if gid == GROUP_VOXELS:
        i = take("<u2", n); j = take("<u2", n); k = take("<u2", n)
        label = take("<u2", n); color = take("<f4", 3 * n).reshape(n, 3)
        for x in range(n):
            out.append((int(seq[x]), VoxelRemoved(
                float(t[x]), (int(i[x]), int(j[x]), int(k[x])), int(label[x]),
                tuple(float(c) for c in color[x]))))
    elif gid == GROUP_FORCE:
        force = take("<f4", 3 * n).reshape(n, 3)
        for x in range(n):
            out.append((int(seq[x]), ForceSample(float(t[x]),
                                                 tuple(float(c) for c in force[x]))))
    elif gid == GROUP_BURR:
        radius = take("<f4", n); tip = take("<u1", n)
        for x in range(n):
            out.append((int(seq[x]), BurrChange(float(t[x]), float(radius[x]),
                                                _TIPS[int(tip[x])])))
    elif gid == GROUP_KINEMATICS:
        drill = take("<f4", 7 * n).reshape(n, 7)
        cam = take("<f4", 7 * n).reshape(n, 7)
        for x in range(n):
            out.append((int(seq[x]), Kinematics(
                float(t[x]), tuple(float(c) for c in drill[x]),
                tuple(float(c) for c in cam[x]))))
    elif gid == GROUP_DEPTH:
        ref = take("<u4", n)
        for x in range(n):
            out.append((int(seq[x]), DepthFrame(float(t[x]), int(ref[x]))))
    else:
        raise CorruptionError(f"unknown group id {gid}")
    return out


def _write_batch(path: Path, meta_json: bytes, batch_index: int,
                 rows: list[tuple[int, Event]]) -> dict:
    groups: dict[int, list[tuple[int, Event]]] = {}
    for seq, ev in rows:
        groups.setdefault(_group_of(ev), []).append((seq, ev))

    body = bytearray()
    body += MAGIC
    body += struct.pack("<HII", SCHEMA_VERSION, batch_index, len(meta_json))
    body += meta_json
    body += struct.pack("<B", len(groups))
    for gid in sorted(groups):
        comp = _encode_group(gid, groups[gid])
        body += struct.pack("<BIII", gid, len(groups[gid]), len(comp), zlib.crc32(comp))
        body += comp
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    body += END_MAGIC
    path.write_bytes(bytes(body))
    ts = [ev.t for _, ev in rows]
    return {
        "file": path.name,
        "events": len(rows),
        "t_min": min(ts),
        "t_max": max(ts),
        "crc32": zlib.crc32(bytes(body)),
    }


def _read_batch(path: Path, expected_crc: int | None = None) -> tuple[dict, list[Event]]:
    if not path.exists():
        raise IncompleteRecordingError(f"batch file {path.name} is missing")
    data = path.read_bytes()
    if expected_crc is not None and zlib.crc32(data) != expected_crc:
        raise CorruptionError(f"checksum mismatch in {path.name}")
    if len(data) < 16 or data[:4] != MAGIC or data[-4:] != END_MAGIC:
        raise CorruptionError(f"{path.name} is not an FVR1 batch")
    stored_crc = struct.unpack("<I", data[-8:-4])[0]
    if zlib.crc32(data[:-8]) != stored_crc:
        raise CorruptionError(f"checksum mismatch in {path.name}")
    off = 4
    schema, batch_index, meta_len = struct.unpack_from("<HII", data, off)
    off += 10
    if schema != SCHEMA_VERSION:
        raise ParseError(f"unsupported recording schema {schema}")
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (group_count,) = struct.unpack_from("<B", data, off)
    off += 1
    rows: list[tuple[int, Event]] = []
    for _ in range(group_count):
        gid, n, comp_len, comp_crc = struct.unpack_from("<BIII", data, off)
        off += 13
        comp = data[off:off + comp_len]
        off += comp_len
        if zlib.crc32(comp) != comp_crc:
            raise CorruptionError(f"group {gid} checksum mismatch in {path.name}")
        rows.extend(_decode_group(gid, n, comp))
    rows.sort(key=lambda r: r[0])
    return meta, [ev for _, ev in rows]


class Recorder:
    """Append-only event sink, flushing a new batch file every batch_size events."""

    def __init__(self, directory: str | os.PathLike, meta: RecordingMeta, batch_size: int):
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        probe = self.dir / ".writable"
        try:
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise OSError(f"recording directory not writable: {exc}") from exc
        self.meta = meta
        self.batch_size = batch_size
        self._meta_json = json.dumps(meta.to_dict(), sort_keys=True).encode("utf-8")
        self._buffer: list[tuple[int, Event]] = []
        self._batches: list[dict] = []
        self._seq = 0
        self._last_t = -np.inf
        self._closed = False

    @property
    def event_count(self) -> int:
        return self._seq

    def append(self, ev: Event) -> None:
        if self._closed:
            raise StateError("recorder is closed")
        if ev.t < self._last_t:
            raise OrderingError(f"event time {ev.t} precedes last appended {self._last_t}")
        self._last_t = ev.t
        self._buffer.append((self._seq, ev))
        self._seq += 1
        if len(self._buffer) >= self.batch_size:
            self._flush()

    def _flush(self) -> None:
        if not self._buffer:
            return
        idx = len(self._batches)
        path = self.dir / f"batch_{idx:03d}.fvr"
        self._batches.append(_write_batch(path, self._meta_json, idx, self._buffer))
        self._buffer = []

    def close(self) -> dict:
        """Flush the final batch and write the manifest; returns the manifest dict."""
        if self._closed:
            raise StateError("recorder already closed")
        self._flush()
        self._closed = True
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "meta": self.meta.to_dict(),
            "event_count": self._seq,
            "batches": self._batches,
        }
        (self.dir / MANIFEST_NAME).write_text(
            json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8")
        return manifest


def open_recording(directory, meta: RecordingMeta, batch_size: int) -> Recorder:
    return Recorder(directory, meta, batch_size)


def read_recording(directory) -> tuple[RecordingMeta, Iterator[Event]]:
    """Load the manifest, verify checksums lazily, and stream events in order.

    Batches are decoded one at a time; memory stays bounded by one batch.
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise IncompleteRecordingError(f"no {MANIFEST_NAME} in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    meta = RecordingMeta.from_dict(manifest["meta"])
    for entry in manifest["batches"]:
        if not (directory / entry["file"]).exists():
            raise IncompleteRecordingError(f"batch file {entry['file']} is missing")

    def gen() -> Iterator[Event]:
        for entry in manifest["batches"]:
            _, events = _read_batch(directory / entry["file"], entry["crc32"])
            if len(events) != entry["events"]:
                raise CorruptionError(
                    f"{entry['file']} holds {len(events)} events, manifest says {entry['events']}")
            yield from events

    return meta, gen()


def iter_events(directory) -> Iterator[Event]:
    return read_recording(directory)[1]


def replay_to_grid(vol: LabeledVolume, events: Iterable[Event],
                   expected_digest: int | None = None) -> LabeledVolume:
    """Apply VoxelRemoved events to a copy of ``vol`` and return the result."""
    if expected_digest is not None and grid_digest(vol) != expected_digest:
        raise WrongAnatomyError(
            f"volume digest {grid_digest(vol):#x} does not match recording "
            f"digest {expected_digest:#x}")
    out = vol.copy()
    for ev in events:
        if isinstance(ev, VoxelRemoved):
            out.labels[ev.index] = 0
    return out


def naive_log_size(events: Iterable[Event]) -> int:
    """Size of the hypothetical uncompressed fixed-width event log."""
    return sum(NAIVE_WIDTHS[_group_of(ev)] for ev in events)


def recording_size(directory) -> int:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    return sum((directory / e["file"]).stat().st_size for e in manifest["batches"])


def export_hdf5(directory, out_path) -> None:
    """Optional HDF5 export mirroring the recording's group structure."""
    import h5py

    meta, events = read_recording(directory)
    groups: dict[int, list[Event]] = {}
    for ev in events:
        groups.setdefault(_group_of(ev), []).append(ev)

    with h5py.File(out_path, "w") as f:
        md = f.create_group("metadata")
        for key, value in meta.to_dict().items():
            md.attrs[key] = json.dumps(value) if isinstance(value, dict) else value
        if GROUP_VOXELS in groups:
            evs = groups[GROUP_VOXELS]
            g = f.create_group("voxels_removed")
            g.create_dataset("time", data=[e.t for e in evs])
            g.create_dataset("index", data=[e.index for e in evs], dtype="u2")
            g.create_dataset("label", data=[e.label for e in evs], dtype="u2")
            g.create_dataset("color", data=[e.color for e in evs], dtype="f4")
        if GROUP_FORCE in groups:
            evs = groups[GROUP_FORCE]
            g = f.create_group("force_feedback")
            g.create_dataset("time", data=[e.t for e in evs])
            g.create_dataset("force", data=[e.force for e in evs], dtype="f4")
        if GROUP_BURR in groups:
            evs = groups[GROUP_BURR]
            g = f.create_group("burr_change")
            g.create_dataset("time", data=[e.t for e in evs])
            g.create_dataset("radius_mm", data=[e.radius_mm for e in evs], dtype="f4")
            g.create_dataset("tip", data=[e.tip.encode() for e in evs])
        if GROUP_KINEMATICS in groups:
            evs = groups[GROUP_KINEMATICS]
            g = f.create_group("kinematics")
            g.create_dataset("time", data=[e.t for e in evs])
            g.create_dataset("drill_pose", data=[e.drill_pose for e in evs], dtype="f4")
            g.create_dataset("camera_pose", data=[e.camera_pose for e in evs], dtype="f4")
