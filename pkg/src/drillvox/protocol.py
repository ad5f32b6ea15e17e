"""Length-prefixed binary wire protocol between session server and clients.

Frame layout (little-endian):

    u32 length   -- bytes after this field (tag + version + payload)
    u8  tag
    u8  version  -- PROTOCOL_VERSION
    payload

Payload layouts per message are documented in docs/formats.md and mirrored by
the browser client. ``decode(encode(m)) == m`` holds for every variant.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, UnsupportedFeatureError
from .volume import LabeledVolume, Segment, SegmentTable

__all__ = [
    "PROTOCOL_VERSION",
    "Hello", "VolumeSnapshot", "InputFrame", "StateFrame", "BurrList",
    "Ack", "ErrorMsg", "WireMessage",
    "encode", "decode", "FrameDecoder",
    "snapshot_chunks", "assemble_snapshot",
    "ERR_BUSY", "ERR_UNSUPPORTED", "ERR_SLOW_CONSUMER", "ERR_BAD_FRAME",
]

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024

TAG_HELLO = 1
TAG_SNAPSHOT = 2
TAG_INPUT = 3
TAG_STATE = 4
TAG_BURRLIST = 5
TAG_ACK = 6
TAG_ERROR = 7

ERR_BUSY = 1
ERR_UNSUPPORTED = 2
ERR_SLOW_CONSUMER = 3
ERR_BAD_FRAME = 4

_TIPS = ("cutting", "diamond")


@dataclass(frozen=True)
class Hello:
    digest: int
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    segments: tuple = ()   # (label, name, (r,g,b), sensitive) tuples

    @classmethod
    def for_volume(cls, vol: LabeledVolume, digest: int) -> "Hello":
        segs = tuple(
            (lb, vol.segment_table[lb].name, vol.segment_table[lb].color,
             vol.segment_table[lb].sensitive)
            for lb in vol.segment_table.labels())
        return cls(digest, tuple(vol.dims), tuple(float(s) for s in vol.spacing),
                   tuple(float(o) for o in vol.origin), segs)

    def segment_table(self) -> SegmentTable:
        t = SegmentTable()
        for label, name, color, sensitive in self.segments:
            t.add(label, Segment(name, tuple(color), sensitive))
        return t


@dataclass(frozen=True)
class VolumeSnapshot:
    chunk_index: int
    chunk_total: int
    compressed_total: int   # length of the whole compressed blob
    data: bytes             # this chunk's slice of the blob


@dataclass(frozen=True)
class InputFrame:
    seq: int
    tip_position: tuple[float, float, float]
    tip_orientation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    pedal: float = 0.0
    burr_id: int = 0
    camera_pose: tuple[float, ...] = (0.0,) * 3 + (1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class StateFrame:
    seq: int
    t: float
    drill_pose: tuple[float, ...]
    F_haptic: tuple[float, float, float]
    pitch: float
    warnings: tuple = ()            # (label, kind, name)
    removed: tuple = ()             # (i, j, k, label)
    digest: int | None = None       # present only on verification frames


@dataclass(frozen=True)
class BurrList:
    burrs: tuple = ()   # (id, radius_mm, tip, brr)


@dataclass(frozen=True)
class Ack:
    seq: int


@dataclass(frozen=True)
class ErrorMsg:
    code: int
    text: str = ""


WireMessage = Hello | VolumeSnapshot | InputFrame | StateFrame | BurrList | Ack | ErrorMsg


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 255:
        raw = raw[:255]
    return struct.pack("<B", len(raw)) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<B", buf, off)
    return buf[off + 1:off + 1 + n].decode("utf-8"), off + 1 + n


def _encode_payload(msg: WireMessage) -> tuple[int, bytes]:
    if isinstance(msg, Hello):
        out = struct.pack("<Q3I3d3d", msg.digest, *msg.dims, *msg.spacing, *msg.origin)
        out += struct.pack("<H", len(msg.segments))
        for label, name, color, sensitive in msg.segments:
            out += struct.pack("<H3fB", label, *color, 1 if sensitive else 0)
            out += _pack_str(name)
        return TAG_HELLO, out
    if isinstance(msg, VolumeSnapshot):
        return TAG_SNAPSHOT, struct.pack(
            "<HHI", msg.chunk_index, msg.chunk_total, msg.compressed_total) + msg.data
    if isinstance(msg, InputFrame):
        return TAG_INPUT, struct.pack(
            "<I3d4ddB7d", msg.seq, *msg.tip_position, *msg.tip_orientation,
            msg.pedal, msg.burr_id, *msg.camera_pose)
    if isinstance(msg, StateFrame):
        flags = 1 if msg.digest is not None else 0
        out = struct.pack("<Id7d3ddB", msg.seq, msg.t, *msg.drill_pose,
                          *msg.F_haptic, msg.pitch, flags)
        if msg.digest is not None:
            out += struct.pack("<Q", msg.digest)
        out += struct.pack("<H", len(msg.warnings))
        for label, kind, name in msg.warnings:
            out += struct.pack("<HB", label, 1 if kind == "removal" else 0)
            out += _pack_str(name)
        out += struct.pack("<I", len(msg.removed))
        if msg.removed:
            out += np.asarray(msg.removed, dtype="<u2").tobytes()
        return TAG_STATE, out
    if isinstance(msg, BurrList):
        out = struct.pack("<B", len(msg.burrs))
        for bid, radius, tip, brr in msg.burrs:
            out += struct.pack("<BfBf", bid, radius, _TIPS.index(tip), brr)
        return TAG_BURRLIST, out
    if isinstance(msg, Ack):
        return TAG_ACK, struct.pack("<I", msg.seq)
    if isinstance(msg, ErrorMsg):
        raw = msg.text.encode("utf-8")
        return TAG_ERROR, struct.pack("<HH", msg.code, len(raw)) + raw
    raise TypeError(f"not a wire message: {msg!r}")


def encode(msg: WireMessage) -> bytes:
    tag, payload = _encode_payload(msg)
    return struct.pack("<IBB", len(payload) + 2, tag, PROTOCOL_VERSION) + payload


def _decode_payload(tag: int, version: int, buf: bytes) -> WireMessage:
    if version != PROTOCOL_VERSION:
        raise UnsupportedFeatureError(f"unsupported protocol version {version}")
    if tag == TAG_HELLO:
        digest, cx, cy, cz, sx, sy, sz, ox, oy, oz = struct.unpack_from("<Q3I3d3d", buf, 0)
        off = 8 + 12 + 48
        (nseg,) = struct.unpack_from("<H", buf, off)
        off += 2
        segs = []
        for _ in range(nseg):
            label, r, g, b, sensitive = struct.unpack_from("<H3fB", buf, off)
            off += 15
            name, off = _unpack_str(buf, off)
            segs.append((label, name, (r, g, b), bool(sensitive)))
        return Hello(digest, (cx, cy, cz), (sx, sy, sz), (ox, oy, oz), tuple(segs))
    if tag == TAG_SNAPSHOT:
        ci, ct, total = struct.unpack_from("<HHI", buf, 0)
        return VolumeSnapshot(ci, ct, total, buf[8:])
    if tag == TAG_INPUT:
        vals = struct.unpack_from("<I3d4ddB7d", buf, 0)
        return InputFrame(vals[0], vals[1:4], vals[4:8], vals[8], vals[9], vals[10:17])
    if tag == TAG_STATE:
        vals = struct.unpack_from("<Id7d3ddB", buf, 0)
        seq, t = vals[0], vals[1]
        drill_pose, F, pitch, flags = vals[2:9], vals[9:12], vals[12], vals[13]
        off = struct.calcsize("<Id7d3ddB")
        digest = None
        if flags & 1:
            (digest,) = struct.unpack_from("<Q", buf, off)
            off += 8
        (nwarn,) = struct.unpack_from("<H", buf, off)
        off += 2
        warnings = []
        for _ in range(nwarn):
            label, kind = struct.unpack_from("<HB", buf, off)
            off += 3
            name, off = _unpack_str(buf, off)
            warnings.append((label, "removal" if kind else "contact", name))
        (nrem,) = struct.unpack_from("<I", buf, off)
        off += 4
        removed = tuple(
            tuple(int(v) for v in row)
            for row in np.frombuffer(buf, dtype="<u2", count=4 * nrem,
                                     offset=off).reshape(nrem, 4))
        return StateFrame(seq, t, drill_pose, F, pitch, tuple(warnings), removed, digest)
    if tag == TAG_BURRLIST:
        (n,) = struct.unpack_from("<B", buf, 0)
        off = 1
        burrs = []
        for _ in range(n):
            bid, radius, tip, brr = struct.unpack_from("<BfBf", buf, off)
            off += 10
            burrs.append((bid, radius, _TIPS[tip], brr))
        return BurrList(tuple(burrs))
    if tag == TAG_ACK:
        return Ack(struct.unpack_from("<I", buf, 0)[0])
    if tag == TAG_ERROR:
        code, n = struct.unpack_from("<HH", buf, 0)
        return ErrorMsg(code, buf[4:4 + n].decode("utf-8"))
    raise UnsupportedFeatureError(f"unknown message tag {tag}")


def decode(frame: bytes) -> WireMessage:
    """Decode one complete frame (as produced by encode)."""
    msg, used = FrameDecoder().feed_once(frame)
    if msg is None:
        raise ParseError("incomplete frame")
    return msg


class FrameDecoder:
    """Incremental frame reassembly over a byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[WireMessage]:
        self._buf += data
        out = []
        while True:
            msg, used = self._try_decode()
            if msg is None:
                break
            del self._buf[:used]
            out.append(msg)
        return out

    def feed_once(self, data: bytes) -> tuple[WireMessage | None, int]:
        self._buf += data
        msg, used = self._try_decode()
        if msg is not None:
            del self._buf[:used]
        return msg, used

    def _try_decode(self) -> tuple[WireMessage | None, int]:
        if len(self._buf) < 4:
            return None, 0
        (length,) = struct.unpack_from("<I", self._buf, 0)
        if length < 2 or length > MAX_FRAME:
            raise ParseError(f"frame length {length} outside limits")
        if len(self._buf) < 4 + length:
            return None, 0
        tag, version = struct.unpack_from("<BB", self._buf, 4)
        payload = bytes(self._buf[6:4 + length])
        return _decode_payload(tag, version, payload), 4 + length


def snapshot_chunks(vol: LabeledVolume, chunk_size: int = 256 * 1024) -> list[VolumeSnapshot]:
    """Compress the label grid (raw DEFLATE of the u16le C-order flat array)
    and split it into snapshot chunks."""
    raw = np.ascontiguousarray(vol.labels, dtype="<u2").tobytes()
    comp = zlib.compressobj(level=6, wbits=-15)
    blob = comp.compress(raw) + comp.flush()
    chunks = [blob[i:i + chunk_size] for i in range(0, len(blob), chunk_size)] or [b""]
    total = len(chunks)
    return [VolumeSnapshot(i, total, len(blob), c) for i, c in enumerate(chunks)]


def assemble_snapshot(hello: Hello, chunks: list[VolumeSnapshot]) -> LabeledVolume:
    """Rebuild the mirrored volume from the handshake messages."""
    if not chunks:
        raise ParseError("no snapshot chunks received")
    if len(chunks) != chunks[0].chunk_total:
        raise ParseError(f"expected {chunks[0].chunk_total} chunks, got {len(chunks)}")
    blob = b"".join(c.data for c in sorted(chunks, key=lambda c: c.chunk_index))
    if len(blob) != chunks[0].compressed_total:
        raise ParseError("snapshot blob length mismatch")
    raw = zlib.decompressobj(wbits=-15).decompress(blob)
    labels = np.frombuffer(raw, dtype="<u2").reshape(hello.dims)
    return LabeledVolume(hello.dims, hello.spacing, hello.origin,
                         labels.copy(), hello.segment_table())
