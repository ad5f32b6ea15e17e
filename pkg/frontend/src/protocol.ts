/**
 * Length-prefixed binary wire protocol spoken by the session gateway.
 *
 * Frame layout (little-endian):
 *
 *     u32 length   -- bytes after this field (tag + version + payload)
 *     u8  tag
 *     u8  version  -- PROTOCOL_VERSION
 *     payload
 *
 * Byte layouts per message are specified in docs/formats.md; `decode(encode(m))`
 * round-trips every variant bit-exactly against the server implementation.
 */

export const PROTOCOL_VERSION = 1;
export const MAX_FRAME = 64 * 1024 * 1024;

export const TAG_HELLO = 1;
export const TAG_SNAPSHOT = 2;
export const TAG_INPUT = 3;
export const TAG_STATE = 4;
export const TAG_BURRLIST = 5;
export const TAG_ACK = 6;
export const TAG_ERROR = 7;

export const ERR_BUSY = 1;
export const ERR_UNSUPPORTED = 2;
export const ERR_SLOW_CONSUMER = 3;
export const ERR_BAD_FRAME = 4;

export type BurrTip = "cutting" | "diamond";
const TIPS: BurrTip[] = ["cutting", "diamond"];

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];
export type Pose = [number, number, number, number, number, number, number];

export interface Segment {
  label: number;
  name: string;
  color: [number, number, number];
  sensitive: boolean;
}

export interface Hello {
  kind: "hello";
  digest: bigint;
  dims: Vec3;
  spacing: Vec3;
  origin: Vec3;
  segments: Segment[];
}

export interface VolumeSnapshot {
  kind: "snapshot";
  chunkIndex: number;
  chunkTotal: number;
  compressedTotal: number;
  data: Uint8Array;
}

export interface InputFrame {
  kind: "input";
  seq: number;
  tipPosition: Vec3;
  tipOrientation: Quat;
  pedal: number;
  burrId: number;
  cameraPose: Pose;
}

export interface Warning {
  label: number;
  warnKind: "contact" | "removal";
  name: string;
}

export type Removal = [number, number, number, number]; // i, j, k, label

export interface StateFrame {
  kind: "state";
  seq: number;
  t: number;
  drillPose: Pose;
  fHaptic: Vec3;
  pitch: number;
  warnings: Warning[];
  removed: Removal[];
  digest: bigint | null;
}

export interface BurrInfo {
  id: number;
  radiusMm: number;
  tip: BurrTip;
  brr: number;
}

export interface BurrList {
  kind: "burrlist";
  burrs: BurrInfo[];
}

export interface Ack {
  kind: "ack";
  seq: number;
}

export interface ErrorMsg {
  kind: "error";
  code: number;
  text: string;
}

export type WireMessage =
  | Hello | VolumeSnapshot | InputFrame | StateFrame | BurrList | Ack | ErrorMsg;

export class ProtocolError extends Error {}

export const identityQuat: Quat = [1, 0, 0, 0];
export const identityPose: Pose = [0, 0, 0, 1, 0, 0, 0];

export function makeInputFrame(
  seq: number,
  tipPosition: Vec3,
  opts: Partial<Omit<InputFrame, "kind" | "seq" | "tipPosition">> = {},
): InputFrame {
  return {
    kind: "input",
    seq,
    tipPosition,
    tipOrientation: opts.tipOrientation ?? [...identityQuat],
    pedal: opts.pedal ?? 0,
    burrId: opts.burrId ?? 0,
    cameraPose: opts.cameraPose ?? [...identityPose],
  };
}

// ---------------------------------------------------------------------------

const textEncoder = new TextEncoder();
const textDecoder = new TextDecoder();

class Writer {
  private buf = new Uint8Array(256);
  private view = new DataView(this.buf.buffer);
  private len = 0;

  private grow(extra: number): void {
    if (this.len + extra <= this.buf.length) return;
    let size = this.buf.length * 2;
    while (size < this.len + extra) size *= 2;
    const next = new Uint8Array(size);
    next.set(this.buf.subarray(0, this.len));
    this.buf = next;
    this.view = new DataView(next.buffer);
  }

  u8(v: number) { this.grow(1); this.view.setUint8(this.len, v); this.len += 1; }
  u16(v: number) { this.grow(2); this.view.setUint16(this.len, v, true); this.len += 2; }
  u32(v: number) { this.grow(4); this.view.setUint32(this.len, v >>> 0, true); this.len += 4; }
  u64(v: bigint) { this.grow(8); this.view.setBigUint64(this.len, v, true); this.len += 8; }
  f4(v: number) { this.grow(4); this.view.setFloat32(this.len, v, true); this.len += 4; }
  f8(v: number) { this.grow(8); this.view.setFloat64(this.len, v, true); this.len += 8; }
  bytes(b: Uint8Array) { this.grow(b.length); this.buf.set(b, this.len); this.len += b.length; }

  /** u8 length-prefixed UTF-8 string, truncated at 255 bytes. */
  str(s: string) {
    let raw = textEncoder.encode(s);
    if (raw.length > 255) raw = raw.subarray(0, 255);
    this.u8(raw.length);
    this.bytes(raw);
  }

  take(): Uint8Array { return this.buf.slice(0, this.len); }
}

class Reader {
  private view: DataView;
  off = 0;

  constructor(private buf: Uint8Array) {
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }

  u8(): number { const v = this.view.getUint8(this.off); this.off += 1; return v; }
  u16(): number { const v = this.view.getUint16(this.off, true); this.off += 2; return v; }
  u32(): number { const v = this.view.getUint32(this.off, true); this.off += 4; return v; }
  u64(): bigint { const v = this.view.getBigUint64(this.off, true); this.off += 8; return v; }
  f4(): number { const v = this.view.getFloat32(this.off, true); this.off += 4; return v; }
  f8(): number { const v = this.view.getFloat64(this.off, true); this.off += 8; return v; }
  bytes(n: number): Uint8Array { const b = this.buf.slice(this.off, this.off + n); this.off += n; return b; }
  rest(): Uint8Array { return this.buf.slice(this.off); }

  str(): string {
    const n = this.u8();
    return textDecoder.decode(this.bytes(n));
  }
}

function encodePayload(msg: WireMessage, w: Writer): number {
  switch (msg.kind) {
    case "hello": {
      w.u64(msg.digest);
      for (const d of msg.dims) w.u32(d);
      for (const s of msg.spacing) w.f8(s);
      for (const o of msg.origin) w.f8(o);
      w.u16(msg.segments.length);
      for (const seg of msg.segments) {
        w.u16(seg.label);
        for (const c of seg.color) w.f4(c);
        w.u8(seg.sensitive ? 1 : 0);
        w.str(seg.name);
      }
      return TAG_HELLO;
    }
    case "snapshot":
      w.u16(msg.chunkIndex);
      w.u16(msg.chunkTotal);
      w.u32(msg.compressedTotal);
      w.bytes(msg.data);
      return TAG_SNAPSHOT;
    case "input": {
      w.u32(msg.seq);
      for (const v of msg.tipPosition) w.f8(v);
      for (const v of msg.tipOrientation) w.f8(v);
      w.f8(msg.pedal);
      w.u8(msg.burrId);
      for (const v of msg.cameraPose) w.f8(v);
      return TAG_INPUT;
    }
    case "state": {
      w.u32(msg.seq);
      w.f8(msg.t);
      for (const v of msg.drillPose) w.f8(v);
      for (const v of msg.fHaptic) w.f8(v);
      w.f8(msg.pitch);
      w.u8(msg.digest !== null ? 1 : 0);
      if (msg.digest !== null) w.u64(msg.digest);
      w.u16(msg.warnings.length);
      for (const warn of msg.warnings) {
        w.u16(warn.label);
        w.u8(warn.warnKind === "removal" ? 1 : 0);
        w.str(warn.name);
      }
      w.u32(msg.removed.length);
      for (const r of msg.removed) for (const v of r) w.u16(v);
      return TAG_STATE;
    }
    case "burrlist":
      w.u8(msg.burrs.length);
      for (const b of msg.burrs) {
        w.u8(b.id);
        w.f4(b.radiusMm);
        w.u8(TIPS.indexOf(b.tip));
        w.f4(b.brr);
      }
      return TAG_BURRLIST;
    case "ack":
      w.u32(msg.seq);
      return TAG_ACK;
    case "error": {
      const raw = textEncoder.encode(msg.text);
      w.u16(msg.code);
      w.u16(raw.length);
      w.bytes(raw);
      return TAG_ERROR;
    }
  }
}

export function encode(msg: WireMessage): Uint8Array {
  const body = new Writer();
  const tag = encodePayload(msg, body);
  const payload = body.take();
  const out = new Writer();
  out.u32(payload.length + 2);
  out.u8(tag);
  out.u8(PROTOCOL_VERSION);
  out.bytes(payload);
  return out.take();
}

function decodePayload(tag: number, version: number, buf: Uint8Array): WireMessage {
  if (version !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${version}`);
  }
  const r = new Reader(buf);
  switch (tag) {
    case TAG_HELLO: {
      const digest = r.u64();
      const dims: Vec3 = [r.u32(), r.u32(), r.u32()];
      const spacing: Vec3 = [r.f8(), r.f8(), r.f8()];
      const origin: Vec3 = [r.f8(), r.f8(), r.f8()];
      const nseg = r.u16();
      const segments: Segment[] = [];
      for (let i = 0; i < nseg; i++) {
        const label = r.u16();
        const color: [number, number, number] = [r.f4(), r.f4(), r.f4()];
        const sensitive = r.u8() !== 0;
        const name = r.str();
        segments.push({ label, name, color, sensitive });
      }
      return { kind: "hello", digest, dims, spacing, origin, segments };
    }
    case TAG_SNAPSHOT: {
      const chunkIndex = r.u16();
      const chunkTotal = r.u16();
      const compressedTotal = r.u32();
      return { kind: "snapshot", chunkIndex, chunkTotal, compressedTotal, data: r.rest() };
    }
    case TAG_INPUT: {
      const seq = r.u32();
      const tipPosition: Vec3 = [r.f8(), r.f8(), r.f8()];
      const tipOrientation: Quat = [r.f8(), r.f8(), r.f8(), r.f8()];
      const pedal = r.f8();
      const burrId = r.u8();
      const cameraPose = Array.from({ length: 7 }, () => r.f8()) as Pose;
      return { kind: "input", seq, tipPosition, tipOrientation, pedal, burrId, cameraPose };
    }
    case TAG_STATE: {
      const seq = r.u32();
      const t = r.f8();
      const drillPose = Array.from({ length: 7 }, () => r.f8()) as Pose;
      const fHaptic: Vec3 = [r.f8(), r.f8(), r.f8()];
      const pitch = r.f8();
      const flags = r.u8();
      const digest = (flags & 1) !== 0 ? r.u64() : null;
      const nwarn = r.u16();
      const warnings: Warning[] = [];
      for (let i = 0; i < nwarn; i++) {
        const label = r.u16();
        const warnKind = r.u8() !== 0 ? "removal" as const : "contact" as const;
        const name = r.str();
        warnings.push({ label, warnKind, name });
      }
      const nrem = r.u32();
      const removed: Removal[] = [];
      for (let i = 0; i < nrem; i++) {
        removed.push([r.u16(), r.u16(), r.u16(), r.u16()]);
      }
      return { kind: "state", seq, t, drillPose, fHaptic, pitch, warnings, removed, digest };
    }
    case TAG_BURRLIST: {
      const n = r.u8();
      const burrs: BurrInfo[] = [];
      for (let i = 0; i < n; i++) {
        const id = r.u8();
        const radiusMm = r.f4();
        const tip = TIPS[r.u8()];
        const brr = r.f4();
        burrs.push({ id, radiusMm, tip, brr });
      }
      return { kind: "burrlist", burrs };
    }
    case TAG_ACK:
      return { kind: "ack", seq: r.u32() };
    case TAG_ERROR: {
      const code = r.u16();
      const n = r.u16();
      return { kind: "error", code, text: textDecoder.decode(r.bytes(n)) };
    }
    default:
      throw new ProtocolError(`unknown message tag ${tag}`);
  }
}

/** Decode one complete frame (as produced by encode). */
export function decode(frame: Uint8Array): WireMessage {
  const dec = new FrameDecoder();
  const msgs = dec.feed(frame);
  if (msgs.length === 0) throw new ProtocolError("incomplete frame");
  return msgs[0];
}

/** Incremental frame reassembly over a byte stream. */
export class FrameDecoder {
  private buf = new Uint8Array(0);

  feed(data: Uint8Array): WireMessage[] {
    const next = new Uint8Array(this.buf.length + data.length);
    next.set(this.buf);
    next.set(data, this.buf.length);
    this.buf = next;
    const out: WireMessage[] = [];
    for (;;) {
      if (this.buf.length < 4) break;
      const view = new DataView(this.buf.buffer, this.buf.byteOffset);
      const length = view.getUint32(0, true);
      if (length < 2 || length > MAX_FRAME) {
        throw new ProtocolError(`frame length ${length} outside limits`);
      }
      if (this.buf.length < 4 + length) break;
      const tag = this.buf[4];
      const version = this.buf[5];
      const payload = this.buf.slice(6, 4 + length);
      this.buf = this.buf.slice(4 + length);
      out.push(decodePayload(tag, version, payload));
    }
    return out;
  }
}
