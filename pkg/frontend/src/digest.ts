/**
 * 64-bit grid digest matching the server: crc32 of the canonical
 * serialization in the high word, adler32 in the low word.
 *
 *     canon = "VOLDIG1" + dims (3 x u32le) + spacing (3 x f8le)
 *           + labels (u16le, C order)
 */

import type { Vec3 } from "./protocol.js";

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = (c & 1) !== 0 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array, seed = 0): number {
  let c = (seed ^ 0xffffffff) >>> 0;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

const ADLER_MOD = 65521;

export function adler32(data: Uint8Array, seed = 1): number {
  let a = seed & 0xffff;
  let b = (seed >>> 16) & 0xffff;
  let i = 0;
  while (i < data.length) {
    // 5552 is the largest block that cannot overflow 32-bit sums
    const end = Math.min(i + 5552, data.length);
    for (; i < end; i++) {
      a += data[i];
      b += a;
    }
    a %= ADLER_MOD;
    b %= ADLER_MOD;
  }
  return ((b << 16) | a) >>> 0;
}

/** Canonical digest input for a labeled grid. */
export function canonicalBytes(dims: Vec3, spacing: Vec3, labels: Uint16Array): Uint8Array {
  const head = new Uint8Array(7 + 12 + 24);
  head.set(new TextEncoder().encode("VOLDIG1"), 0);
  const view = new DataView(head.buffer);
  for (let i = 0; i < 3; i++) view.setUint32(7 + 4 * i, dims[i], true);
  for (let i = 0; i < 3; i++) view.setFloat64(19 + 8 * i, spacing[i], true);
  const body = new Uint8Array(labels.length * 2);
  const bodyView = new DataView(body.buffer);
  for (let i = 0; i < labels.length; i++) bodyView.setUint16(2 * i, labels[i], true);
  const out = new Uint8Array(head.length + body.length);
  out.set(head);
  out.set(body, head.length);
  return out;
}

export function gridDigest(dims: Vec3, spacing: Vec3, labels: Uint16Array): bigint {
  const canon = canonicalBytes(dims, spacing, labels);
  return (BigInt(crc32(canon)) << 32n) | BigInt(adler32(canon));
}
