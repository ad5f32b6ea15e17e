/**
 * Client-side mirror of the server's label grid.
 *
 * Built once from the handshake (Hello + VolumeSnapshot chunks), then kept in
 * sync by applying each StateFrame's removal delta. The mirror never carves on
 * its own; all mutation flows from the server. Wherever a StateFrame carries a
 * digest, the locally recomputed digest must match it.
 */

import { gridDigest } from "./digest.js";
import type { Hello, Segment, StateFrame, Vec3, VolumeSnapshot } from "./protocol.js";
import { ProtocolError } from "./protocol.js";

async function inflateRaw(blob: Uint8Array): Promise<Uint8Array> {
  const stream = new Blob([blob as BlobPart]).stream()
    .pipeThrough(new DecompressionStream("deflate-raw"));
  const buf = await new Response(stream).arrayBuffer();
  return new Uint8Array(buf);
}

export class SequenceGapError extends Error {}

export class MirrorVolume {
  readonly dims: Vec3;
  readonly spacing: Vec3;
  readonly origin: Vec3;
  readonly segments: Map<number, Segment>;
  /** u16 labels, C order: index = (i * dims[1] + j) * dims[2] + k */
  readonly labels: Uint16Array;
  /** seq of the last applied StateFrame, -1 before the first */
  lastSeq = -1;
  removedCount = 0;

  constructor(hello: Hello, labels: Uint16Array) {
    this.dims = hello.dims;
    this.spacing = hello.spacing;
    this.origin = hello.origin;
    this.segments = new Map(hello.segments.map((s) => [s.label, s]));
    const n = hello.dims[0] * hello.dims[1] * hello.dims[2];
    if (labels.length !== n) {
      throw new ProtocolError(`snapshot holds ${labels.length} voxels, dims imply ${n}`);
    }
    this.labels = labels;
  }

  /** Assemble the mirror from the handshake messages. */
  static async fromSnapshot(hello: Hello, chunks: VolumeSnapshot[]): Promise<MirrorVolume> {
    if (chunks.length === 0) throw new ProtocolError("no snapshot chunks received");
    if (chunks.length !== chunks[0].chunkTotal) {
      throw new ProtocolError(`expected ${chunks[0].chunkTotal} chunks, got ${chunks.length}`);
    }
    const ordered = [...chunks].sort((a, b) => a.chunkIndex - b.chunkIndex);
    let total = 0;
    for (const c of ordered) total += c.data.length;
    if (total !== chunks[0].compressedTotal) {
      throw new ProtocolError("snapshot blob length mismatch");
    }
    const blob = new Uint8Array(total);
    let off = 0;
    for (const c of ordered) {
      blob.set(c.data, off);
      off += c.data.length;
    }
    const raw = await inflateRaw(blob);
    const labels = new Uint16Array(raw.length / 2);
    const view = new DataView(raw.buffer, raw.byteOffset, raw.byteLength);
    for (let i = 0; i < labels.length; i++) labels[i] = view.getUint16(2 * i, true);
    return new MirrorVolume(hello, labels);
  }

  voxelIndex(i: number, j: number, k: number): number {
    return (i * this.dims[1] + j) * this.dims[2] + k;
  }

  labelAt(i: number, j: number, k: number): number {
    return this.labels[this.voxelIndex(i, j, k)];
  }

  /**
   * Apply one StateFrame's removal delta. Frames must arrive in sequence;
   * a gap means missed deltas and the mirror can no longer be trusted — the
   * caller should reconnect for a fresh snapshot.
   */
  applyState(frame: StateFrame): void {
    if (this.lastSeq >= 0 && frame.seq !== this.lastSeq + 1) {
      throw new SequenceGapError(
        `state seq ${frame.seq} after ${this.lastSeq}; resnapshot required`);
    }
    for (const [i, j, k] of frame.removed) {
      this.labels[this.voxelIndex(i, j, k)] = 0;
    }
    this.removedCount += frame.removed.length;
    this.lastSeq = frame.seq;
    if (frame.digest !== null) {
      const local = this.digest();
      if (local !== frame.digest) {
        throw new SequenceGapError(
          `mirror digest ${local.toString(16)} != server ${frame.digest.toString(16)}`);
      }
    }
  }

  digest(): bigint {
    return gridDigest(this.dims, this.spacing, this.labels);
  }
}
