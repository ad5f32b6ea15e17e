import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { MirrorVolume, SequenceGapError } from "../src/mirror.js";
import { decode, type Hello, type StateFrame, type VolumeSnapshot } from "../src/protocol.js";

const golden = JSON.parse(
  readFileSync(new URL("./fixtures/golden_frames.json", import.meta.url), "utf-8"),
);

function hexBytes(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  return out;
}

async function assembleFixture(): Promise<MirrorVolume> {
  const hello = decode(hexBytes(golden.assembly.hello)) as Hello;
  const chunks = golden.assembly.chunks.map(
    (h: string) => decode(hexBytes(h)) as VolumeSnapshot);
  return MirrorVolume.fromSnapshot(hello, chunks);
}

function stateFrame(seq: number, removed: [number, number, number, number][],
                    digest: bigint | null = null): StateFrame {
  return {
    kind: "state", seq, t: seq / 60, drillPose: [0, 0, 0, 1, 0, 0, 0],
    fHaptic: [0, 0, 0], pitch: 2, warnings: [], removed, digest,
  };
}

describe("snapshot assembly", () => {
  it("rebuilds the exact label grid from server chunks", async () => {
    const mirror = await assembleFixture();
    expect(golden.assembly.chunks.length).toBeGreaterThan(1);
    expect([...mirror.labels]).toEqual(golden.assembly.labels);
  });

  it("local digest equals the server digest in the hello", async () => {
    const mirror = await assembleFixture();
    expect(`0x${mirror.digest().toString(16).padStart(16, "0")}`)
      .toBe(golden.assembly.digest);
  });

  it("tolerates chunk reordering", async () => {
    const hello = decode(hexBytes(golden.assembly.hello)) as Hello;
    const chunks = golden.assembly.chunks
      .map((h: string) => decode(hexBytes(h)) as VolumeSnapshot)
      .reverse();
    const mirror = await MirrorVolume.fromSnapshot(hello, chunks);
    expect([...mirror.labels]).toEqual(golden.assembly.labels);
  });

  it("rejects a missing chunk", async () => {
    const hello = decode(hexBytes(golden.assembly.hello)) as Hello;
    const chunks = golden.assembly.chunks
      .slice(1)
      .map((h: string) => decode(hexBytes(h)) as VolumeSnapshot);
    await expect(MirrorVolume.fromSnapshot(hello, chunks)).rejects.toThrow(/chunks/);
  });
});

describe("state application", () => {
  it("an empty delta leaves the mirror unchanged", async () => {
    const mirror = await assembleFixture();
    const before = mirror.digest();
    mirror.applyState(stateFrame(0, []));
    expect(mirror.digest()).toBe(before);
  });

  it("a removal zeroes exactly that voxel", async () => {
    const mirror = await assembleFixture();
    // find an occupied voxel in the fixture
    let target: [number, number, number] | null = null;
    outer: for (let i = 0; i < mirror.dims[0]; i++) {
      for (let j = 0; j < mirror.dims[1]; j++) {
        for (let k = 0; k < mirror.dims[2]; k++) {
          if (mirror.labelAt(i, j, k) !== 0) { target = [i, j, k]; break outer; }
        }
      }
    }
    const [i, j, k] = target!;
    const label = mirror.labelAt(i, j, k);
    const occupiedBefore = [...mirror.labels].filter((v) => v !== 0).length;
    mirror.applyState(stateFrame(0, [[i, j, k, label]]));
    expect(mirror.labelAt(i, j, k)).toBe(0);
    expect([...mirror.labels].filter((v) => v !== 0).length).toBe(occupiedBefore - 1);
  });

  it("accepts matching verification digests and rejects divergence", async () => {
    const mirror = await assembleFixture();
    mirror.applyState(stateFrame(0, [], mirror.digest()));
    expect(() => mirror.applyState(stateFrame(1, [], 0xdeadbeefn)))
      .toThrow(SequenceGapError);
  });

  it("flags a sequence gap for resnapshot", async () => {
    const mirror = await assembleFixture();
    mirror.applyState(stateFrame(0, []));
    expect(() => mirror.applyState(stateFrame(2, []))).toThrow(/resnapshot/);
  });
});
