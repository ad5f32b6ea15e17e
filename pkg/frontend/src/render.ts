/**
 * Orthographic software renderer for the mirrored volume.
 *
 * Pure functions producing RGBA buffers: rays march along one grid axis to
 * the first occupied voxel, which is shaded with its segment color and a
 * depth-based diffuse falloff. The drill is overlaid as a disc of the current
 * burr radius. DOM-free so the same code runs under tests and in the page
 * (where main.ts blits the buffer into a canvas).
 */

import type { MirrorVolume } from "./mirror.js";
import type { Vec3 } from "./protocol.js";

export type Axis = 0 | 1 | 2;

export interface RenderedView {
  width: number;
  height: number;
  /** RGBA, row-major, 4 bytes per pixel */
  pixels: Uint8ClampedArray;
  /** hit depth in voxels per pixel, -1 for misses */
  depth: Float32Array;
}

const BACKGROUND: [number, number, number] = [16, 16, 24];

export function renderOrtho(mirror: MirrorVolume, axis: Axis): RenderedView {
  const [cx, cy, cz] = mirror.dims;
  const sizes = [cx, cy, cz];
  const u = axis === 0 ? 1 : 0;          // horizontal screen axis
  const v = axis === 2 ? 1 : 2;          // vertical screen axis
  const width = sizes[u];
  const height = sizes[v];
  const n = sizes[axis];
  const pixels = new Uint8ClampedArray(width * height * 4);
  const depth = new Float32Array(width * height).fill(-1);

  const idx: [number, number, number] = [0, 0, 0];
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      idx[u] = x;
      idx[v] = y;
      let color = BACKGROUND;
      let hit = -1;
      for (let d = 0; d < n; d++) {
        idx[axis] = d;
        const label = mirror.labelAt(idx[0], idx[1], idx[2]);
        if (label !== 0) {
          const seg = mirror.segments.get(label);
          const base: [number, number, number] = seg
            ? [seg.color[0] * 255, seg.color[1] * 255, seg.color[2] * 255]
            : [204, 204, 178];
          // simple diffuse falloff with depth so the surface reads as 3D
          const shade = 1 - 0.6 * (d / n);
          color = [base[0] * shade, base[1] * shade, base[2] * shade];
          hit = d;
          break;
        }
      }
      const p = (y * width + x) * 4;
      pixels[p] = color[0];
      pixels[p + 1] = color[1];
      pixels[p + 2] = color[2];
      pixels[p + 3] = 255;
      depth[y * width + x] = hit;
    }
  }
  return { width, height, pixels, depth };
}

/** Overlay the drill as a filled disc (screen-space voxels) onto a rendered view. */
export function overlayDrill(
  view: RenderedView,
  mirror: MirrorVolume,
  axis: Axis,
  tipWorld: Vec3,
  radiusMm: number,
  rgb: [number, number, number] = [255, 64, 64],
): void {
  const u = axis === 0 ? 1 : 0;
  const v = axis === 2 ? 1 : 2;
  const toVoxel = (d: number) => (tipWorld[d] - mirror.origin[d]) / mirror.spacing[d];
  const cxPix = toVoxel(u);
  const cyPix = toVoxel(v);
  const rPix = Math.max(1, radiusMm / mirror.spacing[u]);
  const x0 = Math.max(0, Math.floor(cxPix - rPix));
  const x1 = Math.min(view.width - 1, Math.ceil(cxPix + rPix));
  const y0 = Math.max(0, Math.floor(cyPix - rPix));
  const y1 = Math.min(view.height - 1, Math.ceil(cyPix + rPix));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cxPix;
      const dy = y - cyPix;
      if (dx * dx + dy * dy > rPix * rPix) continue;
      const p = (y * view.width + x) * 4;
      view.pixels[p] = rgb[0];
      view.pixels[p + 1] = rgb[1];
      view.pixels[p + 2] = rgb[2];
      view.pixels[p + 3] = 255;
    }
  }
}

/** Distinct opaque colors present in a view; handy for smoke tests and HUD legends. */
export function distinctColors(view: RenderedView): Set<string> {
  const seen = new Set<string>();
  for (let p = 0; p < view.pixels.length; p += 4) {
    seen.add(`${view.pixels[p]},${view.pixels[p + 1]},${view.pixels[p + 2]}`);
  }
  return seen;
}
