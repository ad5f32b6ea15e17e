/**
 * Keyboard/pointer drill control.
 *
 * The haptic device is replaced by desk-scale input: pointer drag moves the
 * tip on the view plane, the wheel moves it in depth, arrow keys nudge it.
 * Space is the foot pedal (held = drilling); number keys 1..9 select a burr.
 * Every gesture emits a monotonically sequenced InputFrame.
 *
 * Keybindings:
 *   Space          pedal down / up
 *   Digit1..Digit9 select burr 0..8 (emits an InputFrame carrying the new
 *                  burr id, which the server logs as a BurrChange)
 *   Arrow keys     nudge tip in x/y; PageUp / PageDown nudge in z
 */

import type { InputFrame, Quat, Vec3 } from "./protocol.js";
import { makeInputFrame } from "./protocol.js";

export class ControlState {
  tip: Vec3;
  orientation: Quat = [1, 0, 0, 0];
  pedal = 0;
  burrId = 0;
  nudgeMm: number;
  private seq = 1;
  private lastSeq = 0;

  constructor(initialTip: Vec3 = [0, 0, 0], opts: { nudgeMm?: number; burrCount?: number } = {}) {
    this.tip = [...initialTip] as Vec3;
    this.nudgeMm = opts.nudgeMm ?? 0.5;
    this.burrCount = opts.burrCount ?? 9;
  }

  burrCount: number;

  /** Build the next InputFrame; sequence numbers strictly increase. */
  makeInput(): InputFrame {
    const frame = makeInputFrame(this.seq++, [...this.tip] as Vec3, {
      tipOrientation: [...this.orientation] as Quat,
      pedal: this.pedal,
      burrId: this.burrId,
    });
    if (frame.seq <= this.lastSeq) throw new Error("input sequence not monotonic");
    this.lastSeq = frame.seq;
    return frame;
  }

  /** Handle a key press; returns the InputFrame to send, or null if the key is unbound. */
  keyDown(code: string): InputFrame | null {
    if (code === "Space") {
      this.pedal = 1;
      return this.makeInput();
    }
    const digit = /^Digit([1-9])$/.exec(code);
    if (digit) {
      const id = Number(digit[1]) - 1;
      if (id >= this.burrCount) return null;
      this.burrId = id;
      return this.makeInput();
    }
    const step = this.nudgeMm;
    switch (code) {
      case "ArrowLeft": this.tip[0] -= step; break;
      case "ArrowRight": this.tip[0] += step; break;
      case "ArrowUp": this.tip[1] -= step; break;
      case "ArrowDown": this.tip[1] += step; break;
      case "PageUp": this.tip[2] -= step; break;
      case "PageDown": this.tip[2] += step; break;
      default: return null;
    }
    return this.makeInput();
  }

  keyUp(code: string): InputFrame | null {
    if (code === "Space") {
      this.pedal = 0;
      return this.makeInput();
    }
    return null;
  }

  /** Pointer drag in view-plane millimeters. */
  drag(dxMm: number, dyMm: number): InputFrame {
    this.tip[0] += dxMm;
    this.tip[1] += dyMm;
    return this.makeInput();
  }

  /** Wheel scroll moves the tip along the view depth axis. */
  wheel(dzMm: number): InputFrame {
    this.tip[2] += dzMm;
    return this.makeInput();
  }
}
