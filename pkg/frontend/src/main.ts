/**
 * Browser entry point: connects to the gateway's WebSocket endpoint, mirrors
 * the volume, renders it to a canvas, plays the drill tone, and forwards
 * pointer/keyboard input. Serve the built bundle from any static host and
 * point it at `drillvox serve`'s endpoint via ?host=...&port=....
 */

import { AudioFeedback, WebAudioTone } from "./audio.js";
import { SessionClient } from "./client.js";
import { ControlState } from "./controls.js";
import { overlayDrill, renderOrtho } from "./render.js";
import type { StateFrame } from "./protocol.js";

function hud(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

export function start(): void {
  const params = new URLSearchParams(location.search);
  const host = params.get("host") ?? location.hostname ?? "127.0.0.1";
  const port = params.get("port") ?? "7420";
  const canvas = hud("view") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const status = hud("status");
  const warningsEl = hud("warnings");
  const forceEl = hud("force");
  const pitchEl = hud("pitch");

  const ws = new WebSocket(`ws://${host}:${port}/`);
  ws.binaryType = "arraybuffer";

  const controls = new ControlState();
  let audio: AudioFeedback | null = null;
  // Web Audio needs a user gesture; create the tone lazily on first key press
  const ensureAudio = () => {
    if (!audio) audio = new AudioFeedback(new WebAudioTone());
    return audio;
  };

  const client = new SessionClient(
    (frame) => ws.send(frame as Uint8Array<ArrayBuffer>),
    {
      onReady(c) {
        const m = c.mirror!;
        canvas.width = m.dims[0];
        canvas.height = m.dims[2];
        status.textContent =
          `connected — ${m.dims.join("x")} volume, ${c.burrs.length} burrs`;
      },
      onState(frame: StateFrame, c) {
        const m = c.mirror!;
        const view = renderOrtho(m, 1);
        const burr = c.burrs[controls.burrId];
        overlayDrill(view, m, 1,
          [frame.drillPose[0], frame.drillPose[1], frame.drillPose[2]],
          burr ? burr.radiusMm : 1);
        ctx.putImageData(
          new ImageData(view.pixels as Uint8ClampedArray<ArrayBuffer>,
                        view.width, view.height), 0, 0);

        const fMag = Math.hypot(...frame.fHaptic);
        forceEl.textContent = `force ${fMag.toFixed(2)} N`;
        pitchEl.textContent = `pitch x${frame.pitch.toFixed(3)}`;
        warningsEl.textContent = frame.warnings.length
          ? frame.warnings.map((w) => `${w.warnKind}: ${w.name}`).join("  |  ")
          : "";
        warningsEl.classList.toggle("alert", frame.warnings.length > 0);
        audio?.update(frame.pitch, controls.pedal > 0);
      },
      onError(err) {
        status.textContent = `server error ${err.code}: ${err.text}`;
      },
    },
  );

  ws.onmessage = (ev) => {
    void client.onBytes(new Uint8Array(ev.data as ArrayBuffer));
  };
  ws.onclose = () => {
    status.textContent = "disconnected";
    audio?.update(0, false);
  };

  window.addEventListener("keydown", (ev) => {
    if (ev.repeat) return;
    ensureAudio();
    const frame = controls.keyDown(ev.code);
    if (frame) {
      client.sendInput(frame);
      ev.preventDefault();
    }
  });
  window.addEventListener("keyup", (ev) => {
    const frame = controls.keyUp(ev.code);
    if (frame) client.sendInput(frame);
  });

  let dragging = false;
  canvas.addEventListener("pointerdown", () => { dragging = true; });
  window.addEventListener("pointerup", () => { dragging = false; });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging || !client.mirror) return;
    const sp = client.mirror.spacing;
    client.sendInput(controls.drag(ev.movementX * sp[0], ev.movementY * sp[2]));
  });
  canvas.addEventListener("wheel", (ev) => {
    if (!client.mirror) return;
    client.sendInput(controls.wheel(Math.sign(ev.deltaY) * client.mirror.spacing[1]));
    ev.preventDefault();
  });
}

if (typeof document !== "undefined" && document.getElementById("view")) {
  start();
}
