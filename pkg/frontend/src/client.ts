/**
 * Transport-agnostic session client.
 *
 * Feed raw bytes from any ordered byte stream (a WebSocket's binary messages
 * in the browser, a TCP socket in tests) into `onBytes`; the client runs the
 * handshake (Hello -> snapshot chunks -> BurrList), builds the MirrorVolume,
 * then applies every StateFrame and surfaces HUD state through callbacks.
 */

import { MirrorVolume } from "./mirror.js";
import type {
  BurrInfo, ErrorMsg, Hello, InputFrame, StateFrame, VolumeSnapshot, WireMessage,
} from "./protocol.js";
import { FrameDecoder, ProtocolError, encode } from "./protocol.js";

export interface ClientCallbacks {
  onReady?(client: SessionClient): void;
  onState?(frame: StateFrame, client: SessionClient): void;
  onError?(err: ErrorMsg): void;
}

export class SessionClient {
  hello: Hello | null = null;
  burrs: BurrInfo[] = [];
  mirror: MirrorVolume | null = null;
  lastState: StateFrame | null = null;
  /** digests verified against verification frames so far */
  verifiedFrames = 0;

  private decoder = new FrameDecoder();
  private chunks: VolumeSnapshot[] = [];
  private pendingStates: StateFrame[] = [];
  private assembling = false;

  constructor(
    private send: (frame: Uint8Array) => void,
    private callbacks: ClientCallbacks = {},
  ) {}

  sendInput(frame: InputFrame): void {
    this.send(encode(frame));
  }

  /** Feed received bytes; resolves once all contained messages are applied. */
  async onBytes(data: Uint8Array): Promise<void> {
    for (const msg of this.decoder.feed(data)) {
      await this.onMessage(msg);
    }
  }

  private async onMessage(msg: WireMessage): Promise<void> {
    switch (msg.kind) {
      case "hello":
        this.hello = msg;
        break;
      case "snapshot": {
        if (this.hello === null) throw new ProtocolError("snapshot before hello");
        this.chunks.push(msg);
        if (this.chunks.length === msg.chunkTotal && !this.assembling) {
          this.assembling = true;
          this.mirror = await MirrorVolume.fromSnapshot(this.hello, this.chunks);
          if (this.mirror.digest() !== this.hello.digest) {
            throw new ProtocolError("snapshot digest mismatch");
          }
          this.callbacks.onReady?.(this);
          // states that raced ahead of snapshot assembly
          for (const frame of this.pendingStates.splice(0)) this.applyState(frame);
        }
        break;
      }
      case "burrlist":
        this.burrs = msg.burrs;
        break;
      case "state":
        if (this.mirror === null) {
          this.pendingStates.push(msg);
        } else {
          this.applyState(msg);
        }
        break;
      case "error":
        this.callbacks.onError?.(msg);
        break;
      case "ack":
        break;
      case "input":
        throw new ProtocolError("server sent an input frame");
    }
  }

  private applyState(frame: StateFrame): void {
    this.mirror!.applyState(frame);   // throws on gap or digest divergence
    if (frame.digest !== null) this.verifiedFrames += 1;
    this.lastState = frame;
    this.callbacks.onState?.(frame, this);
  }
}
