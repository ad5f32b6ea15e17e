/**
 * Drill audio feedback: a single oscillator whose frequency tracks the
 * server-reported pitch multiplier. Tone present iff the pedal is down;
 * frequency = baseHz * pitch, so rising collision force (which lowers the
 * pitch value) lowers the tone monotonically.
 */

export interface ToneSink {
  start(): void;
  stop(): void;
  setFrequency(hz: number): void;
  readonly active: boolean;
}

/** Web Audio implementation; requires a user gesture to have unlocked audio. */
export class WebAudioTone implements ToneSink {
  private ctx: AudioContext;
  private osc: OscillatorNode | null = null;
  private gain: GainNode;

  constructor(ctx?: AudioContext) {
    this.ctx = ctx ?? new AudioContext();
    this.gain = this.ctx.createGain();
    this.gain.gain.value = 0.15;
    this.gain.connect(this.ctx.destination);
  }

  get active(): boolean {
    return this.osc !== null;
  }

  start(): void {
    if (this.osc) return;
    this.osc = this.ctx.createOscillator();
    this.osc.type = "sawtooth";
    this.osc.connect(this.gain);
    this.osc.start();
  }

  stop(): void {
    if (!this.osc) return;
    this.osc.stop();
    this.osc.disconnect();
    this.osc = null;
  }

  setFrequency(hz: number): void {
    if (this.osc) {
      this.osc.frequency.setTargetAtTime(hz, this.ctx.currentTime, 0.01);
    }
  }
}

export class AudioFeedback {
  lastFrequencyHz = 0;

  constructor(private sink: ToneSink, readonly baseHz = 220) {}

  /** Feed the latest server pitch and the local pedal state. */
  update(pitch: number, pedalOn: boolean): void {
    if (!pedalOn) {
      this.sink.stop();
      return;
    }
    this.sink.start();
    this.lastFrequencyHz = this.baseHz * Math.max(pitch, 0);
    this.sink.setFrequency(this.lastFrequencyHz);
  }

  get toneActive(): boolean {
    return this.sink.active;
  }
}
