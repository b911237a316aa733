// View-model of a live session: rolling waveform buffers, event tick marks,
// label badges and the last server-acknowledged control values.
//
// Two invariants matter here. Buffers stay sorted by time (stale or
// out-of-order samples are dropped) and bounded to the window length, so
// memory stays flat however long the session runs. Control values only ever
// change from server responses or stream echoes, never from local edits:
// the panel renders what the server acknowledged, not what the user asked.

import {
  BreathLabelMsg,
  SessionDescriptor,
  StreamMessage,
  VentSettings,
} from "./wire.js";

export interface Badge {
  breathIdx: number;
  label: string;
  intent: string;
  time: number; // effort start, session seconds
}

export interface Tick {
  kind: string; // trigger | cycle | effort gap marker
  time: number;
}

export interface Controls {
  settings: VentSettings | null;
  archetype: string | null;
  speed: number;
  paused: boolean;
  respiratoryRate: number | null;
}

const CHANNELS = ["paw", "flow", "vol", "pmus", "phase"] as const;
export type Channel = (typeof CHANNELS)[number];

export class ViewState {
  windowSeconds: number;
  sessionId: string | null = null;
  connected = false;
  pmusOverlay = false; // bedside default: hide what the patient is doing
  t: number[] = [];
  channels: Record<Channel, number[]> = {
    paw: [], flow: [], vol: [], pmus: [], phase: [],
  };
  ticks: Tick[] = [];
  badges: Badge[] = [];
  gaps: number[] = []; // reconnect gap markers (session time)
  controls: Controls = {
    settings: null, archetype: null, speed: 1, paused: false,
    respiratoryRate: null,
  };
  lastError: string | null = null;
  maxBadges = 12;

  constructor(windowSeconds = 30) {
    this.windowSeconds = windowSeconds;
  }

  latestTime(): number {
    return this.t.length ? this.t[this.t.length - 1] : 0;
  }

  applyDescriptor(desc: SessionDescriptor): void {
    this.sessionId = desc.session_id;
    this.controls.settings = desc.settings;
    this.controls.archetype = desc.archetype;
    this.controls.speed = desc.speed;
    this.controls.paused = desc.paused;
    this.controls.respiratoryRate = desc.respiratory_rate;
  }

  applyMessage(msg: StreamMessage): void {
    if (msg.settings) this.controls.settings = msg.settings;
    if (msg.archetype) this.controls.archetype = msg.archetype;
    if (typeof msg.speed === "number") this.controls.speed = msg.speed;
    if (msg.type === "heartbeat") {
      this.controls.paused = true;
      return;
    }
    this.controls.paused = false;
    const ts = msg.samples.t;
    const newest = this.latestTime();
    for (let i = 0; i < ts.length; i++) {
      if (this.t.length && ts[i] <= newest) continue; // keep buffers sorted
      this.t.push(ts[i]);
      for (const ch of CHANNELS) {
        const src = msg.samples[ch];
        this.channels[ch].push(src ? src[i] : NaN);
      }
    }
    for (const ev of msg.events ?? []) {
      this.ticks.push({ kind: ev.kind, time: ev.time });
    }
    for (const lab of msg.labels ?? []) {
      this.pushBadge(lab);
      if (lab.t_insp_start != null) {
        this.ticks.push({ kind: "effort_start", time: lab.t_insp_start });
      }
      if (lab.t_insp_end != null) {
        this.ticks.push({ kind: "effort_end", time: lab.t_insp_end });
      }
    }
    this.evict();
  }

  // Badges come exclusively from server label messages; the UI never
  // classifies anything itself.
  private pushBadge(lab: BreathLabelMsg): void {
    this.badges.push({
      breathIdx: lab.breath_idx,
      label: lab.label,
      intent: lab.intent,
      time: lab.t_insp_start,
    });
    if (this.badges.length > this.maxBadges) {
      this.badges.splice(0, this.badges.length - this.maxBadges);
    }
  }

  markGap(): void {
    if (this.t.length) this.gaps.push(this.latestTime());
  }

  private evict(): void {
    const cutoff = this.latestTime() - this.windowSeconds;
    let drop = 0;
    while (drop < this.t.length && this.t[drop] < cutoff) drop++;
    if (drop > 0) {
      this.t.splice(0, drop);
      for (const ch of CHANNELS) this.channels[ch].splice(0, drop);
    }
    this.ticks = this.ticks.filter((m) => m.time >= cutoff);
    this.gaps = this.gaps.filter((g) => g >= cutoff);
  }
}
