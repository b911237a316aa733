// Wire types and framing for the live-session stream.
// Mirrors docs/stream-schema.md exactly; that document is normative.

export interface VentSettings {
  peep: number;
  p_insp: number;
  pressurization_rise_time: number;
  trigger_kind: string;
  trigger_sensitivity: number;
  cycle_fraction: number;
  max_insp_time: number;
  min_exp_time: number;
}

export interface SessionDescriptor {
  session_id: string;
  archetype: string;
  settings: VentSettings;
  speed: number;
  paused: boolean;
  respiratory_rate: number;
  t: number;
}

export interface FrameSamples {
  t: number[];
  paw?: number[];
  flow?: number[];
  vol?: number[];
  pmus?: number[];
  phase?: number[];
}

export interface StreamEvent {
  kind: string;            // "trigger" | "cycle"
  time: number;
  breath: number | null;
}

export interface BreathLabelMsg {
  breath_idx: number;
  t_insp_start: number;
  t_insp_end: number;
  t_trigger: number | null;
  t_cycle: number | null;
  start_delay_ms: number | null;
  end_delay_ms: number | null;
  label: string;
  intent: string;
}

export interface StreamMessage {
  type: "frame" | "heartbeat";
  session: string;
  seq: number;
  t0?: number;
  t1?: number;
  t?: number;
  paused?: boolean;
  samples: FrameSamples;
  events: StreamEvent[];
  labels: BreathLabelMsg[];
  settings?: VentSettings;
  archetype?: string;
  speed?: number;
}

// Each WebSocket text frame is "<decimal byte length>\n<json>".
export function parseStreamMessage(text: string): StreamMessage {
  const nl = text.indexOf("\n");
  if (nl < 0) {
    throw new Error("stream message missing length prefix");
  }
  const declared = Number(text.slice(0, nl));
  const body = text.slice(nl + 1);
  const actual = new TextEncoder().encode(body).length;
  if (!Number.isInteger(declared) || declared !== actual) {
    throw new Error(`stream length mismatch: declared ${declared}, got ${actual}`);
  }
  const msg = JSON.parse(body) as StreamMessage;
  if (msg.type !== "frame" && msg.type !== "heartbeat") {
    throw new Error(`unknown stream message type ${String(msg.type)}`);
  }
  if (!msg.samples || !Array.isArray(msg.samples.t)) {
    throw new Error("stream message missing samples.t");
  }
  return msg;
}
