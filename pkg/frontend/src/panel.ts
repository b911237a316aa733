// Control panel: archetype/ventilator/effort controls, speed, pause,
// asynchrony injection buttons and the badge strip.
//
// Edits go to the server; the controls themselves re-render from the last
// acknowledged state only. A rejected edit (e.g. P_insp at or below PEEP)
// surfaces its message inline and the offending control snaps back.

import { ControlClient, ServerError } from "./client.js";
import { ViewState } from "./state.js";

export interface ControlSpec {
  key: string;
  label: string;
  min: number;
  max: number;
  step: number;
  // how this control maps into a PATCH body and back out of acknowledged state
  toPatch(value: number): object;
  fromState(state: ViewState): number | null;
}

export const CONTROLS: ControlSpec[] = [
  {
    key: "peep", label: "PEEP (cmH2O)", min: 0, max: 15, step: 0.5,
    toPatch: (v) => ({ settings: { peep: v } }),
    fromState: (s) => s.controls.settings?.peep ?? null,
  },
  {
    key: "p_insp", label: "P_insp (cmH2O)", min: 6, max: 40, step: 0.5,
    toPatch: (v) => ({ settings: { p_insp: v } }),
    fromState: (s) => s.controls.settings?.p_insp ?? null,
  },
  {
    key: "trigger_sensitivity", label: "trigger sens. (cmH2O)",
    min: 0.3, max: 3, step: 0.1,
    toPatch: (v) => ({ settings: { trigger_sensitivity: v } }),
    fromState: (s) => s.controls.settings?.trigger_sensitivity ?? null,
  },
  {
    key: "cycle_fraction", label: "cycle fraction", min: 0.05, max: 0.6, step: 0.05,
    toPatch: (v) => ({ settings: { cycle_fraction: v } }),
    fromState: (s) => s.controls.settings?.cycle_fraction ?? null,
  },
  {
    key: "respiratory_rate", label: "resp. rate (/min)", min: 8, max: 30, step: 1,
    toPatch: (v) => ({ respiratory_rate: v }),
    fromState: (s) => s.controls.respiratoryRate,
  },
  {
    key: "effort_amplitude", label: "effort (cmH2O)", min: 1, max: 12, step: 0.5,
    toPatch: (v) => ({ effort_amplitude: v }),
    fromState: () => null, // server does not echo effort; leave as last sent ack
  },
];

export const SPEEDS = [0.25, 0.5, 1, 2, 4];
export const INJECT_CLASSES = ["EC", "LC", "DI", "IE"];

export interface PanelHooks {
  state: ViewState;
  client: ControlClient;
  sessionId(): string | null;
  onAck(desc: any): void;       // acknowledged descriptor
  onError(message: string): void;
  onTogglePmus(on: boolean): void;
}

export async function sendEdit(hooks: PanelHooks, patch: object): Promise<boolean> {
  const sid = hooks.sessionId();
  if (!sid) {
    hooks.onError("not connected");
    return false;
  }
  try {
    const desc = await hooks.client.update(sid, patch);
    hooks.onAck(desc);
    hooks.onError("");
    return true;
  } catch (err) {
    // validation error: acknowledged state unchanged, control snaps back
    hooks.onError(err instanceof ServerError ? err.message : String(err));
    return false;
  }
}

export async function sendInject(hooks: PanelHooks, cls: string): Promise<boolean> {
  const sid = hooks.sessionId();
  if (!sid) return false;
  try {
    await hooks.client.inject(sid, cls);
    hooks.onError("");
    return true;
  } catch (err) {
    hooks.onError(err instanceof ServerError ? err.message : String(err));
    return false;
  }
}

export function buildPanel(root: HTMLElement, hooks: PanelHooks): { refresh(): void } {
  const doc = root.ownerDocument;
  const sliders = new Map<string, HTMLInputElement>();
  const readouts = new Map<string, HTMLElement>();

  const archRow = doc.createElement("div");
  archRow.className = "row";
  const archLabel = doc.createElement("label");
  archLabel.textContent = "archetype ";
  const archSelect = doc.createElement("select");
  archSelect.id = "archetype";
  archLabel.appendChild(archSelect);
  archRow.appendChild(archLabel);
  root.appendChild(archRow);
  hooks.client.archetypes().then((list) => {
    for (const a of list) {
      const opt = doc.createElement("option");
      opt.value = a.name;
      opt.textContent = a.name;
      archSelect.appendChild(opt);
    }
    refresh();
  }).catch(() => hooks.onError("archetype catalog unavailable"));
  archSelect.addEventListener("change", () => {
    void sendEdit(hooks, { archetype: archSelect.value });
  });

  for (const spec of CONTROLS) {
    const row = doc.createElement("div");
    row.className = "row";
    const label = doc.createElement("label");
    label.textContent = spec.label + " ";
    const input = doc.createElement("input");
    input.type = "range";
    input.id = spec.key;
    input.min = String(spec.min);
    input.max = String(spec.max);
    input.step = String(spec.step);
    const out = doc.createElement("span");
    out.className = "readout";
    input.addEventListener("change", () => {
      void sendEdit(hooks, spec.toPatch(Number(input.value))).then((ok) => {
        if (!ok) refresh(); // snap back to acknowledged value
      });
    });
    label.appendChild(input);
    label.appendChild(out);
    row.appendChild(label);
    root.appendChild(row);
    sliders.set(spec.key, input);
    readouts.set(spec.key, out);
  }

  const speedRow = doc.createElement("div");
  speedRow.className = "row";
  const speedSelect = doc.createElement("select");
  speedSelect.id = "speed";
  for (const s of SPEEDS) {
    const opt = doc.createElement("option");
    opt.value = String(s);
    opt.textContent = `${s}x`;
    speedSelect.appendChild(opt);
  }
  speedSelect.addEventListener("change", () => {
    void sendEdit(hooks, { speed: Number(speedSelect.value) });
  });
  const pauseBtn = doc.createElement("button");
  pauseBtn.id = "pause";
  pauseBtn.textContent = "pause";
  pauseBtn.addEventListener("click", () => {
    void sendEdit(hooks, { paused: !hooks.state.controls.paused });
  });
  const pmusToggle = doc.createElement("input");
  pmusToggle.type = "checkbox";
  pmusToggle.id = "pmus-overlay";
  pmusToggle.addEventListener("change", () => hooks.onTogglePmus(pmusToggle.checked));
  const pmusLabel = doc.createElement("label");
  pmusLabel.appendChild(pmusToggle);
  pmusLabel.append(" show pmus");
  speedRow.append("speed ", speedSelect, " ", pauseBtn, " ", pmusLabel);
  root.appendChild(speedRow);

  const injectRow = doc.createElement("div");
  injectRow.className = "row inject";
  const injectButtons: HTMLButtonElement[] = [];
  for (const cls of INJECT_CLASSES) {
    const btn = doc.createElement("button");
    btn.id = `inject-${cls}`;
    btn.textContent = `inject ${cls}`;
    btn.addEventListener("click", () => void sendInject(hooks, cls));
    injectRow.appendChild(btn);
    injectButtons.push(btn);
  }
  root.appendChild(injectRow);

  const badgeRow = doc.createElement("div");
  badgeRow.className = "row badges";
  badgeRow.id = "badges";
  root.appendChild(badgeRow);

  const errorRow = doc.createElement("div");
  errorRow.className = "row error";
  errorRow.id = "panel-error";
  root.appendChild(errorRow);

  function refresh(): void {
    const st = hooks.state;
    for (const spec of CONTROLS) {
      const val = spec.fromState(st);
      const input = sliders.get(spec.key)!;
      if (val != null && doc.activeElement !== input) {
        input.value = String(val);
      }
      readouts.get(spec.key)!.textContent = ` ${input.value}`;
    }
    if (st.controls.archetype && doc.activeElement !== archSelect) {
      archSelect.value = st.controls.archetype;
    }
    speedSelect.value = String(st.controls.speed);
    pauseBtn.textContent = st.controls.paused ? "resume" : "pause";
    for (const btn of injectButtons) btn.disabled = !st.connected;
    errorRow.textContent = st.lastError ?? "";
    badgeRow.textContent = "";
    for (const b of [...st.badges].reverse()) {
      const span = doc.createElement("span");
      span.className = `badge badge-${b.label.replace("+", "-")}`;
      span.textContent = `#${b.breathIdx} ${b.label}`;
      span.title = `t=${b.time.toFixed(1)}s intent=${b.intent}`;
      badgeRow.appendChild(span);
    }
  }

  return { refresh };
}
