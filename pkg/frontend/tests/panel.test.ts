// @vitest-environment jsdom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { ServerError } from "../src/client.js";
import { buildPanel, PanelHooks, sendEdit } from "../src/panel.js";
import { ViewState } from "../src/state.js";

function makeHooks(state: ViewState,
                   updateImpl: (sid: string, patch: object) => Promise<any>) {
  const errors: string[] = [];
  const hooks: PanelHooks = {
    state,
    client: {
      archetypes: async () => [{ name: "Healthy" }, { name: "COPD2" }],
      update: vi.fn(updateImpl),
      inject: vi.fn(async (_sid: string, cls: string) => ({ class: cls, breath: 5 })),
      createSession: vi.fn(),
    } as never,
    sessionId: () => state.sessionId,
    onAck: (desc) => state.applyDescriptor(desc),
    onError: (m) => {
      state.lastError = m;
      errors.push(m);
    },
    onTogglePmus: (on) => {
      state.pmusOverlay = on;
    },
  };
  return { hooks, errors };
}

function baseState(): ViewState {
  const st = new ViewState(30);
  st.connected = true;
  st.applyDescriptor({
    session_id: "sess1", archetype: "Healthy",
    settings: {
      peep: 5, p_insp: 15, pressurization_rise_time: 0.1,
      trigger_kind: "pressure", trigger_sensitivity: 1,
      cycle_fraction: 0.25, max_insp_time: 3, min_exp_time: 0.4,
    },
    speed: 1, paused: false, respiratory_rate: 15, t: 0,
  });
  return st;
}

describe("control panel", () => {
  beforeEach(() => {
    document.body.innerHTML = "<div id='panel'></div>";
  });

  it("rejected edits surface inline and the control snaps back", async () => {
    const state = baseState();
    const { hooks } = makeHooks(state, async () => {
      throw new ServerError(422, "need P_insp > PEEP >= 0, got 5.0, 5.0");
    });
    const panel = buildPanel(document.getElementById("panel")!, hooks);
    panel.refresh();
    const slider = document.getElementById("p_insp") as HTMLInputElement;
    expect(slider.value).toBe("15");
    slider.value = "6";
    slider.dispatchEvent(new Event("change"));
    await vi.waitFor(() => {
      expect(document.getElementById("panel-error")!.textContent)
        .toMatch(/P_insp > PEEP/);
    });
    expect(slider.value).toBe("15"); // snapped back to the acknowledged value
    expect(state.controls.settings?.p_insp).toBe(15);
  });

  it("accepted edits update only via the acknowledgment", async () => {
    const state = baseState();
    const { hooks } = makeHooks(state, async (_sid: string, patch: any) => ({
      session_id: "sess1", archetype: "Healthy",
      settings: { ...state.controls.settings!, ...patch.settings },
      speed: 1, paused: false, respiratory_rate: 15, t: 1,
    }));
    const panel = buildPanel(document.getElementById("panel")!, hooks);
    panel.refresh();
    const slider = document.getElementById("peep") as HTMLInputElement;
    slider.value = "8";
    slider.dispatchEvent(new Event("change"));
    await vi.waitFor(() => expect(state.controls.settings?.peep).toBe(8));
    panel.refresh();
    expect((document.getElementById("peep") as HTMLInputElement).value).toBe("8");
  });

  it("inject buttons exist per class and disable when disconnected", () => {
    const state = baseState();
    const { hooks } = makeHooks(state, async () => ({}));
    const panel = buildPanel(document.getElementById("panel")!, hooks);
    panel.refresh();
    for (const cls of ["EC", "LC", "DI", "IE"]) {
      const btn = document.getElementById(`inject-${cls}`) as HTMLButtonElement;
      expect(btn).toBeTruthy();
      expect(btn.disabled).toBe(false);
    }
    state.connected = false;
    panel.refresh();
    expect((document.getElementById("inject-EC") as HTMLButtonElement).disabled).toBe(true);
  });

  it("badges render most recent first from server labels only", () => {
    const state = baseState();
    const { hooks } = makeHooks(state, async () => ({}));
    const panel = buildPanel(document.getElementById("panel")!, hooks);
    state.applyMessage({
      type: "frame", session: "sess1", seq: 1,
      samples: { t: [1.0], paw: [5], flow: [0], vol: [0], pmus: [0], phase: [0] },
      events: [],
      labels: [
        { breath_idx: 0, t_insp_start: 0.5, t_insp_end: 1.4, t_trigger: 0.6,
          t_cycle: 1.5, start_delay_ms: 100, end_delay_ms: 100,
          label: "Normal", intent: "Normal" },
        { breath_idx: 1, t_insp_start: 4.5, t_insp_end: 5.4, t_trigger: null,
          t_cycle: null, start_delay_ms: null, end_delay_ms: null,
          label: "IE", intent: "IE" },
      ],
    });
    panel.refresh();
    const badges = document.querySelectorAll("#badges .badge");
    expect(badges).toHaveLength(2);
    expect(badges[0].textContent).toBe("#1 IE");
    expect(badges[1].textContent).toBe("#0 Normal");
  });

  it("sendEdit with no session reports not connected", async () => {
    const state = new ViewState(30);
    const { hooks, errors } = makeHooks(state, async () => ({}));
    const ok = await sendEdit(hooks, { speed: 2 });
    expect(ok).toBe(false);
    expect(errors).toContain("not connected");
  });
});
