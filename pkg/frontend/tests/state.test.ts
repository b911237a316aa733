import { describe, expect, it } from "vitest";

import { ViewState } from "../src/state.js";
import { StreamMessage } from "../src/wire.js";

function frameAt(t0: number, n: number, dt = 0.01, extra: Partial<StreamMessage> = {}): StreamMessage {
  const t = Array.from({ length: n }, (_, i) => t0 + i * dt);
  return {
    type: "frame",
    session: "s",
    seq: 0,
    samples: {
      t,
      paw: t.map(() => 5),
      flow: t.map(() => 0),
      vol: t.map(() => 0),
      pmus: t.map(() => 0),
      phase: t.map(() => 0),
    },
    events: [],
    labels: [],
    ...extra,
  };
}

describe("rolling buffers", () => {
  it("stays sorted and contiguous", () => {
    const st = new ViewState(30);
    st.applyMessage(frameAt(0.01, 5));
    st.applyMessage(frameAt(0.06, 5));
    expect(st.t).toHaveLength(10);
    for (let i = 1; i < st.t.length; i++) {
      expect(st.t[i]).toBeGreaterThan(st.t[i - 1]);
    }
  });

  it("drops stale or duplicated samples", () => {
    const st = new ViewState(30);
    st.applyMessage(frameAt(0.01, 5));
    st.applyMessage(frameAt(0.03, 5)); // overlaps the first frame
    for (let i = 1; i < st.t.length; i++) {
      expect(st.t[i]).toBeGreaterThan(st.t[i - 1]);
    }
  });

  it("evicts beyond the 30 s window, keeping memory bounded", () => {
    const st = new ViewState(30);
    for (let k = 0; k < 400; k++) {
      st.applyMessage(frameAt(k * 0.5 + 0.01, 50));
    }
    expect(st.latestTime()).toBeCloseTo(200.0, 1);
    expect(st.t[0]).toBeGreaterThanOrEqual(st.latestTime() - 30.0 - 1e-9);
    expect(st.t.length).toBeLessThanOrEqual(3100);
    expect(st.channels.paw.length).toBe(st.t.length);
  });

  it("keeps gap markers inside the window", () => {
    const st = new ViewState(30);
    st.applyMessage(frameAt(0.01, 100));
    st.markGap();
    expect(st.gaps).toHaveLength(1);
    st.applyMessage(frameAt(100.0, 100));
    expect(st.gaps).toHaveLength(0); // evicted with the window
  });
});

describe("badges and labels", () => {
  const label = {
    breath_idx: 3, t_insp_start: 12.0, t_insp_end: 13.0,
    t_trigger: 12.14, t_cycle: 12.9, start_delay_ms: 140, end_delay_ms: -100,
    label: "EC", intent: "EC",
  };

  it("badges come only from server label messages", () => {
    const st = new ViewState(30);
    st.applyMessage(frameAt(12.0, 50)); // waveform data alone: no badges
    expect(st.badges).toHaveLength(0);
    st.applyMessage(frameAt(12.5, 5, 0.01, { labels: [label] } as never));
    expect(st.badges).toEqual([
      { breathIdx: 3, label: "EC", intent: "EC", time: 12.0 },
    ]);
  });

  it("caps the badge list", () => {
    const st = new ViewState(30);
    st.maxBadges = 4;
    for (let k = 0; k < 10; k++) {
      st.applyMessage(frameAt(k + 0.01, 2, 0.01, {
        labels: [{ ...label, breath_idx: k }],
      } as never));
    }
    expect(st.badges).toHaveLength(4);
    expect(st.badges[3].breathIdx).toBe(9);
  });

  it("collects trigger and cycle ticks from events", () => {
    const st = new ViewState(30);
    st.applyMessage(frameAt(1.0, 5, 0.01, {
      events: [{ kind: "trigger", time: 1.02, breath: 0 }],
    } as never));
    expect(st.ticks).toContainEqual({ kind: "trigger", time: 1.02 });
  });
});

describe("acknowledged control state", () => {
  it("only server messages move the controls", () => {
    const st = new ViewState(30);
    st.applyDescriptor({
      session_id: "s", archetype: "Healthy",
      settings: { peep: 5, p_insp: 15 } as never,
      speed: 1, paused: false, respiratory_rate: 15, t: 0,
    });
    expect(st.controls.settings?.p_insp).toBe(15);
    // a frame echoing new settings updates the acknowledged state
    st.applyMessage(frameAt(0.01, 2, 0.01, {
      settings: { peep: 5, p_insp: 20 } as never,
    } as never));
    expect(st.controls.settings?.p_insp).toBe(20);
  });

  it("heartbeats flag paused without touching buffers", () => {
    const st = new ViewState(30);
    st.applyMessage(frameAt(0.01, 5));
    const n = st.t.length;
    st.applyMessage({
      type: "heartbeat", session: "s", seq: 9, paused: true,
      samples: { t: [] }, events: [], labels: [],
    });
    expect(st.controls.paused).toBe(true);
    expect(st.t).toHaveLength(n);
  });
});
