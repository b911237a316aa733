import { describe, expect, it } from "vitest";

import { Ctx2D, renderWaveforms } from "../src/charts.js";
import { ViewState } from "../src/state.js";

// Recording stub of the 2D context: counts operations instead of drawing.
class StubCtx implements Ctx2D {
  strokeStyle = "";
  fillStyle = "";
  lineWidth = 1;
  globalAlpha = 1;
  font = "";
  ops: Record<string, number> = {};
  pathPoints = 0;

  private count(name: string): void {
    this.ops[name] = (this.ops[name] ?? 0) + 1;
  }

  clearRect(): void { this.count("clearRect"); }
  fillRect(): void { this.count("fillRect"); }
  beginPath(): void { this.count("beginPath"); }
  moveTo(): void { this.count("moveTo"); this.pathPoints += 1; }
  lineTo(): void { this.count("lineTo"); this.pathPoints += 1; }
  stroke(): void { this.count("stroke"); }
  fillText(): void { this.count("fillText"); }
}

function populatedState(seconds = 30, fs = 100): ViewState {
  const st = new ViewState(30);
  const n = seconds * fs;
  const t = Array.from({ length: n }, (_, i) => (i + 1) / fs);
  st.applyMessage({
    type: "frame", session: "s", seq: 0,
    samples: {
      t,
      paw: t.map((x) => 5 + 8 * Math.max(Math.sin(x), 0)),
      flow: t.map((x) => 0.6 * Math.sin(2 * x)),
      vol: t.map((x) => 0.25 * (1 + Math.sin(x))),
      pmus: t.map((x) => -3 * Math.max(Math.sin(x), 0)),
      phase: t.map(() => 0),
    },
    events: [
      { kind: "trigger", time: seconds - 3, breath: 1 },
      { kind: "cycle", time: seconds - 2, breath: 1 },
    ],
    labels: [],
  });
  return st;
}

describe("strip chart rendering", () => {
  it("empty buffers draw axes and titles only", () => {
    const ctx = new StubCtx();
    renderWaveforms(ctx, new ViewState(30), 800, 600);
    expect(ctx.ops.fillText).toBe(3);          // three strip titles
    expect(ctx.ops.stroke).toBe(3);            // three baselines, no traces
    expect(ctx.pathPoints).toBe(6);            // two points per baseline
  });

  it("draws one trace per strip plus event ticks", () => {
    const ctx = new StubCtx();
    const st = populatedState(10);
    renderWaveforms(ctx, st, 800, 600);
    // 3 baselines + 3 traces + 2 ticks
    expect(ctx.ops.stroke).toBe(8);
    expect(ctx.pathPoints).toBeGreaterThan(3 * 900);
  });

  it("muscle-pressure overlay is off by default and adds one trace when on", () => {
    const st = populatedState(5);
    const off = new StubCtx();
    renderWaveforms(off, st, 800, 600);
    st.pmusOverlay = true;
    const on = new StubCtx();
    renderWaveforms(on, st, 800, 600);
    expect(on.ops.stroke).toBe(off.ops.stroke + 1);
  });

  it("gap markers render as bands", () => {
    const st = populatedState(5);
    st.markGap();
    const ctx = new StubCtx();
    renderWaveforms(ctx, st, 800, 600);
    expect(ctx.ops.fillRect).toBe(1);
  });

  it("sustains a 30 fps budget on a full 30 s / 100 Hz window", () => {
    // headless proxy for the render-rate criterion: the full draw pass over
    // 3000-sample buffers must fit comfortably inside a 33 ms frame budget
    const st = populatedState(30);
    const ctx = new StubCtx();
    renderWaveforms(ctx, st, 1100, 640); // warm up
    const rounds = 60;
    const start = performance.now();
    for (let k = 0; k < rounds; k++) {
      renderWaveforms(ctx, st, 1100, 640);
    }
    const perFrame = (performance.now() - start) / rounds;
    expect(st.t.length).toBeGreaterThanOrEqual(2990);
    expect(perFrame).toBeLessThan(33);
  });
});
