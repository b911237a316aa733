// Canvas strip-chart renderer: three stacked scrolling strips (pressure,
// flow, volume) with optional ground-truth muscle-pressure overlay,
// trigger/cycle tick marks and reconnect gap markers. Pure drawing: all
// state lives in ViewState.

import { ViewState } from "./state.js";

// Structural subset of CanvasRenderingContext2D so tests can stub it
// (style properties widened to match the DOM's gradient/pattern unions).
export interface Ctx2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
  strokeStyle: string | object;
  fillStyle: string | object;
  lineWidth: number;
  globalAlpha: number;
  font: string;
}

interface Strip {
  channel: "paw" | "flow" | "vol";
  title: string;
  lo: number;
  hi: number;
  autoscale: boolean;
}

const STRIPS: Strip[] = [
  { channel: "paw", title: "pressure (cmH2O)", lo: -5, hi: 30, autoscale: true },
  { channel: "flow", title: "flow (L/s)", lo: -1.2, hi: 1.2, autoscale: true },
  { channel: "vol", title: "volume (L)", lo: 0, hi: 1, autoscale: true },
];

const TICK_COLORS: Record<string, string> = {
  trigger: "#2ca02c",
  cycle: "#ff7f0e",
  effort_start: "#1f77b4",
  effort_end: "#d62728",
};

function scaleBounds(values: number[], lo: number, hi: number): [number, number] {
  let mn = Infinity;
  let mx = -Infinity;
  for (const v of values) {
    if (Number.isFinite(v)) {
      if (v < mn) mn = v;
      if (v > mx) mx = v;
    }
  }
  if (!Number.isFinite(mn) || mn === mx) return [lo, hi];
  const pad = 0.1 * (mx - mn || 1);
  return [Math.min(lo, mn - pad), Math.max(hi, mx + pad)];
}

export function renderWaveforms(ctx: Ctx2D, state: ViewState,
                                width: number, height: number): void {
  ctx.clearRect(0, 0, width, height);
  const stripH = height / STRIPS.length;
  const t1 = Math.max(state.latestTime(), state.windowSeconds);
  const t0 = t1 - state.windowSeconds;
  const xOf = (t: number) => ((t - t0) / state.windowSeconds) * width;

  STRIPS.forEach((strip, idx) => {
    const top = idx * stripH;
    const bottom = top + stripH - 4;
    // axes are always drawn, trace only when there is data
    ctx.globalAlpha = 1;
    ctx.strokeStyle = "#888";
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(0, bottom);
    ctx.lineTo(width, bottom);
    ctx.stroke();
    ctx.fillStyle = "#444";
    ctx.font = "11px sans-serif";
    ctx.fillText(strip.title, 6, top + 12);

    const ys = state.channels[strip.channel];
    if (!ys.length) return;
    const [lo, hi] = strip.autoscale ? scaleBounds(ys, strip.lo, strip.hi)
      : [strip.lo, strip.hi];
    const yOf = (v: number) =>
      bottom - ((v - lo) / (hi - lo)) * (stripH - 20);

    ctx.strokeStyle = "#111";
    ctx.lineWidth = 1.4;
    ctx.beginPath();
    ctx.moveTo(xOf(state.t[0]), yOf(ys[0]));
    for (let i = 1; i < state.t.length; i++) {
      ctx.lineTo(xOf(state.t[i]), yOf(ys[i]));
    }
    ctx.stroke();

    if (strip.channel === "paw" && state.pmusOverlay) {
      const pmus = state.channels.pmus;
      ctx.strokeStyle = "#9467bd";
      ctx.lineWidth = 1;
      ctx.globalAlpha = 0.8;
      ctx.beginPath();
      ctx.moveTo(xOf(state.t[0]), yOf(pmus[0]));
      for (let i = 1; i < state.t.length; i++) {
        ctx.lineTo(xOf(state.t[i]), yOf(pmus[i]));
      }
      ctx.stroke();
      ctx.globalAlpha = 1;
    }
  });

  // trigger/cycle/effort tick marks span all strips
  for (const tick of state.ticks) {
    if (tick.time < t0 || tick.time > t1) continue;
    ctx.strokeStyle = TICK_COLORS[tick.kind] ?? "#999";
    ctx.lineWidth = 1;
    ctx.globalAlpha = 0.7;
    const x = xOf(tick.time);
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, height);
    ctx.stroke();
  }
  ctx.globalAlpha = 1;

  // reconnect gaps: a grey band, visibly not spliced
  for (const gap of state.gaps) {
    if (gap < t0 || gap > t1) continue;
    ctx.fillStyle = "rgba(120,120,120,0.25)";
    ctx.fillRect(xOf(gap) - 2, 0, 4, height);
  }
}
