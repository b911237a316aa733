// Application bootstrap: create a session, attach the stream, wire the
// panel and run the render loop.

import { renderWaveforms } from "./charts.js";
import { ControlClient, StreamClient } from "./client.js";
import { buildPanel } from "./panel.js";
import { ViewState } from "./state.js";

function serverBase(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("server") ?? `${window.location.protocol}//${window.location.host}`;
}

export async function start(): Promise<void> {
  const base = serverBase();
  const wsBase = base.replace(/^http/, "ws");
  const state = new ViewState(30);
  const client = new ControlClient(base);

  const canvas = document.getElementById("strips") as HTMLCanvasElement;
  const panelRoot = document.getElementById("panel") as HTMLElement;
  const statusEl = document.getElementById("status") as HTMLElement;
  const fpsEl = document.getElementById("fps") as HTMLElement;

  const desc = await client.createSession({ archetype: "Healthy" });
  state.applyDescriptor(desc);

  const panel = buildPanel(panelRoot, {
    state,
    client,
    sessionId: () => state.sessionId,
    onAck: (d) => {
      state.applyDescriptor(d);
      panel.refresh();
    },
    onError: (message) => {
      state.lastError = message;
      panel.refresh();
    },
    onTogglePmus: (on) => {
      state.pmusOverlay = on;
    },
  });

  const stream = new StreamClient(
    `${wsBase}/sessions/${desc.session_id}/stream`,
    {
      onMessage: (msg) => {
        state.applyMessage(msg);
        panel.refresh();
      },
      onGap: () => state.markGap(),
      onStatus: (connected) => {
        state.connected = connected;
        statusEl.textContent = connected ? "live" : "reconnecting…";
        panel.refresh();
      },
    },
    (url) => new WebSocket(url) as never,
  );
  stream.connect();

  // render loop with a light fps meter
  let frames = 0;
  let lastFpsStamp = performance.now();
  const ctx = canvas.getContext("2d")!;
  const loop = () => {
    renderWaveforms(ctx, state, canvas.width, canvas.height);
    frames += 1;
    const now = performance.now();
    if (now - lastFpsStamp >= 1000) {
      fpsEl.textContent = `${frames} fps`;
      frames = 0;
      lastFpsStamp = now;
    }
    window.requestAnimationFrame(loop);
  };
  window.requestAnimationFrame(loop);
}

if (typeof document !== "undefined" && document.getElementById("strips")) {
  void start();
}
