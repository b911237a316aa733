// End-to-end against the real Python service: create a session, watch the
// stream through the real client stack, change parameters, inject each
// asynchrony class and check the badges that come back.

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { StreamClient } from "../src/client.js";
import { ViewState } from "../src/state.js";
import { StreamMessage } from "../src/wire.js";

const PORT = 8612;
const BASE = `http://127.0.0.1:${PORT}`;
let server: ChildProcess;

async function waitForServer(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const r = await fetch(`${BASE}/healthz`);
      if (r.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((res) => setTimeout(res, 250));
  }
  throw new Error("service did not come up");
}

async function post(path: string, body: object): Promise<any> {
  const r = await fetch(`${BASE}${path}`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!r.ok) throw new Error(`${path}: ${r.status} ${await r.text()}`);
  return r.json();
}

async function patch(path: string, body: object): Promise<Response> {
  return fetch(`${BASE}${path}`, {
    method: "PATCH",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
}

interface Collected {
  state: ViewState;
  messages: StreamMessage[];
  client: StreamClient;
}

function collect(sessionId: string): Collected {
  const state = new ViewState(30);
  const messages: StreamMessage[] = [];
  const client = new StreamClient(
    `ws://127.0.0.1:${PORT}/sessions/${sessionId}/stream`,
    {
      onMessage: (msg) => {
        messages.push(msg);
        state.applyMessage(msg);
      },
      onGap: () => state.markGap(),
      onStatus: (connected) => {
        state.connected = connected;
      },
    },
    (url) => new WebSocket(url) as never,
  );
  client.connect();
  return { state, messages, client };
}

async function until<T>(fn: () => T | undefined, timeoutMs: number, what: string): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const out = fn();
    if (out !== undefined) return out;
    await new Promise((res) => setTimeout(res, 25));
  }
  throw new Error(`timed out waiting for ${what}`);
}

beforeAll(async () => {
  server = spawn("python3", ["-m", "ventsim.cli", "serve", "--port", String(PORT)],
                 { cwd: "..", stdio: "ignore" });
  await waitForServer();
}, 60000);

afterAll(() => {
  server?.kill();
});

describe("live service end to end", () => {
  it("parameter changes reach the stream within 500 ms", async () => {
    const desc = await post("/sessions", { archetype: "Healthy", speed: 4.0 });
    const { state, client } = collect(desc.session_id);
    await until(() => (state.t.length > 0 ? true : undefined), 5000, "first frame");

    const t0 = Date.now();
    const resp = await patch(`/sessions/${desc.session_id}`,
                             { settings: { p_insp: 21.0 } });
    expect(resp.status).toBe(200);
    await until(
      () => (state.controls.settings?.p_insp === 21.0 ? true : undefined),
      500, "p_insp echo in stream");
    expect(Date.now() - t0).toBeLessThan(500);
    client.close();
  }, 30000);

  it("rejected updates leave the session untouched", async () => {
    const desc = await post("/sessions", { archetype: "Healthy" });
    const resp = await patch(`/sessions/${desc.session_id}`,
                             { settings: { peep: 30.0, p_insp: 10.0 } });
    expect(resp.status).toBe(422);
    const echo = await fetch(`${BASE}/sessions/${desc.session_id}`).then((r) => r.json());
    expect(echo.settings.peep).toBe(5.0);
  }, 30000);

  it("stream sample grid is contiguous and gap-free", async () => {
    const desc = await post("/sessions", { archetype: "Healthy", speed: 4.0 });
    const { state, messages, client } = collect(desc.session_id);
    await until(() => (state.t.length >= 400 ? true : undefined), 15000, "400 samples");
    client.close();
    const frames = messages.filter((m) => m.type === "frame");
    expect(frames.length).toBeGreaterThan(10);
    for (let i = 1; i < state.t.length; i++) {
      expect(state.t[i] - state.t[i - 1]).toBeCloseTo(0.01, 6);
    }
  }, 30000);

  it("injecting each class yields a matching badge on that breath", async () => {
    const desc = await post("/sessions", { archetype: "Healthy", speed: 4.0 });
    const { state, client } = collect(desc.session_id);
    await until(() => (state.t.length > 0 ? true : undefined), 5000, "first frame");

    const expected = new Map<number, string>();
    for (const cls of ["EC", "LC", "DI", "IE"]) {
      const ack = await post(`/sessions/${desc.session_id}/inject`, { class: cls });
      expect(ack.breath).not.toBeNull();
      expected.set(ack.breath, cls);
    }
    const badges = await until(() => {
      const got = state.badges.filter((b) => expected.has(b.breathIdx));
      return got.length === expected.size ? got : undefined;
    }, 60000, "all injected badges");
    for (const badge of badges) {
      expect(badge.label).toBe(expected.get(badge.breathIdx));
    }
    client.close();
  }, 90000);
});
