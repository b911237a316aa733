import { describe, expect, it } from "vitest";

import { parseStreamMessage } from "../src/wire.js";

function frame(obj: object): string {
  const body = JSON.stringify(obj);
  return `${new TextEncoder().encode(body).length}\n${body}`;
}

const SAMPLE = {
  type: "frame",
  session: "abc",
  seq: 1,
  samples: { t: [0.01, 0.02], paw: [5.0, 5.1], flow: [0, 0.1], vol: [0, 0.001], pmus: [0, 0], phase: [0, 0] },
  events: [],
  labels: [],
};

describe("length-prefixed stream framing", () => {
  it("parses a valid frame", () => {
    const msg = parseStreamMessage(frame(SAMPLE));
    expect(msg.type).toBe("frame");
    expect(msg.samples.t).toEqual([0.01, 0.02]);
  });

  it("counts UTF-8 bytes, not code units", () => {
    const obj = { ...SAMPLE, session: "schön" };
    expect(() => parseStreamMessage(frame(obj))).not.toThrow();
  });

  it("rejects a wrong length prefix", () => {
    const body = JSON.stringify(SAMPLE);
    expect(() => parseStreamMessage(`${body.length + 3}\n${body}`))
      .toThrow(/length mismatch/);
  });

  it("rejects missing prefix", () => {
    expect(() => parseStreamMessage(JSON.stringify(SAMPLE)))
      .toThrow(/length/);
  });

  it("rejects unknown message types", () => {
    expect(() => parseStreamMessage(frame({ ...SAMPLE, type: "mystery" })))
      .toThrow(/unknown stream message type/);
  });

  it("accepts heartbeats with empty samples", () => {
    const hb = { type: "heartbeat", session: "abc", seq: 2, paused: true,
                 samples: { t: [] }, events: [], labels: [] };
    expect(parseStreamMessage(frame(hb)).type).toBe("heartbeat");
  });
});
