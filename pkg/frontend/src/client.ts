// HTTP control client + WebSocket stream client for the live service.
// Control edits always travel over HTTP; the socket is receive-mostly
// (a ping is allowed). Reconnection resumes at the live edge and reports a
// gap instead of splicing.

import { parseStreamMessage, SessionDescriptor, StreamMessage } from "./wire.js";

export class ServerError extends Error {
  status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.status = status;
  }
}

async function jsonOrThrow(resp: Response): Promise<any> {
  if (resp.ok) {
    return resp.status === 204 ? null : resp.json();
  }
  let detail = `${resp.status}`;
  try {
    const body = await resp.json();
    detail = body.detail ?? JSON.stringify(body);
  } catch {
    /* non-JSON error body */
  }
  throw new ServerError(resp.status, detail);
}

export class ControlClient {
  base: string;
  fetchImpl: typeof fetch;

  constructor(base: string, fetchImpl: typeof fetch = fetch) {
    this.base = base.replace(/\/$/, "");
    this.fetchImpl = fetchImpl;
  }

  archetypes(): Promise<any[]> {
    return this.fetchImpl(`${this.base}/archetypes`).then(jsonOrThrow);
  }

  createSession(body: object): Promise<SessionDescriptor> {
    return this.fetchImpl(`${this.base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then(jsonOrThrow);
  }

  update(sessionId: string, patch: object): Promise<SessionDescriptor> {
    return this.fetchImpl(`${this.base}/sessions/${sessionId}`, {
      method: "PATCH",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(patch),
    }).then(jsonOrThrow);
  }

  inject(sessionId: string, cls: string): Promise<{ class: string; breath: number | null }> {
    return this.fetchImpl(`${this.base}/sessions/${sessionId}/inject`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ class: cls }),
    }).then(jsonOrThrow);
  }
}

// Minimal structural WebSocket so tests can inject the `ws` package or a fake.
export interface WebSocketLike {
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
  close(): void;
  send(data: string): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export interface StreamCallbacks {
  onMessage(msg: StreamMessage): void;
  onGap(): void;             // reconnect happened; data between is lost
  onStatus(connected: boolean): void;
}

export class StreamClient {
  private wsUrl: string;
  private factory: WebSocketFactory;
  private callbacks: StreamCallbacks;
  private socket: WebSocketLike | null = null;
  private closed = false;
  private everConnected = false;
  reconnectDelayMs = 1000;

  constructor(wsUrl: string, callbacks: StreamCallbacks, factory: WebSocketFactory) {
    this.wsUrl = wsUrl;
    this.callbacks = callbacks;
    this.factory = factory;
  }

  connect(): void {
    if (this.closed) return;
    const sock = this.factory(this.wsUrl);
    this.socket = sock;
    sock.onopen = () => {
      if (this.everConnected) this.callbacks.onGap();
      this.everConnected = true;
      this.callbacks.onStatus(true);
    };
    sock.onmessage = (ev) => {
      try {
        this.callbacks.onMessage(parseStreamMessage(String(ev.data)));
      } catch (err) {
        console.warn("dropped malformed stream message:", err);
      }
    };
    const retry = () => {
      this.callbacks.onStatus(false);
      if (!this.closed) {
        setTimeout(() => this.connect(), this.reconnectDelayMs);
      }
    };
    sock.onclose = retry;
    sock.onerror = () => { /* close follows */ };
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
