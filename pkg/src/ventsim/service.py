"""Live simulation sessions over HTTP + WebSocket for the educational UI.

Endpoint set: ``POST /sessions`` (create), ``PATCH /sessions/{id}`` (update),
``POST /sessions/{id}/inject`` (inject an asynchrony), ``GET /archetypes``
(catalog), plus the push channel ``WS /sessions/{id}/stream``. Wire messages
on the push channel are length-prefixed JSON texts: ``"<decimal byte
length>\\n<json>"`` inside each WebSocket text frame. The normative field
list lives in docs/stream-schema.md; the schema document ships with the repo.

One asyncio task runs each session's simulation loop, paced to wall clock
(speed multiplier 0.25x-4x). Control changes go through an ordered queue and
apply between frames: ventilator settings at the next solver step, archetype
changes at the next breath boundary. Slow stream consumers are disconnected
rather than stalling the loop.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import math
import uuid
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.websockets import WebSocket, WebSocketDisconnect

from .archetypes import ARCHETYPE_NAMES, archetype_catalog, get_archetype
from .breath import (
    CardiacParams,
    EffortShape,
    _draw_override,
    default_effort_for,
    make_rng,
)
from .errors import ConfigError
from .labeling import INJECTABLE_CLASSES, NORMAL, label_breaths
from .solver import SimulationEngine, SolverConfig
from .ventilator import TubingParams, VentilatorSettings

FRAME_RATE = 20.0          # frames per wall-clock second
FINALIZE_GUARD = 2.5       # s of sim time before a breath's label finalizes
PLAN_HORIZON = 20.0        # s of efforts kept planned ahead of now
SPEED_RANGE = (0.25, 4.0)


def _frame_payload(obj: dict) -> str:
    body = json.dumps(obj, separators=(",", ":"), allow_nan=False)
    return f"{len(body.encode())}\n{body}"


@dataclass
class SessionConfig:
    archetype: str = "Healthy"
    settings: VentilatorSettings = field(default_factory=VentilatorSettings)
    effort: Optional[EffortShape] = None   # None -> archetype-scaled default
    cardiac: CardiacParams = field(default_factory=CardiacParams)
    respiratory_rate: float = 15.0
    speed: float = 1.0
    seed: int = 0

    def current_effort(self) -> EffortShape:
        if self.effort is not None:
            return self.effort
        return default_effort_for(self.archetype)


class Session:
    """One live patient: rolling breath plan, engine, subscribers."""

    def __init__(self, config: SessionConfig, solver_cfg: SolverConfig):
        self.id = uuid.uuid4().hex[:12]
        self.config = config
        self.solver_cfg = solver_cfg
        self.speed = config.speed
        self.paused = False
        self.seq = itertools.count()
        self.subscribers: list[asyncio.Queue] = []
        self.control: asyncio.Queue = asyncio.Queue()
        self.rng = make_rng(config.seed)
        self.onsets: list[float] = []
        self.shapes: list = []
        self.overrides: list = []
        self._pending_injections: list[str] = []
        self._finalized = 0
        self._next_sample = 1
        self._emitted_events = 0
        self.closed = False
        self.tubing = TubingParams()
        self._pending_archetype: Optional[str] = None
        self._extend_plan(0.0)
        self.engine = self._make_engine(get_archetype(config.archetype),
                                        config.settings, t0=0.0)
        self._task: Optional[asyncio.Task] = None

    # ----------------------------------------------------------------- plan

    def _extend_plan(self, t_now: float):
        interval = 60.0 / self.config.respiratory_rate
        next_onset = (self.onsets[-1] + interval) if self.onsets else 1.0
        while next_onset < t_now + PLAN_HORIZON:
            self.onsets.append(next_onset)
            self.shapes.append(self.config.current_effort())
            intent = NORMAL
            if self._pending_injections:
                intent = self._pending_injections.pop(0)
            self.overrides.append(self._make_override(intent))
            next_onset += interval

    def _make_override(self, intent: str):
        return _draw_override(intent, self.rng, self.config.current_effort().duration)

    def _make_engine(self, p, settings, t0: float) -> SimulationEngine:
        return SimulationEngine(
            p, settings, self.tubing, self.solver_cfg,
            self.onsets, self.shapes, self.overrides,
            mode="closed", cardiac=self.config.cardiac, t0=t0)

    # -------------------------------------------------------------- control

    def queue_update(self, patch: dict) -> dict:
        """Validate a settings/speed/rate/effort/archetype patch, then queue it.

        Raises ConfigError (mapped to 422) without touching session state.
        """
        known = {"settings", "speed", "archetype", "paused",
                 "respiratory_rate", "effort_amplitude"}
        unknown = set(patch) - known
        if unknown:
            raise ConfigError(f"unknown update keys: {sorted(unknown)}")
        new_settings = self.config.settings
        if "settings" in patch and patch["settings"]:
            new_settings = self.config.settings.replace(**patch["settings"])
        new_speed = self.speed
        if "speed" in patch and patch["speed"] is not None:
            new_speed = float(patch["speed"])
            if not (SPEED_RANGE[0] <= new_speed <= SPEED_RANGE[1]):
                raise ConfigError(f"speed must lie in {SPEED_RANGE}")
        archetype = patch.get("archetype")
        if archetype is not None and archetype not in ARCHETYPE_NAMES:
            raise ConfigError(f"unknown archetype {archetype!r}")
        new_rate = patch.get("respiratory_rate")
        if new_rate is not None and not (5.0 <= float(new_rate) <= 40.0):
            raise ConfigError("respiratory_rate must lie in [5, 40] /min")
        new_amp = patch.get("effort_amplitude")
        if new_amp is not None and not (0.2 <= float(new_amp) <= 20.0):
            raise ConfigError("effort_amplitude must lie in [0.2, 20] cmH2O")
        paused = patch.get("paused")
        self.control.put_nowait(
            {"settings": new_settings, "speed": new_speed,
             "archetype": archetype, "paused": paused,
             "respiratory_rate": new_rate, "effort_amplitude": new_amp})
        self.config = replace(self.config, settings=new_settings)
        if new_rate is not None:
            self.config = replace(self.config, respiratory_rate=float(new_rate))
        if new_amp is not None:
            base = self.config.current_effort()
            self.config = replace(
                self.config,
                effort=replace(base, amplitude=float(new_amp)))
        self.speed = new_speed
        if paused is not None:
            self.paused = bool(paused)
        return self.describe()

    def inject(self, cls: str) -> dict:
        if cls not in INJECTABLE_CLASSES:
            raise ConfigError(
                f"unknown asynchrony class {cls!r}; one of {INJECTABLE_CLASSES}")
        # retrofit the earliest planned breath that has not started yet
        t_now = self.engine.t
        for k in range(len(self.onsets)):
            if self.onsets[k] > t_now + 0.05 and self.overrides[k].intent == NORMAL:
                self.overrides[k] = self._make_override(cls)
                self.engine.extend_plan(self.onsets, self.shapes, self.overrides)
                return {"class": cls, "breath": k, "onset": self.onsets[k]}
        self._pending_injections.append(cls)
        return {"class": cls, "breath": None, "onset": None}

    def describe(self) -> dict:
        return {
            "session_id": self.id,
            "archetype": self.config.archetype,
            "settings": asdict(self.config.settings),
            "speed": self.speed,
            "paused": self.paused,
            "respiratory_rate": self.config.respiratory_rate,
            "t": self.engine.t,
        }

    # ----------------------------------------------------------------- loop

    def _apply_control(self):
        applied_archetype = None
        rebuild_tail = False
        while not self.control.empty():
            op = self.control.get_nowait()
            self.engine.set_settings(op["settings"])
            if op["archetype"]:
                applied_archetype = op["archetype"]
            if op.get("respiratory_rate") is not None or \
                    op.get("effort_amplitude") is not None:
                rebuild_tail = True
        if applied_archetype and applied_archetype != self.config.archetype:
            # archetype swaps wait for a breath boundary: expiration, no effort
            self._pending_archetype = applied_archetype
        if rebuild_tail:
            self._rebuild_future_breaths()
        self._maybe_swap_archetype()

    def _rebuild_future_breaths(self):
        """Re-plan breaths that have not started yet with the current rate/effort.

        Past and in-flight breaths keep their indices so finalized labels stay
        stable; only the future tail is regenerated.
        """
        t_now = self.engine.t
        keep = sum(1 for o in self.onsets if o <= t_now + 0.5)
        del self.onsets[keep:]
        del self.shapes[keep:]
        del self.overrides[keep:]
        self._extend_plan(t_now)
        self.engine.extend_plan(self.onsets, self.shapes, self.overrides)

    def _maybe_swap_archetype(self):
        pend = self._pending_archetype
        if not pend:
            return
        t = self.engine.t
        in_effort = any(o <= t <= o + s.duration
                        for o, s in zip(self.onsets, self.shapes))
        if self.engine.phase_is_insp or in_effort:
            return
        self.config = replace(self.config, archetype=pend)
        self.engine = self._make_engine(get_archetype(pend),
                                        self.config.settings, t0=t)
        self._pending_archetype = None

    def _advance_frame(self) -> dict:
        dt_sim = self.speed / FRAME_RATE
        t_end = self.engine.t + dt_sim
        fs = self.solver_cfg.output_rate
        self._extend_plan(t_end)
        self.engine.extend_plan(self.onsets, self.shapes, self.overrides)
        samples = {k: [] for k in ("t", "paw", "flow", "vol", "pmus", "phase")}
        while self._next_sample / fs <= t_end:
            t_s = self._next_sample / fs
            self.engine.advance_to(t_s)
            p_sens, q_aw = self.engine.sensors()
            samples["t"].append(round(t_s, 6))
            samples["paw"].append(round(p_sens, 5))
            samples["flow"].append(round(q_aw, 6))
            samples["vol"].append(round(float(self.engine.y[8]), 6))
            samples["pmus"].append(round(self.engine.cursor.pmus(t_s), 5))
            samples["phase"].append(1 if self.engine.phase_is_insp else 0)
            self._next_sample += 1
        self.engine.advance_to(t_end)

        # event timestamps are ground truth: emitted at full precision
        new_events = [
            {"kind": e.kind, "time": e.time, "breath": e.breath}
            for e in self.engine.events[self._emitted_events:]]
        self._emitted_events = len(self.engine.events)
        labels = self._finalize_labels()
        return {
            "type": "frame",
            "session": self.id,
            "seq": next(self.seq),
            "t0": samples["t"][0] if samples["t"] else self.engine.t,
            "t1": self.engine.t,
            "samples": samples,
            "events": new_events,
            "labels": labels,
            "settings": asdict(self.config.settings),
            "archetype": self.config.archetype,
            "speed": self.speed,
        }

    def _finalize_labels(self) -> list:
        t_now = self.engine.t
        horizon = 60.0 / self.config.respiratory_rate
        done = [(o, o + s.duration)
                for o, s in zip(self.onsets, self.shapes)
                if o + s.duration + FINALIZE_GUARD <= t_now]
        if len(done) <= self._finalized:
            return []
        triggers, cycles = [], []
        boundary = done[-1][1] + FINALIZE_GUARD
        pending_trigger = None
        for e in self.engine.events:
            if e.time > boundary:
                continue
            if e.kind == "trigger":
                pending_trigger = e.time
            elif e.kind == "cycle" and pending_trigger is not None:
                triggers.append(pending_trigger)
                cycles.append(e.time)
                pending_trigger = None
        labels, _diags = label_breaths(done, triggers, cycles, horizon=horizon)
        out = []
        for lab in labels[self._finalized:]:
            out.append({
                "breath_idx": lab.breath_idx,
                "t_insp_start": lab.t_insp_start,
                "t_insp_end": lab.t_insp_end,
                "t_trigger": lab.t_trigger,
                "t_cycle": lab.t_cycle,
                "start_delay_ms": lab.start_delay_ms,
                "end_delay_ms": lab.end_delay_ms,
                "label": lab.label,
                "intent": self.overrides[lab.breath_idx].intent,
            })
        self._finalized = len(labels)
        return out

    def _broadcast(self, payload: str):
        for queue in list(self.subscribers):
            try:
                queue.put_nowait(payload)
            except asyncio.QueueFull:
                # backpressure by disconnection: drop the slow consumer
                self.subscribers.remove(queue)
                try:
                    queue.get_nowait()
                except asyncio.QueueEmpty:
                    pass
                queue.put_nowait(None)  # sentinel: closes that stream

    async def run(self):
        loop = asyncio.get_running_loop()
        next_deadline = loop.time()
        try:
            while not self.closed:
                self._apply_control()
                if self.paused:
                    frame = {"type": "heartbeat", "session": self.id,
                             "seq": next(self.seq), "paused": True,
                             "t": self.engine.t, "samples": {"t": []},
                             "events": [], "labels": []}
                else:
                    frame = await asyncio.to_thread(self._advance_frame)
                self._broadcast(_frame_payload(frame))
                next_deadline += 1.0 / FRAME_RATE
                delay = next_deadline - loop.time()
                if delay < -1.0:  # fell far behind; resynchronize
                    next_deadline = loop.time()
                await asyncio.sleep(max(delay, 0.0))
        except asyncio.CancelledError:
            pass

    def start(self):
        self._task = asyncio.get_running_loop().create_task(self.run())

    async def close(self):
        self.closed = True
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass


def _settings_from_payload(payload: Optional[dict]) -> VentilatorSettings:
    if not payload:
        return VentilatorSettings()
    allowed = set(VentilatorSettings.__dataclass_fields__)
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"unknown settings keys: {sorted(unknown)}")
    return VentilatorSettings(**payload)


def create_app() -> FastAPI:
    app = FastAPI(title="ventsim live service", version="0.1.0")
    sessions: dict[str, Session] = {}

    @app.get("/archetypes")
    def list_archetypes():
        return archetype_catalog()

    @app.post("/sessions", status_code=201)
    async def create_session(payload: dict):
        archetype = payload.get("archetype", "Healthy")
        if archetype not in ARCHETYPE_NAMES:
            raise HTTPException(404, f"unknown archetype {archetype!r}")
        try:
            cfg = SessionConfig(
                archetype=archetype,
                settings=_settings_from_payload(payload.get("settings")),
                effort=EffortShape(**payload["effort"]) if payload.get("effort")
                else EffortShape(),
                respiratory_rate=float(payload.get("respiratory_rate", 15.0)),
                speed=float(payload.get("speed", 1.0)),
                seed=int(payload.get("seed", 0)),
            )
            if not (SPEED_RANGE[0] <= cfg.speed <= SPEED_RANGE[1]):
                raise ConfigError(f"speed must lie in {SPEED_RANGE}")
            session = await asyncio.to_thread(Session, cfg, SolverConfig())
        except ConfigError as err:
            raise HTTPException(422, str(err))
        sessions[session.id] = session
        session.start()
        return session.describe()

    def _get(session_id: str) -> Session:
        if session_id not in sessions:
            raise HTTPException(404, f"no session {session_id!r}")
        return sessions[session_id]

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _get(session_id).describe()

    @app.patch("/sessions/{session_id}")
    async def update_session(session_id: str, payload: dict):
        session = _get(session_id)
        try:
            return session.queue_update(payload)
        except (ConfigError, TypeError) as err:
            raise HTTPException(422, str(err))

    @app.post("/sessions/{session_id}/inject")
    async def inject(session_id: str, payload: dict):
        session = _get(session_id)
        try:
            return session.inject(payload.get("class", ""))
        except ConfigError as err:
            raise HTTPException(422, str(err))

    @app.delete("/sessions/{session_id}", status_code=204)
    async def delete_session(session_id: str):
        session = sessions.pop(session_id, None)
        if session is None:
            raise HTTPException(404, f"no session {session_id!r}")
        await session.close()

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(ws: WebSocket, session_id: str):
        session = sessions.get(session_id)
        if session is None:
            await ws.close(code=4404)
            return
        await ws.accept()
        queue: asyncio.Queue = asyncio.Queue(maxsize=64)
        session.subscribers.append(queue)

        async def drain_client():
            # bidirectional: accept pings/ignore other client texts
            try:
                while True:
                    await ws.receive_text()
            except WebSocketDisconnect:
                pass

        drain = asyncio.get_running_loop().create_task(drain_client())
        try:
            while True:
                payload = await queue.get()
                if payload is None:  # disconnected for falling behind
                    break
                await ws.send_text(payload)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            drain.cancel()
            if queue in session.subscribers:
                session.subscribers.remove(queue)

    @app.get("/healthz")
    def health():
        return {"ok": True, "sessions": len(sessions)}

    return app
