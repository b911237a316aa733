"""Time integration of the coupled patient-ventilator circuit.

The native solver replaces the circuit-simulator workflow: steady-state
initialization sets the initial charges directly (an optional fidelity mode
retains the initialization source behind a very large resistor), and an
A-stable implicit stepper (trapezoidal restart + variable-step BDF2) with
damped Newton advances the stiff network. Controller transitions (trigger,
cycle, scheduled overrides) are localized by bisection on the event function
inside the offending step, and the step is split there, so label timestamps
carry no step-size bias.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import kernel
from .archetypes import (
    ArchetypeParams,
    chest_wall_volume,
    collapsible_volume,
    invert_compliance,
    lung_volume,
)
from .breath import (
    AsynchronyPlan,
    BreathOverride,
    BreathPlan,
    CardiacParams,
    pmus_waveform,
)
from .errors import ConfigError, InitializationError, ScenarioError, SolverError
from .ventilator import (
    EXPIRATION,
    INSPIRATION,
    PSVController,
    ResolvedOverride,
    TubingParams,
    VentilatorSettings,
    VentPhase,
    source_pressure,
)

__all__ = [
    "SolverConfig", "CircuitState", "StepInputs", "Event", "Trajectory",
    "ConservationReport", "pack_params", "steady_state", "step", "simulate",
    "run_staged_scenario", "conservation_report", "SimulationEngine",
]

Event = namedtuple("Event", ["kind", "time", "breath"])

EFFORT_START = "effort_start"
EFFORT_END = "effort_end"
TRIGGER = "trigger"
CYCLE = "cycle"


@dataclass(frozen=True)
class SolverConfig:
    max_step: float = 1e-3
    min_step: float = 1e-6
    newton_tol: float = 1e-8
    max_newton_iters: int = 12
    output_rate: float = 100.0
    event_localization_tol: float = 1e-4

    def __post_init__(self):
        if not (0 < self.min_step < self.max_step):
            raise ConfigError("need 0 < min_step < max_step")
        if self.output_rate < 50.0:
            raise ConfigError("output_rate must be at least 50 Hz")
        if self.newton_tol <= 0 or self.event_localization_tol <= 0:
            raise ConfigError("tolerances must be positive")


@dataclass
class CircuitState:
    """All dynamic charges, currents and node pressures at one instant.

    ``V_l``/``V_c`` are the total stored charges (printed curves plus the
    kernel's parasitic shunts); ``p_recoil``/``p_transmural`` carry the lung
    recoil and collapsible transmural pressures, which are the kernel's
    actual state variables.
    """

    V_l: float
    V_c: float
    V_ve: float
    V_cw: float
    q_insp: float
    q_exp: float
    i_insp: float
    i_exp: float
    vol: float
    p_recoil: float
    p_transmural: float
    p_sensor: float
    p_post_ett: float
    p_collapsible: float
    p_alveolar: float
    p_pleural: float
    phase: VentPhase
    t: float

    def vector(self) -> np.ndarray:
        return np.array([self.p_recoil, self.p_transmural, self.V_ve, self.V_cw,
                         self.q_insp, self.q_exp, self.i_insp, self.i_exp,
                         self.vol])

    @classmethod
    def from_vector(cls, y, prm, inp, phase: VentPhase, t: float) -> "CircuitState":
        p_sens, q_aw, p_ao, x2, p_alv, p_pl, _p_a = kernel.recover(y, prm, inp)
        return cls(V_l=kernel.lung_charge(y[0], prm),
                   V_c=kernel.collapsible_charge(y[1], prm),
                   V_ve=y[2], V_cw=y[3], q_insp=y[4],
                   q_exp=y[5], i_insp=y[6], i_exp=y[7], vol=y[8],
                   p_recoil=y[0], p_transmural=y[1],
                   p_sensor=p_sens, p_post_ett=p_ao, p_collapsible=x2,
                   p_alveolar=p_alv, p_pleural=p_pl, phase=phase, t=t)

    def volume_constraint_violation(self) -> float:
        return abs(self.V_l + self.V_c - self.V_cw)


@dataclass(frozen=True)
class StepInputs:
    """Exogenous drive for one public solver step."""

    p_mus: float = 0.0
    src_insp: Optional[float] = None   # default: PEEP (expiratory source value)
    src_exp: Optional[float] = None
    insp_switch_closed: bool = False
    exp_switch_closed: bool = True


def pack_params(p: ArchetypeParams, tubing: TubingParams,
                rd_mode: bool = False, r_d: float = 1e6,
                pip_peep: float = 0.0) -> np.ndarray:
    prm = np.zeros(kernel.NPARAM)
    prm[kernel.P_RV] = p.RV
    prm[kernel.P_TLC] = p.TLC
    prm[kernel.P_ACW] = p.A_cw
    prm[kernel.P_BCW] = p.B_cw
    prm[kernel.P_AL] = p.A_l
    prm[kernel.P_BL] = p.B_l
    prm[kernel.P_DL] = p.D_l
    prm[kernel.P_KL] = p.K_l
    prm[kernel.P_AS] = p.A_s
    prm[kernel.P_BS] = p.B_s
    prm[kernel.P_KS] = p.K_s
    prm[kernel.P_VSTAR] = p.V_star
    prm[kernel.P_VCMAX] = p.V_cmax
    prm[kernel.P_AC] = p.A_c
    prm[kernel.P_BC] = p.B_c
    prm[kernel.P_DC] = p.D_c
    prm[kernel.P_KC] = p.K_c
    prm[kernel.P_AU] = p.A_u
    prm[kernel.P_KU] = p.K_u
    prm[kernel.P_RVE] = p.R_ve
    prm[kernel.P_CVE] = p.C_ve
    prm[kernel.P_KIND] = 1.0 if p.lung_curve_kind == "logarithmic" else 0.0
    prm[kernel.P_ETTK1] = tubing.ett_k1
    prm[kernel.P_ETTK2] = tubing.ett_k2
    prm[kernel.P_IK1] = tubing.insp_limb.k1
    prm[kernel.P_IK2] = tubing.insp_limb.k2
    prm[kernel.P_IL] = tubing.insp_limb.inertance
    prm[kernel.P_IC] = tubing.insp_limb.compliance
    prm[kernel.P_EK1] = tubing.exp_limb.k1
    prm[kernel.P_EK2] = tubing.exp_limb.k2
    prm[kernel.P_EL] = tubing.exp_limb.inertance
    prm[kernel.P_EC] = tubing.exp_limb.compliance
    prm[kernel.P_DON] = tubing.diode_on
    prm[kernel.P_DOFF] = tubing.diode_off
    prm[kernel.P_BAND] = tubing.blend_band
    prm[kernel.P_RDON] = 1.0 if rd_mode else 0.0
    prm[kernel.P_RD] = r_d
    prm[kernel.P_PIP] = pip_peep
    return prm


def _equilibrium_residual(p: ArchetypeParams, peep: float, p_pl: float) -> float:
    # includes the kernel's parasitic shunts (~1e-8 L/cmH2O each) so the
    # returned state is an exact fixed point of the integrator
    operand = peep - p_pl
    return (chest_wall_volume(p, -p_pl) - lung_volume(p, operand)
            - collapsible_volume(p, operand) - 2.0 * kernel.C_PAR * operand)


def steady_state(p: ArchetypeParams, peep: float,
                 tubing: Optional[TubingParams] = None,
                 pip_peep_mode: bool = False):
    """Relaxed equilibrium (P_mus = 0, zero flow) at the given PEEP.

    Solves V_cw(-P_pl) = V_l(PEEP - P_pl) + V_c(PEEP - P_pl) for the pleural
    pressure by bracketed bisection; the Kelvin capacitor starts uncharged and
    all limb charges sit at PEEP. Returns (P_pl, FRC, CircuitState).
    """
    tubing = tubing or TubingParams()
    hi = peep + 40.0
    if p.lung_curve_kind == "logarithmic":
        hi = min(hi, peep - p.B_l - 1e-9)
    lo = peep - 80.0
    f_lo = _equilibrium_residual(p, peep, lo)
    f_hi = _equilibrium_residual(p, peep, hi)
    if f_lo == 0.0:
        root = lo
    elif f_hi == 0.0:
        root = hi
    elif f_lo * f_hi > 0:
        raise InitializationError(
            f"no equilibrium bracket for {p.name} at PEEP {peep} cmH2O "
            f"(residuals {f_lo:.3g}, {f_hi:.3g}); check parameters/conventions")
    else:
        a, b, fa = lo, hi, f_lo
        while b - a > 1e-13:
            m = 0.5 * (a + b)
            fm = _equilibrium_residual(p, peep, m)
            if fm == 0.0:
                a = b = m
                break
            if fa * fm < 0:
                b = m
            else:
                a, fa = m, fm
        root = 0.5 * (a + b)

    p_pl = root
    z = peep - p_pl    # both curve operands equal PEEP - P_pl at zero flow
    prm = pack_params(p, tubing, rd_mode=pip_peep_mode, pip_peep=p_pl)
    v_l = kernel.lung_charge(z, prm)
    v_c = kernel.collapsible_charge(z, prm)
    frc = v_l + v_c
    y = np.array([z, z, 0.0, v_l + v_c,
                  tubing.insp_limb.compliance * peep,
                  tubing.exp_limb.compliance * peep,
                  0.0, 0.0, 0.0])
    inp = np.array([0.0, peep, peep, tubing.switch_off, tubing.switch_on])
    state = CircuitState.from_vector(y, prm, inp, VentPhase(EXPIRATION, 0.0, 0.0), 0.0)
    return p_pl, frc, state


def _inputs_for(settings: VentilatorSettings, tubing: TubingParams,
                phase_is_insp: bool, t_phase_start: float, t: float,
                p_drive: float) -> np.ndarray:
    if phase_is_insp:
        rise = settings.pressurization_rise_time
        if rise <= 0.0:
            src_i = settings.p_insp
        else:
            frac = min((t - t_phase_start) / rise, 1.0)
            src_i = settings.peep + (settings.p_insp - settings.peep) * max(frac, 0.0)
        rsw_i, rsw_e = tubing.switch_on, tubing.switch_off
    else:
        src_i = settings.peep
        rsw_i, rsw_e = tubing.switch_off, tubing.switch_on
    return np.array([p_drive, src_i, settings.peep, rsw_i, rsw_e])


class _EffortCursor:
    """O(1) amortized muscle-pressure lookup over sorted effort onsets."""

    def __init__(self, onsets, shapes):
        self.onsets = onsets
        self.shapes = shapes
        self.ptr = -1

    def extend(self, onsets, shapes):
        self.onsets = onsets
        self.shapes = shapes

    def owner(self, t: float) -> Optional[int]:
        """Index of the last effort with onset <= t, or None."""
        n = len(self.onsets)
        while self.ptr + 1 < n and self.onsets[self.ptr + 1] <= t:
            self.ptr += 1
        while self.ptr >= 0 and self.onsets[self.ptr] > t:
            self.ptr -= 1
        return self.ptr if self.ptr >= 0 else None

    def pmus(self, t: float) -> float:
        k = self.owner(t)
        if k is None:
            return 0.0
        shape = self.shapes[k]
        dt = t - self.onsets[k]
        if dt >= shape.duration:
            return 0.0
        return pmus_waveform(shape, dt)


class SimulationEngine:
    """Resumable event-driven integrator for one patient-ventilator session.

    ``mode`` selects the controller: "closed" (sensing PSV controller with
    per-breath overrides), "cpap" (triggering disabled; efforts against PEEP
    only), or "scheduled" (phase transitions at fixed times, no sensing).
    Probe callbacks observe accepted steps without influencing the dynamics.
    """

    def __init__(self, p: ArchetypeParams, settings: VentilatorSettings,
                 tubing: TubingParams, cfg: SolverConfig,
                 onsets, shapes, overrides,
                 mode: str = "closed",
                 cardiac: Optional[CardiacParams] = None,
                 schedule: Optional[list] = None,
                 t0: float = 0.0,
                 pip_peep_mode: bool = False,
                 on_accept: Optional[Callable] = None):
        if mode not in ("closed", "cpap", "scheduled"):
            raise ConfigError(f"unknown engine mode {mode!r}")
        self.p = p
        self.settings = settings
        self.tubing = tubing
        self.cfg = cfg
        self.mode = mode
        self.cardiac = cardiac or CardiacParams(amplitude=0.0)
        self.on_accept = on_accept
        self.cursor = _EffortCursor(list(onsets), list(shapes))
        self.overrides = list(overrides)
        self.schedule = sorted(schedule or [], key=lambda e: e[0])
        self._sched_ptr = 0

        p_pl, frc, state0 = steady_state(p, settings.peep, tubing,
                                         pip_peep_mode=pip_peep_mode)
        self.p_pl0, self.frc = p_pl, frc
        self.prm = pack_params(p, tubing, rd_mode=pip_peep_mode, pip_peep=p_pl)
        self.y = state0.vector()
        self.t = t0
        self.ctrl = PSVController(settings, t0=t0,
                                  triggering_enabled=(mode == "closed"))
        self.events: list = []
        self._hist_y = None       # previous accepted state for BDF2
        self._hist_h = 0.0
        self._gate_check_time: Optional[float] = t0 + settings.min_exp_time
        self._prev_trigger_val: Optional[float] = None
        self._prev_cycle_val: Optional[float] = None
        self._newton_fail_dump: Optional[str] = None

    # ------------------------------------------------------------------ util

    def set_settings(self, settings: VentilatorSettings):
        """Ventilator settings apply at the next solver step."""
        self.settings = settings
        self.ctrl.settings = settings

    def extend_plan(self, onsets, shapes, overrides):
        self.cursor.extend(list(onsets), list(shapes))
        self.overrides = list(overrides)

    @property
    def phase_is_insp(self) -> bool:
        return self.ctrl.state.phase == INSPIRATION

    def _drive(self, t: float) -> float:
        d = self.cursor.pmus(t)
        if self.cardiac.amplitude:
            d += self.cardiac.amplitude * math.sin(
                2.0 * math.pi * self.cardiac.heart_rate / 60.0 * t)
        return d

    def _inputs(self, t: float) -> np.ndarray:
        return _inputs_for(self.settings, self.tubing, self.phase_is_insp,
                           self.ctrl.state.t_phase_start, t, self._drive(t))

    def sensors(self):
        p_sens, q_aw, *_ = kernel.recover(self.y, self.prm, self._inputs(self.t))
        return p_sens, q_aw

    def state(self) -> CircuitState:
        return CircuitState.from_vector(self.y, self.prm, self._inputs(self.t),
                                        VentPhase(self.ctrl.state.phase,
                                                  self.ctrl.state.t_phase_start,
                                                  self.ctrl.state.peak_insp_flow_so_far),
                                        self.t)

    def _resolve_override(self, breath: Optional[int]) -> ResolvedOverride:
        if breath is None or breath >= len(self.overrides):
            return ResolvedOverride()
        ov: BreathOverride = self.overrides[breath]
        cycle_abs = None
        if ov.cycle_offset is not None:
            effort_end = self.cursor.onsets[breath] + self.cursor.shapes[breath].duration
            cycle_abs = effort_end + ov.cycle_offset
        return ResolvedOverride(suppress_trigger=ov.suppress_trigger,
                                trigger_delay=ov.trigger_delay,
                                cycle_time_abs=cycle_abs)

    # ------------------------------------------------------------- stepping

    def _trial_step(self, h: float, t_new: float):
        inp_new = self._inputs(t_new)
        try:
            if self._hist_y is None:
                f_n = kernel.rhs(self.y, self.prm, self._inputs(self.t))
                return kernel.step_tr(self.y, f_n, h, self.prm, inp_new,
                                      self.cfg.newton_tol, self.cfg.max_newton_iters)
            return kernel.step_bdf2(self.y, self._hist_y, h, self._hist_h,
                                    self.prm, inp_new,
                                    self.cfg.newton_tol, self.cfg.max_newton_iters)
        except np.linalg.LinAlgError:
            return self.y, False

    def _restart(self):
        self._hist_y = None
        self._hist_h = 0.0

    def _fire_trigger(self, t_fire: float, ov: Optional[ResolvedOverride]):
        self.ctrl.fire_trigger(t_fire, ov)
        self.events.append(Event(TRIGGER, t_fire, self.cursor.owner(t_fire)))
        self._gate_check_time = None
        self._prev_cycle_val = None
        self._restart()

    def _fire_cycle(self, t_fire: float):
        self.ctrl.fire_cycle(t_fire)
        self.events.append(Event(CYCLE, t_fire, self.cursor.owner(t_fire)))
        self._gate_check_time = t_fire + self.settings.min_exp_time
        self._prev_trigger_val = None
        self._restart()

    def _boundary_candidates(self, t_target: float):
        cands = [(t_target, "target")]
        ctrl = self.ctrl
        if self.mode == "closed":
            if ctrl.pending_trigger_time is not None:
                cands.append((ctrl.pending_trigger_time, "pending_trigger"))
            if self.phase_is_insp:
                if ctrl.scheduled_cycle_time is not None:
                    cands.append((ctrl.scheduled_cycle_time, "sched_cycle"))
                cands.append((ctrl.state.t_phase_start + self.settings.max_insp_time,
                              "max_insp"))
                rise = self.settings.pressurization_rise_time
                if rise > 0 and self.t < ctrl.state.t_phase_start + rise:
                    cands.append((ctrl.state.t_phase_start + rise, "ramp_end"))
            elif self._gate_check_time is not None:
                cands.append((self._gate_check_time, "gate_open"))
        elif self.mode == "scheduled":
            if self._sched_ptr < len(self.schedule):
                cands.append((self.schedule[self._sched_ptr][0], "schedule"))
            if self.phase_is_insp:
                rise = self.settings.pressurization_rise_time
                if rise > 0 and self.t < ctrl.state.t_phase_start + rise:
                    cands.append((ctrl.state.t_phase_start + rise, "ramp_end"))
        return min(cands, key=lambda c: c[0])

    def _handle_boundary(self, tag: str):
        t = self.t
        ctrl = self.ctrl
        if tag == "pending_trigger":
            self._fire_trigger(ctrl.pending_trigger_time, ctrl.pending_override)
        elif tag == "sched_cycle":
            self._fire_cycle(ctrl.scheduled_cycle_time)
        elif tag == "max_insp":
            if self.phase_is_insp:
                self._fire_cycle(t)
        elif tag == "gate_open":
            self._gate_check_time = None
            p_sens, q_aw = self.sensors()
            if ctrl.trigger_gate_open(t) and ctrl.trigger_event_value(p_sens, q_aw) > 0:
                owner = self.cursor.owner(t)
                ov = self._resolve_override(owner)
                if not ov.suppress_trigger:
                    if ov.trigger_delay > 0:
                        ctrl.pending_trigger_time = t + ov.trigger_delay
                        ctrl.pending_override = ov
                        ctrl._trigger_latched = True
                    else:
                        self._fire_trigger(t, ov)
            self._prev_trigger_val = None
        elif tag == "schedule":
            while (self._sched_ptr < len(self.schedule)
                   and self.schedule[self._sched_ptr][0] <= t + 1e-12):
                _, kind, breath = self.schedule[self._sched_ptr]
                self._sched_ptr += 1
                if kind == TRIGGER:
                    self._fire_trigger(t, None)
                else:
                    self._fire_cycle(t)
        elif tag == "ramp_end":
            self._restart()  # input kink: restart the multistep history

    def _localize(self, event_value, h_acc: float, y_acc):
        """First sub-step length in (0, h_acc] where event_value(y, t) > 0."""
        lo, hi, y_hi = 0.0, h_acc, y_acc
        while hi - lo > self.cfg.event_localization_tol:
            mid = 0.5 * (lo + hi)
            y_mid, ok = self._trial_step(mid, self.t + mid)
            if not ok:
                break
            if event_value(y_mid, self.t + mid) > 0.0:
                hi, y_hi = mid, y_mid
            else:
                lo = mid
        return hi, y_hi

    def advance_to(self, t_stop: float):
        """Integrate the session forward to t_stop (inclusive)."""
        while self.t < t_stop - 1e-12:
            boundary, tag = self._boundary_candidates(t_stop)
            if boundary <= self.t + 1e-12:
                self.t = boundary
                self._handle_boundary(tag)
                continue
            h = min(self.cfg.max_step, boundary - self.t)
            hit_boundary = h >= boundary - self.t - 1e-15
            # Newton retry ladder
            while True:
                y_new, ok = self._trial_step(h, self.t + h)
                if ok:
                    break
                h *= 0.5
                hit_boundary = False
                if h < self.cfg.min_step:
                    st = self.state()
                    raise SolverError(
                        f"Newton failed to converge at t={self.t:.6f}s even at "
                        f"min_step; state dump: {st}")

            h_acc, y_acc = h, y_new
            fired = self._check_continuous_events(h, y_new)
            if fired:
                continue
            # accept
            self._hist_y = self.y
            self._hist_h = h_acc
            self.y = y_acc
            self.t = boundary if hit_boundary else self.t + h_acc
            if hit_boundary and tag != "target":
                self._handle_boundary(tag)
            self._after_accept()

    def _check_continuous_events(self, h: float, y_new) -> bool:
        """Detect and localize trigger/cycle threshold crossings in (t, t+h]."""
        if self.mode != "closed":
            return False
        ctrl = self.ctrl
        t_new = self.t + h
        inp_new = self._inputs(t_new)
        p_sens, q_aw, *_ = kernel.recover(y_new, self.prm, inp_new)

        if not self.phase_is_insp:
            if not ctrl.trigger_gate_open(t_new):
                self._prev_trigger_val = None
                return False
            owner = self.cursor.owner(t_new)
            ov = self._resolve_override(owner)
            if ov.suppress_trigger:
                self._prev_trigger_val = None
                return False
            val = ctrl.trigger_event_value(p_sens, q_aw)
            prev = self._prev_trigger_val
            self._prev_trigger_val = val
            if val > 0.0 and prev is not None and prev <= 0.0:
                def ev(y, t):
                    ps, qa, *_ = kernel.recover(y, self.prm, self._inputs(t))
                    return ctrl.trigger_event_value(ps, qa)

                h_star, y_star = self._localize(ev, h, y_new)
                t_star = self.t + h_star
                self.y = y_star
                self.t = t_star
                self._prev_trigger_val = None
                if ov.trigger_delay > 0:
                    ctrl.pending_trigger_time = t_star + ov.trigger_delay
                    ctrl.pending_override = ov
                    ctrl._trigger_latched = True
                    self._restart()
                else:
                    self._fire_trigger(t_star, ov)
                return True
            return False

        # inspiration: natural flow cycling (disabled when a cycle is scheduled)
        if ctrl.scheduled_cycle_time is not None:
            ctrl.note_inspiratory_flow(q_aw)
            return False
        armed = ctrl.flow_cycle_armed
        val = ctrl.cycle_event_value(q_aw)
        prev = self._prev_cycle_val
        ctrl.note_inspiratory_flow(q_aw)
        self._prev_cycle_val = ctrl.cycle_event_value(q_aw)
        if armed and val > 0.0 and (prev is None or prev <= 0.0):
            def ev(y, t):
                ps, qa, *_ = kernel.recover(y, self.prm, self._inputs(t))
                return ctrl.cycle_event_value(qa)

            h_star, y_star = self._localize(ev, h, y_new)
            self.y = y_star
            self.t = self.t + h_star
            self._prev_cycle_val = None
            self._fire_cycle(self.t)
            return True
        return False

    def _after_accept(self):
        if self.on_accept is not None:
            p_sens, q_aw = self.sensors()
            self.on_accept(self.t, p_sens, q_aw, self.phase_is_insp)


@dataclass
class Trajectory:
    """Sampled channels, state snapshots and ground-truth events of one run."""

    t: np.ndarray
    paw: np.ndarray
    flow: np.ndarray
    vol: np.ndarray
    pmus: np.ndarray
    phase: np.ndarray
    events: list
    states: dict
    meta: dict = field(default_factory=dict)

    @property
    def effort_windows(self):
        starts = sorted(e.time for e in self.events if e.kind == EFFORT_START)
        ends = sorted(e.time for e in self.events if e.kind == EFFORT_END)
        return list(zip(starts, ends))

    def event_times(self, kind: str):
        return sorted(e.time for e in self.events if e.kind == kind)


_STATE_KEYS = ("V_l", "V_c", "V_ve", "V_cw", "q_insp", "q_exp", "i_insp", "i_exp")


def _run_engine(engine: SimulationEngine, record_length: float,
                plan: BreathPlan) -> Trajectory:
    cfg = engine.cfg
    fs = cfg.output_rate
    n = int(round(record_length * fs)) + 1
    t_arr = np.empty(n)
    paw = np.empty(n)
    flow = np.empty(n)
    vol = np.empty(n)
    pmus = np.empty(n)
    phase = np.empty(n, dtype=np.int8)
    states = {k: np.empty(n) for k in _STATE_KEYS}

    def record(k: int):
        t_arr[k] = engine.t
        p_sens, q_aw = engine.sensors()
        paw[k] = p_sens
        flow[k] = q_aw
        vol[k] = engine.y[8]
        pmus[k] = engine.cursor.pmus(engine.t)
        phase[k] = 1 if engine.phase_is_insp else 0
        y = engine.y
        for i, key in enumerate(_STATE_KEYS):
            states[key][k] = y[i]
        # charge slots carry the stored volumes, not the pressure states
        states["V_l"][k] = kernel.lung_charge(y[0], engine.prm)
        states["V_c"][k] = kernel.collapsible_charge(y[1], engine.prm)

    record(0)
    for k in range(1, n):
        engine.advance_to(min(k / fs, record_length))
        record(k)

    events = [Event(EFFORT_START, onset, i)
              for i, onset in enumerate(plan.onsets)]
    events += [Event(EFFORT_END, onset + shape.duration, i)
               for i, (onset, shape) in enumerate(zip(plan.onsets, plan.shapes))]
    events += engine.events
    events.sort(key=lambda e: e.time)
    return Trajectory(t=t_arr, paw=paw, flow=flow, vol=vol, pmus=pmus,
                      phase=phase, events=events, states=states,
                      meta={"archetype": engine.p.name,
                            "frc": engine.frc, "p_pl0": engine.p_pl0})


def simulate(p: ArchetypeParams, settings: VentilatorSettings,
             tubing: Optional[TubingParams], plan: BreathPlan,
             asynch: Optional[AsynchronyPlan] = None,
             cfg: Optional[SolverConfig] = None,
             cardiac: Optional[CardiacParams] = None,
             cpap: bool = False,
             pip_peep_mode: bool = False,
             seed: int = 0) -> Trajectory:
    """Closed-loop (or CPAP) run over one breath plan.

    All stochasticity lives in the plans; ``seed`` is carried in the metadata
    for provenance only. Emits channels at cfg.output_rate plus ground-truth
    effort and controller events.
    """
    tubing = tubing or TubingParams()
    cfg = cfg or SolverConfig()
    if asynch is None:
        asynch = AsynchronyPlan.all_normal(plan.n_breaths)
    if len(asynch) != plan.n_breaths:
        raise ConfigError("asynchrony plan length must match breath plan")
    engine = SimulationEngine(
        p, settings, tubing, cfg, plan.onsets, plan.shapes, asynch.overrides,
        mode="cpap" if cpap else "closed", cardiac=cardiac,
        pip_peep_mode=pip_peep_mode)
    traj = _run_engine(engine, plan.record_length, plan)
    traj.meta.update({"mode": "cpap" if cpap else "closed_loop", "seed": seed})
    return traj


class _CrossingProbe:
    """Passive rising-edge recorder with per-effort attribution."""

    def __init__(self, value_fn, owner_fn):
        self.value_fn = value_fn
        self.owner_fn = owner_fn
        self.prev = None
        self.prev_t = None
        self.times: dict = {}

    def __call__(self, t, p_sens, q_aw, phase_is_insp):
        val = self.value_fn(t, p_sens, q_aw, phase_is_insp)
        if val is None:
            self.prev = None
            return
        if self.prev is not None and self.prev <= 0.0 < val:
            # linear interpolation of the crossing inside the accepted step
            frac = -self.prev / (val - self.prev)
            t_x = self.prev_t + frac * (t - self.prev_t)
            owner = self.owner_fn(t_x)
            if owner is not None and owner not in self.times:
                self.times[owner] = t_x
        self.prev = val
        self.prev_t = t


def run_staged_scenario(p: ArchetypeParams, settings: VentilatorSettings,
                        tubing: Optional[TubingParams], plan: BreathPlan,
                        asynch: Optional[AsynchronyPlan] = None,
                        cfg: Optional[SolverConfig] = None,
                        cardiac: Optional[CardiacParams] = None,
                        keep_stages: bool = False) -> Trajectory:
    """Scripted three-stage pipeline.

    Stage 1 runs PEEP-only and records when the trigger condition is met;
    stage 2 replays with the scheduled (override-adjusted) triggers held on
    and reads off natural flow-cycling times; stage 3 runs with both
    schedules fixed. Output format matches :func:`simulate`.
    """
    tubing = tubing or TubingParams()
    cfg = cfg or SolverConfig()
    if asynch is None:
        asynch = AsynchronyPlan.all_normal(plan.n_breaths)
    if len(asynch) != plan.n_breaths:
        raise ConfigError("asynchrony plan length must match breath plan")
    n = plan.n_breaths
    record_length = plan.record_length
    threshold = settings.peep - settings.trigger_sensitivity

    # --- stage 1: CPAP, record trigger-condition crossings
    eng1 = SimulationEngine(p, settings, tubing, cfg, plan.onsets, plan.shapes,
                            asynch.overrides, mode="cpap", cardiac=cardiac)
    if settings.trigger_kind == "pressure":
        probe1 = _CrossingProbe(lambda t, ps, qa, insp: threshold - ps,
                                eng1.cursor.owner)
    else:
        probe1 = _CrossingProbe(
            lambda t, ps, qa, insp: qa - settings.trigger_sensitivity / 60.0,
            eng1.cursor.owner)
    eng1.on_accept = probe1
    traj1 = _run_engine(eng1, record_length, plan)

    trigger_times = []
    for k in range(n):
        ov = asynch[k]
        t_nat = probe1.times.get(k)
        if ov.suppress_trigger or t_nat is None:
            trigger_times.append(None)
        else:
            trigger_times.append(t_nat + ov.trigger_delay)

    # --- stage 2: triggers held on, record natural cycle times
    sched2 = []
    hold_ends = [None] * n
    fired = [(k, tt) for k, tt in enumerate(trigger_times) if tt is not None]
    for j, (k, tt) in enumerate(fired):
        next_tt = fired[j + 1][1] if j + 1 < len(fired) else record_length + 1.0
        hold = min(tt + settings.max_insp_time,
                   next_tt - settings.min_exp_time,
                   record_length - 1e-3)
        hold = max(hold, tt + 0.2)  # never schedule the cycle before its trigger
        hold_ends[k] = hold
        sched2.append((tt, TRIGGER, k))
        sched2.append((hold, CYCLE, k))
    eng2 = SimulationEngine(p, settings, tubing, cfg, plan.onsets, plan.shapes,
                            asynch.overrides, mode="scheduled", cardiac=cardiac,
                            schedule=sched2)

    frac = settings.cycle_fraction
    peak_state = {"peak": 0.0, "armed": False}

    def cycle_value(t, ps, qa, insp):
        if not insp:
            peak_state["peak"] = 0.0
            peak_state["armed"] = False
            return None
        val = frac * peak_state["peak"] - qa
        if qa > peak_state["peak"]:
            peak_state["peak"] = qa
        from .ventilator import PEAK_FLOW_FLOOR

        if peak_state["peak"] > PEAK_FLOW_FLOOR and qa >= frac * peak_state["peak"]:
            peak_state["armed"] = True
        return val if peak_state["armed"] else None

    probe2 = _CrossingProbe(cycle_value, eng2.cursor.owner)
    eng2.on_accept = probe2
    traj2 = _run_engine(eng2, record_length, plan)

    # --- assemble the final schedule
    cycle_times = [None] * n
    for k in range(n):
        if trigger_times[k] is None:
            continue
        ov = asynch[k]
        if ov.cycle_offset is not None:
            effort_end = plan.onsets[k] + plan.shapes[k].duration
            cycle_times[k] = effort_end + ov.cycle_offset
        else:
            cycle_times[k] = probe2.times.get(k, hold_ends[k])
        if cycle_times[k] is not None and cycle_times[k] <= trigger_times[k]:
            raise ScenarioError(
                f"breath {k}: cycle time {cycle_times[k]:.3f}s not after "
                f"trigger {trigger_times[k]:.3f}s")

    sched3 = []
    for k in range(n):
        if trigger_times[k] is None:
            continue
        sched3.append((trigger_times[k], TRIGGER, k))
        sched3.append((min(cycle_times[k], record_length - 1e-3), CYCLE, k))
    eng3 = SimulationEngine(p, settings, tubing, cfg, plan.onsets, plan.shapes,
                            asynch.overrides, mode="scheduled", cardiac=cardiac,
                            schedule=sched3)
    traj = _run_engine(eng3, record_length, plan)
    traj.meta.update({"mode": "staged", "trigger_times": trigger_times,
                      "cycle_times": cycle_times})
    if keep_stages:
        traj.meta["stages"] = {"stage1": traj1, "stage2": traj2}
    return traj


def step(p: ArchetypeParams, tubing: TubingParams, state: CircuitState,
         inputs: StepInputs, dt: float, cfg: SolverConfig,
         settings: Optional[VentilatorSettings] = None) -> CircuitState:
    """Advance one public step of length dt with fixed exogenous inputs.

    Uses the trapezoidal rule with damped Newton; on non-convergence the step
    is subdivided (dt/2 each retry) down to cfg.min_step.
    """
    if not (cfg.min_step <= dt <= cfg.max_step):
        raise ConfigError(f"dt {dt} outside [{cfg.min_step}, {cfg.max_step}]")
    peep = settings.peep if settings else 5.0
    src_i = inputs.src_insp if inputs.src_insp is not None else peep
    src_e = inputs.src_exp if inputs.src_exp is not None else peep
    rsw_i = tubing.switch_on if inputs.insp_switch_closed else tubing.switch_off
    rsw_e = tubing.switch_on if inputs.exp_switch_closed else tubing.switch_off
    inp = np.array([inputs.p_mus, src_i, src_e, rsw_i, rsw_e])
    prm = pack_params(p, tubing)

    y = state.vector()
    remaining = dt
    h = dt
    t = state.t
    while remaining > 1e-15:
        h = min(h, remaining)
        f_n = kernel.rhs(y, prm, inp)
        y_new, ok = kernel.step_tr(y, f_n, h, prm, inp,
                                   cfg.newton_tol, cfg.max_newton_iters)
        if not ok:
            h *= 0.5
            if h < cfg.min_step:
                raise SolverError(
                    f"Newton failed at t={t:.6f}s even at min_step; state: {state}")
            continue
        y = y_new
        t += h
        remaining -= h
    return CircuitState.from_vector(y, prm, inp, state.phase, t)


@dataclass
class ConservationReport:
    max_volume_constraint_violation: float  # L
    flow_volume_mismatch: float             # fraction of tidal volume
    tidal_volume: float                     # L (largest volume excursion)


def conservation_report(traj: Trajectory) -> ConservationReport:
    """Charge-conservation audit of an accepted run.

    The series constraint |V_l + V_c - V_cw| is integrated as an independent
    redundant state, so this measures honest solver quality. The flow-volume
    mismatch compares the quadrature of the exported sensor-flow channel with
    the change in stored patient gas; the limb compliances sit upstream of the
    sensor, so their stored-volume term is identically zero here.
    """
    viol = np.max(np.abs(traj.states["V_l"] + traj.states["V_c"]
                         - traj.states["V_cw"]))
    integrated = float(np.trapezoid(traj.flow, traj.t))
    stored = float((traj.states["V_l"][-1] + traj.states["V_c"][-1])
                   - (traj.states["V_l"][0] + traj.states["V_c"][0]))
    vt = float(np.max(traj.vol) - np.min(traj.vol))
    mismatch = abs(integrated - stored) / max(vt, 1e-6)
    return ConservationReport(max_volume_constraint_violation=float(viol),
                              flow_volume_mismatch=mismatch,
                              tidal_volume=vt)
