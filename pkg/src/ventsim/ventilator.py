"""Ventilator side: endotracheal tube, limbs, valves, sources, PSV controller.

The circuit mirrors a pressure-support ventilator: an inspiratory limb
(pressure source -> switch -> one-way valve -> compliance shunt -> Rohrer
resistor -> inertance) and an expiratory limb (PEEP source, mirrored, with its
valve conducting toward the source so the patient cannot inhale from the
contaminated expiratory connection), joined at the sensor node where the
endotracheal tube begins. Pressure and flow are sensed there.

Valves and switches are smooth two-state conductances (0.01 cmH2O blending
band) so the Newton iteration stays differentiable; all constants here are
configurable order-of-magnitude bench values, not claims.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import ConfigError

__all__ = [
    "EXPIRATION", "INSPIRATION", "ETT_ROHRER",
    "VentilatorSettings", "LimbParams", "TubingParams", "VentPhase",
    "SourceBranch", "VentBranchSet", "ResolvedOverride",
    "rohrer_resistance", "source_pressure", "assemble_vent_branches",
    "PSVController",
]

EXPIRATION = "Expiration"
INSPIRATION = "Inspiration"

# Rohrer pairs (K1 cmH2O.s/L, K2 cmH2O.s^2/L^2) by ETT inner diameter, mm.
# The 8.0 entry is the package default; other rows are bench-order values.
ETT_ROHRER = {
    6.5: (7.0, 18.0),
    7.0: (5.5, 12.0),
    7.5: (4.0, 8.5),
    8.0: (3.0, 6.0),
    8.5: (2.5, 4.5),
}

# Natural flow cycling stays disarmed until peak flow clears this floor, L/s.
PEAK_FLOW_FLOOR = 0.02


@dataclass(frozen=True)
class VentilatorSettings:
    """PSV/CPAP settings. P_insp is absolute (above atmospheric), not above PEEP."""

    peep: float = 5.0
    p_insp: float = 15.0
    pressurization_rise_time: float = 0.10  # 0 -> block wave
    trigger_kind: str = "pressure"          # "pressure" | "flow"
    trigger_sensitivity: float = 1.0        # cmH2O below PEEP, or L/min
    cycle_fraction: float = 0.25            # of peak inspiratory flow
    max_insp_time: float = 3.0
    min_exp_time: float = 0.4

    def __post_init__(self):
        if not (self.p_insp > self.peep >= 0.0):
            raise ConfigError(f"need P_insp > PEEP >= 0, got {self.p_insp}, {self.peep}")
        if not (0.0 < self.cycle_fraction < 1.0):
            raise ConfigError("cycle_fraction must lie in (0, 1)")
        if self.trigger_kind not in ("pressure", "flow"):
            raise ConfigError(f"unknown trigger kind {self.trigger_kind!r}")
        if self.pressurization_rise_time < 0 or self.trigger_sensitivity <= 0:
            raise ConfigError("rise time >= 0 and positive sensitivity required")
        if self.max_insp_time <= 0 or self.min_exp_time < 0:
            raise ConfigError("timing safeguards must be positive")

    def replace(self, **kw) -> "VentilatorSettings":
        return replace(self, **kw)


@dataclass(frozen=True)
class LimbParams:
    k1: float = 0.5           # cmH2O.s/L
    k2: float = 0.3           # cmH2O.s^2/L^2
    inertance: float = 0.02   # cmH2O.s^2/L
    compliance: float = 0.0015  # L/cmH2O

    def __post_init__(self):
        if min(self.k1, self.k2, self.inertance, self.compliance) <= 0:
            raise ConfigError("limb parameters must be positive")


@dataclass(frozen=True)
class TubingParams:
    """Breathing-circuit elements: limbs, ETT Rohrer pair, valve resistances."""

    insp_limb: LimbParams = field(default_factory=LimbParams)
    exp_limb: LimbParams = field(default_factory=LimbParams)
    ett_k1: float = 3.0
    ett_k2: float = 6.0
    # Valve on-resistance carries the physical check-valve/PEEP-valve drop;
    # with the 0.01 cmH2O blend band the worst-case reverse leak through the
    # smooth transition is ~0.28 * band/on ~ 3 mL/s.
    diode_on: float = 1.0      # cmH2O.s/L
    diode_off: float = 1.0e6
    switch_on: float = 0.01
    switch_off: float = 1.0e6
    blend_band: float = 0.01   # cmH2O, smooth diode transition width

    def __post_init__(self):
        if min(self.ett_k1, self.ett_k2, self.diode_on, self.switch_on) <= 0:
            raise ConfigError("tubing resistances must be positive")
        if self.diode_off < 1e6 * self.diode_on:
            raise ConfigError("diode off-resistance must be >= 1e6x on-resistance")
        if self.switch_off < 1e6 * self.switch_on:
            raise ConfigError("switch off-resistance must be >= 1e6x on-resistance")

    @classmethod
    def for_ett(cls, inner_diameter_mm: float, **kw) -> "TubingParams":
        try:
            k1, k2 = ETT_ROHRER[inner_diameter_mm]
        except KeyError:
            raise ConfigError(
                f"no ETT coefficients for {inner_diameter_mm} mm; "
                f"known sizes: {sorted(ETT_ROHRER)}") from None
        return cls(ett_k1=k1, ett_k2=k2, **kw)


@dataclass
class VentPhase:
    """Controller phase state; transitions happen only through the controller."""

    phase: str = EXPIRATION
    t_phase_start: float = 0.0
    peak_insp_flow_so_far: float = 0.0


def rohrer_resistance(k1: float, k2: float, q: float) -> float:
    """Flow-dependent turbulence resistance R = K1 + K2 |Q| (even in Q)."""
    return k1 + k2 * abs(q)


def source_pressure(settings: VentilatorSettings, phase: VentPhase, t: float) -> float:
    """Inspiratory source value: PEEP in expiration, PEEP->P_insp ramp in inspiration."""
    if phase.phase == EXPIRATION:
        return settings.peep
    rise = settings.pressurization_rise_time
    if rise <= 0.0:
        return settings.p_insp
    frac = min((t - phase.t_phase_start) / rise, 1.0)
    return settings.peep + (settings.p_insp - settings.peep) * max(frac, 0.0)


@dataclass(frozen=True)
class SourceBranch:
    """One ventilator limb with its switch state resolved for the current phase."""

    name: str
    switch_resistance: float
    diode_conducts_toward: str  # "node" (inspiratory) | "source" (expiratory)
    diode_on: float
    diode_off: float
    compliance: float
    k1: float
    k2: float
    inertance: float


@dataclass(frozen=True)
class VentBranchSet:
    inspiratory: SourceBranch
    expiratory: SourceBranch
    ett_k1: float
    ett_k2: float
    blend_band: float


def assemble_vent_branches(tubing: TubingParams, settings: VentilatorSettings,
                           phase: VentPhase) -> VentBranchSet:
    """Resolve the two limbs and the ETT with switch states matching the phase.

    Inspiration closes the inspiratory switch and opens the expiratory one;
    expiration mirrors that. The inspiratory valve conducts from the source
    toward the circuit, the expiratory valve toward the PEEP source.
    """
    insp_on = phase.phase == INSPIRATION
    insp = SourceBranch(
        name="inspiratory",
        switch_resistance=tubing.switch_on if insp_on else tubing.switch_off,
        diode_conducts_toward="node",
        diode_on=tubing.diode_on, diode_off=tubing.diode_off,
        compliance=tubing.insp_limb.compliance,
        k1=tubing.insp_limb.k1, k2=tubing.insp_limb.k2,
        inertance=tubing.insp_limb.inertance)
    exp = SourceBranch(
        name="expiratory",
        switch_resistance=tubing.switch_off if insp_on else tubing.switch_on,
        diode_conducts_toward="source",
        diode_on=tubing.diode_on, diode_off=tubing.diode_off,
        compliance=tubing.exp_limb.compliance,
        k1=tubing.exp_limb.k1, k2=tubing.exp_limb.k2,
        inertance=tubing.exp_limb.inertance)
    return VentBranchSet(inspiratory=insp, expiratory=exp,
                         ett_k1=tubing.ett_k1, ett_k2=tubing.ett_k2,
                         blend_band=tubing.blend_band)


@dataclass(frozen=True)
class ResolvedOverride:
    """Per-breath override with the cycle schedule resolved to absolute time."""

    suppress_trigger: bool = False
    trigger_delay: float = 0.0
    cycle_time_abs: Optional[float] = None


class PSVController:
    """Pressure-triggered, flow-cycled PSV state machine.

    Deterministic function of sampled sensor values, time and overrides;
    every transition is recorded with its timestamp in ``transitions``.
    A trigger-delay override postpones the fire time past the natural
    threshold crossing; a scheduled cycle time replaces natural flow cycling
    for that breath; suppression blocks the trigger for the whole effort.
    """

    def __init__(self, settings: VentilatorSettings, t0: float = 0.0,
                 triggering_enabled: bool = True):
        self.settings = settings
        self.state = VentPhase(EXPIRATION, t0, 0.0)
        self.triggering_enabled = triggering_enabled
        self.transitions: list = []
        self.pending_trigger_time: Optional[float] = None
        self.pending_override: Optional[ResolvedOverride] = None
        self.scheduled_cycle_time: Optional[float] = None
        self.flow_cycle_armed = False
        self._trigger_latched = False

    # threshold helpers shared with the solver's event localization
    def trigger_event_value(self, sensed_pressure: float, sensed_flow: float) -> float:
        """Positive once the trigger condition is met."""
        if self.settings.trigger_kind == "pressure":
            return (self.settings.peep - self.settings.trigger_sensitivity) - sensed_pressure
        return sensed_flow - self.settings.trigger_sensitivity / 60.0

    def cycle_event_value(self, sensed_flow: float) -> float:
        """Positive once inspiratory flow drops below the cycling fraction."""
        return self.settings.cycle_fraction * self.state.peak_insp_flow_so_far - sensed_flow

    def trigger_gate_open(self, t: float) -> bool:
        return (self.state.phase == EXPIRATION and self.triggering_enabled
                and not self._trigger_latched
                and (t - self.state.t_phase_start) >= self.settings.min_exp_time)

    def fire_trigger(self, t: float, override: Optional[ResolvedOverride] = None):
        self.state = VentPhase(INSPIRATION, t, 0.0)
        self.transitions.append(("trigger", t))
        self.pending_trigger_time = None
        self.pending_override = None
        self._trigger_latched = False
        self.flow_cycle_armed = False
        self.scheduled_cycle_time = override.cycle_time_abs if override else None

    def fire_cycle(self, t: float):
        self.state = VentPhase(EXPIRATION, t, 0.0)
        self.transitions.append(("cycle", t))
        self.scheduled_cycle_time = None
        self.flow_cycle_armed = False

    def note_inspiratory_flow(self, q: float):
        if self.state.phase != INSPIRATION:
            return
        if q > self.state.peak_insp_flow_so_far:
            self.state.peak_insp_flow_so_far = q
        if (self.state.peak_insp_flow_so_far > PEAK_FLOW_FLOOR
                and q >= self.settings.cycle_fraction * self.state.peak_insp_flow_so_far):
            self.flow_cycle_armed = True

    def natural_cycle_due(self, q: float, t: float) -> bool:
        if self.scheduled_cycle_time is not None:
            return False
        if (t - self.state.t_phase_start) >= self.settings.max_insp_time:
            return True
        return self.flow_cycle_armed and self.cycle_event_value(q) > 0.0

    def step(self, sensed_pressure: float, sensed_flow: float, t: float,
             override: Optional[ResolvedOverride] = None) -> VentPhase:
        """Sampled controller update; returns the (possibly new) phase state."""
        ov = override or ResolvedOverride()
        if self.state.phase == EXPIRATION:
            if self.pending_trigger_time is not None and t >= self.pending_trigger_time:
                self.fire_trigger(self.pending_trigger_time, self.pending_override)
                return self.state
            if self.trigger_gate_open(t) and not ov.suppress_trigger \
                    and self.trigger_event_value(sensed_pressure, sensed_flow) > 0.0:
                if ov.trigger_delay > 0.0:
                    self.pending_trigger_time = t + ov.trigger_delay
                    self.pending_override = ov
                    self._trigger_latched = True
                else:
                    self.fire_trigger(t, ov)
            return self.state
        # inspiration
        self.note_inspiratory_flow(sensed_flow)
        if self.scheduled_cycle_time is not None and t >= self.scheduled_cycle_time:
            self.fire_cycle(self.scheduled_cycle_time)
        elif self.natural_cycle_due(sensed_flow, t):
            self.fire_cycle(t)
        return self.state
