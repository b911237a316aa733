"""Patient-side driving signals: efforts, breath schedules, asynchrony plans.

Muscle pressure is a rounded trapezoid with independent rise and fall slopes,
always inspiratory-negative; a zero-mean cardiac sinusoid can be added to the
drive before solving. Plans are pure functions of their parameters and seed:
bit-identical across runs, with per-record seeds derived through
``numpy.random.SeedSequence([master_seed, *key])`` (the documented mixing
function used everywhere in this package).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError
from .labeling import CLASSES, DI, DI_EC, DI_LC, EC, IE, LC, NORMAL

__all__ = [
    "EffortShape", "BreathPlan", "BreathOverride", "AsynchronyPlan",
    "CardiacParams", "DEFAULT_EFFORT", "DEFAULT_DISTRIBUTIONS",
    "ARCHETYPE_EFFORT_SCALE", "default_effort_for",
    "pmus_waveform", "cardiac_oscillation", "build_breath_plan",
    "build_asynchrony_plan", "derive_seed", "make_rng",
]


def derive_seed(master_seed, *key: int) -> np.random.SeedSequence:
    """Mix a master seed with an integer key path (record index, stream id)."""
    if isinstance(master_seed, (tuple, list)):
        parts = [*master_seed, *key]
    else:
        parts = [master_seed, *key]
    return np.random.SeedSequence([int(x) for x in parts])


def make_rng(master_seed, *key: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *key))


@dataclass(frozen=True)
class EffortShape:
    """Rounded-trapezoid muscle effort; amplitude applied with negative sign."""

    amplitude: float = 3.0        # cmH2O, > 0
    rise_time: float = 0.35      # s
    plateau_time: float = 0.30   # s
    fall_time: float = 0.35      # s
    corner_smoothing: float = 0.05  # s, radius of the corner rounding

    def __post_init__(self):
        if min(self.amplitude, self.rise_time, self.plateau_time,
               self.fall_time, self.corner_smoothing) <= 0:
            raise ConfigError("effort shape parameters must all be positive")
        s = self.corner_smoothing
        if self.rise_time < 4 * s or self.fall_time < 4 * s:
            raise ConfigError("ramps must be at least 4x the corner smoothing")

    @property
    def duration(self) -> float:
        return self.rise_time + self.plateau_time + self.fall_time


DEFAULT_EFFORT = EffortShape()

# Default per-archetype effort-amplitude scaling (configurable). Obstructed
# patients fight intrinsic PEEP and stiff lungs transmit effort slowly, so
# their efforts must be stronger for the trigger to fire inside the normal
# start-delay band; the values keep natural trigger delays below ~230 ms at
# the default sensitivity.
ARCHETYPE_EFFORT_SCALE = {
    "Healthy": 1.25,
    "Obese1": 1.5,
    "Obese2": 1.5,
    "ARDS1": 1.5,
    "ARDS2": 1.25,
    "ARDS3": 3.0,
    "COPD1": 2.0,
    "COPD2": 2.0,
    "Fibrosis": 1.5,
}


def default_effort_for(archetype: str, base: EffortShape = DEFAULT_EFFORT,
                       scales: Optional[dict] = None) -> EffortShape:
    """Archetype-scaled effort: base shape with amplitude times the scale."""
    table = ARCHETYPE_EFFORT_SCALE if scales is None else scales
    scale = table.get(archetype, 1.0)
    if scale == 1.0:
        return base
    return replace(base, amplitude=base.amplitude * scale)


@dataclass(frozen=True)
class CardiacParams:
    """Cardiogenic oscillation added to the drive (not to the pmus channel)."""

    amplitude: float = 0.25   # cmH2O
    heart_rate: float = 72.0  # beats/min

    def __post_init__(self):
        if self.amplitude < 0 or self.heart_rate <= 0:
            raise ConfigError("cardiac amplitude >= 0 and heart rate > 0 required")


def _corner(u: float, s: float, a: float, b: float) -> float:
    # integral of the blended slope a -> b over [-s, u], u in [-s, s]
    return a * (u + s) + 0.5 * (b - a) * ((u + s) - (2 * s / math.pi) * math.cos(math.pi * u / (2 * s)))


def pmus_waveform(shape: EffortShape, t_since_onset: float) -> float:
    """Muscle pressure at ``t_since_onset`` seconds into one effort.

    Zero before onset and after rise+plateau+fall; exactly -amplitude across
    the plateau; C1-continuous everywhere (quarter-cosine corner blends inside
    the support).
    """
    if not math.isfinite(t_since_onset):
        raise ConfigError("t_since_onset must be finite")
    t = t_since_onset
    A, Tr, Tp, Tf, s = (shape.amplitude, shape.rise_time, shape.plateau_time,
                        shape.fall_time, shape.corner_smoothing)
    end = Tr + Tp + Tf
    if t <= 0.0 or t >= end:
        return 0.0
    m1 = -A / (Tr - 2 * s)   # rise slope (negative: inspiratory)
    m2 = A / (Tf - 2 * s)    # fall slope
    if t < 2 * s:
        return _corner(t - s, s, 0.0, m1)
    v = _corner(s, s, 0.0, m1)                      # value at t = 2s
    if t < Tr - 2 * s:
        return v + m1 * (t - 2 * s)
    v += m1 * (Tr - 4 * s)                          # value at t = Tr - 2s
    if t < Tr:
        return v + _corner(t - (Tr - s), s, m1, 0.0)
    if t <= Tr + Tp:
        return -A
    t2 = t - (Tr + Tp)
    if t2 < 2 * s:
        return -A + _corner(t2 - s, s, 0.0, m2)
    v = -A + _corner(s, s, 0.0, m2)
    if t2 < Tf - 2 * s:
        return v + m2 * (t2 - 2 * s)
    v += m2 * (Tf - 4 * s)
    return v + _corner(t2 - (Tf - s), s, m2, 0.0)


def cardiac_oscillation(amplitude: float, heart_rate: float, t: float) -> float:
    """Zero-phase sinusoid: amplitude * sin(2*pi*heart_rate/60 * t)."""
    if heart_rate <= 0:
        raise ConfigError("heart_rate must be positive")
    if amplitude == 0.0:
        return 0.0
    return amplitude * math.sin(2.0 * math.pi * (heart_rate / 60.0) * t)


@dataclass(frozen=True)
class BreathPlan:
    """Scheduled effort onsets and shapes for one record."""

    onsets: tuple
    shapes: tuple
    record_length: float
    respiratory_rate: float
    jitter: float

    def __post_init__(self):
        if len(self.onsets) != len(self.shapes):
            raise ConfigError("one shape per onset required")
        prev_end = -math.inf
        for onset, shape in zip(self.onsets, self.shapes):
            if onset <= prev_end:
                raise ConfigError("effort windows must be strictly increasing and non-overlapping")
            prev_end = onset + shape.duration
        expected = self.respiratory_rate * self.record_length / 60.0
        if self.onsets and abs(len(self.onsets) - expected) > max(1.0, 0.2 * expected):
            raise ConfigError("breath count inconsistent with rate and record length")

    @property
    def n_breaths(self) -> int:
        return len(self.onsets)

    def effort_windows(self) -> list:
        return [(o, o + s.duration) for o, s in zip(self.onsets, self.shapes)]

    def pmus(self, t: float) -> float:
        """Total effort waveform at absolute record time t (efforts don't overlap)."""
        for onset, shape in zip(self.onsets, self.shapes):
            if onset <= t < onset + shape.duration:
                return pmus_waveform(shape, t - onset)
        return 0.0


# Margin kept after the last effort so late cycling still fits in the record.
_TAIL_MARGIN = 1.0
_START_OFFSET = 1.0


def build_breath_plan(rate: float, record_length: float, jitter: float = 0.0,
                      rng_seed: int = 0, shape: EffortShape = DEFAULT_EFFORT,
                      amplitude_jitter: float = 0.0) -> BreathPlan:
    """Randomized breath schedule: ``round(rate * length / 60)`` efforts.

    Inter-breath intervals are 60/rate scaled by (1 + jitter * z) with z
    standard normal truncated at 3 sigma; intervals are floored so consecutive
    effort windows never overlap. Deterministic for a given seed.
    """
    if not (5.0 <= rate <= 40.0):
        raise ConfigError(f"respiratory rate {rate} outside [5, 40] /min")
    if record_length <= 0:
        raise ConfigError("record_length must be positive")
    if jitter < 0 or amplitude_jitter < 0:
        raise ConfigError("jitter fractions must be >= 0")

    rng = np.random.default_rng(derive_seed(rng_seed))
    n = int(round(rate * record_length / 60.0))
    interval = 60.0 / rate
    min_gap = shape.duration + 0.2
    if interval * (1 - 3 * jitter) < min_gap or interval < min_gap:
        raise ConfigError(
            f"intervals of {interval:.2f}s cannot fit efforts of {shape.duration:.2f}s "
            "without overlap; lower the rate, jitter or effort duration")

    onsets = [_START_OFFSET]
    for _ in range(n - 1):
        z = float(np.clip(rng.standard_normal(), -3.0, 3.0))
        onsets.append(onsets[-1] + max(interval * (1.0 + jitter * z), min_gap))
    shapes = []
    for _ in onsets:
        if amplitude_jitter > 0:
            z = float(np.clip(rng.standard_normal(), -2.5, 2.5))
            amp = shape.amplitude * max(1.0 + amplitude_jitter * z, 0.2)
            shapes.append(replace(shape, amplitude=amp))
        else:
            shapes.append(shape)
    # drop efforts that would not leave room for cycling before the record ends
    kept = [(o, sh) for o, sh in zip(onsets, shapes)
            if o + sh.duration + _TAIL_MARGIN <= record_length]
    onsets = tuple(o for o, _ in kept)
    shapes = tuple(sh for _, sh in kept)
    return BreathPlan(onsets=onsets, shapes=shapes, record_length=record_length,
                      respiratory_rate=rate, jitter=jitter)


# Default per-archetype intent distributions. COPD favors late cycling and
# fibrosis early cycling; remaining mass is rescaled from the healthy mix.
def _rescaled(base: dict, **pinned: float) -> dict:
    free = {k: v for k, v in base.items() if k not in pinned}
    scale = (1.0 - sum(pinned.values())) / sum(free.values())
    out = {k: v * scale for k, v in free.items()}
    out.update(pinned)
    return out


_HEALTHY_DIST = {NORMAL: 0.70, EC: 0.08, LC: 0.08, DI: 0.08, IE: 0.06}

DEFAULT_DISTRIBUTIONS = {
    "Healthy": dict(_HEALTHY_DIST),
    "Obese1": dict(_HEALTHY_DIST),
    "Obese2": dict(_HEALTHY_DIST),
    "ARDS1": dict(_HEALTHY_DIST),
    "ARDS2": dict(_HEALTHY_DIST),
    "ARDS3": dict(_HEALTHY_DIST),
    "COPD1": _rescaled(_HEALTHY_DIST, **{LC: 0.25}),
    "COPD2": _rescaled(_HEALTHY_DIST, **{LC: 0.25}),
    "Fibrosis": _rescaled(_HEALTHY_DIST, **{EC: 0.25}),
}


@dataclass(frozen=True)
class BreathOverride:
    """Per-breath ventilator timing override realizing one intent.

    ``trigger_delay`` postpones the natural trigger; ``cycle_offset`` schedules
    the cycle at effort_end + offset (replacing natural flow cycling for that
    breath); ``suppress_trigger`` blocks triggering for the whole effort.
    """

    intent: str = NORMAL
    trigger_delay: float = 0.0
    cycle_offset: Optional[float] = None
    suppress_trigger: bool = False


@dataclass(frozen=True)
class AsynchronyPlan:
    """Per-breath intents and timing overrides for one record."""

    overrides: tuple  # of BreathOverride, one per breath

    def __post_init__(self):
        for ov in self.overrides:
            if ov.intent not in CLASSES:
                raise ConfigError(f"unknown intent {ov.intent!r}")
            if ov.intent == IE and not ov.suppress_trigger:
                raise ConfigError("IE intent must suppress the trigger")
            if ov.intent in (DI, DI_LC, DI_EC) and ov.trigger_delay <= 0.25:
                raise ConfigError("delayed-inspiration intents need trigger delay > 250 ms")
            if ov.intent in (EC, DI_EC) and not (ov.cycle_offset is not None and ov.cycle_offset < -0.1):
                raise ConfigError("early-cycling intents need cycle offset < -100 ms")
            if ov.intent in (LC, DI_LC) and not (ov.cycle_offset is not None and ov.cycle_offset > 0.3):
                raise ConfigError("late-cycling intents need cycle offset > 300 ms")

    def __len__(self):
        return len(self.overrides)

    def __getitem__(self, k) -> BreathOverride:
        return self.overrides[k]

    @classmethod
    def all_normal(cls, n: int) -> "AsynchronyPlan":
        return cls(overrides=tuple(BreathOverride() for _ in range(n)))

    @classmethod
    def all_suppressed(cls, n: int) -> "AsynchronyPlan":
        """Every trigger suppressed: a CPAP run."""
        return cls(overrides=tuple(
            BreathOverride(intent=IE, suppress_trigger=True) for _ in range(n)))


def _draw_override(intent: str, rng: np.random.Generator,
                   effort_duration: float) -> BreathOverride:
    u = rng.uniform
    if intent == NORMAL:
        return BreathOverride()
    if intent == IE:
        return BreathOverride(intent=IE, suppress_trigger=True)
    if intent == EC:
        return BreathOverride(intent=EC, cycle_offset=float(u(-0.35, -0.15)))
    if intent == LC:
        return BreathOverride(intent=LC, cycle_offset=float(u(0.35, 0.60)))
    if intent == DI:
        # pin the cycle inside the normal band so the label stays pure DI
        return BreathOverride(intent=DI, trigger_delay=float(u(0.30, 0.60)),
                              cycle_offset=float(u(0.05, 0.20)))
    if intent == DI_LC:
        return BreathOverride(intent=DI_LC, trigger_delay=float(u(0.30, 0.60)),
                              cycle_offset=float(u(0.35, 0.60)))
    if intent == DI_EC:
        # keep the delayed trigger ahead of the early cycle
        offset = float(u(-0.30, -0.15))
        max_delay = max(effort_duration + offset - 0.45, 0.26)
        return BreathOverride(intent=DI_EC,
                              trigger_delay=float(u(0.26, max(max_delay, 0.27))),
                              cycle_offset=offset)
    raise ConfigError(f"unknown intent {intent!r}")


def build_asynchrony_plan(plan: BreathPlan, archetype: str,
                          distribution: Optional[dict] = None,
                          rng_seed: int = 0) -> AsynchronyPlan:
    """Draw per-breath intents i.i.d. from a class distribution.

    ``distribution`` maps class name -> probability (must sum to 1); defaults
    to the archetype's entry in DEFAULT_DISTRIBUTIONS. Overrides are drawn
    consistently with each intent.
    """
    if distribution is None:
        if archetype not in DEFAULT_DISTRIBUTIONS:
            raise ConfigError(f"no default distribution for archetype {archetype!r}")
        distribution = DEFAULT_DISTRIBUTIONS[archetype]
    for key in distribution:
        if key not in CLASSES:
            raise ConfigError(f"unknown asynchrony class {key!r}")
    names = [c for c in CLASSES if distribution.get(c, 0.0) > 0.0]
    probs = np.array([distribution[c] for c in names], dtype=float)
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ConfigError(f"distribution sums to {probs.sum()}, not 1")

    rng = np.random.default_rng(derive_seed(rng_seed))
    draws = rng.choice(len(names), size=plan.n_breaths, p=probs)
    overrides = tuple(
        _draw_override(names[i], rng, plan.shapes[k].duration)
        for k, i in enumerate(draws))
    return AsynchronyPlan(overrides=overrides)
