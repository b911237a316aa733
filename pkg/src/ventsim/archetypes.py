"""Patient archetype parameters and the nonlinear element laws of the lung circuit.

Units throughout: pressure cmH2O, volume L, flow L/s, time s. Resistances are
cmH2O.s/L and compliances L/cmH2O; no unit conversion layers anywhere.

The archetype table prints the viscoelastic (Kelvin body) constants under the
names Rd/Cd. They are stored here as ``R_ve``/``C_ve``: the initialization
resistor of the circuit is described as "very high" so that it cannot influence
the run, which rules out values of order 1, while a resistor-capacitor pair of
this magnitude is exactly the tissue stress-relaxation element the model family
carries. See README ("Rd/Cd vs R_ve/C_ve") for the full argument.

Sign conventions (fixed here, used by the solver):

* lung curve operand       P_l  = alveolar pressure - pleural pressure
* collapsible curve operand P_t = collapsible-segment pressure - pleural pressure
* chest-wall curve operand P_cw = -(pleural pressure - pressure below the chest
  wall element); with relaxed muscles this is simply -P_pl. Outward distension
  of the chest then raises volume, and the healthy archetype relaxes to a
  plausible FRC (~2.8 L at P_pl ~ -2.8 cmH2O).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

from .errors import DomainError

__all__ = [
    "ArchetypeParams",
    "ARCHETYPES",
    "ARCHETYPE_NAMES",
    "get_archetype",
    "chest_wall_volume",
    "lung_volume",
    "collapsible_volume",
    "collapsible_resistance",
    "small_airway_resistance",
    "upper_airway_resistance",
    "invert_compliance",
    "chest_wall_bounds",
    "lung_volume_bounds",
    "archetype_catalog",
    "export_catalog",
]

LOGARITHMIC = "logarithmic"
SIGMOID = "sigmoid"


@dataclass(frozen=True)
class ArchetypeParams:
    """One named patient archetype: 21 fitted constants plus the curve selector.

    ``lung_curve_kind`` is ``"logarithmic"`` for the healthy archetype and
    ``"sigmoid"`` for the disease archetypes; the unused constants of the other
    family are kept at their printed sentinel values (K_l = 0 for sigmoid,
    D_l = 0 for logarithmic).
    """

    name: str
    RV: float        # residual volume, L
    TLC: float       # total lung capacity, L
    A_cw: float      # chest wall curve center, cmH2O
    B_cw: float      # chest wall curve width, cmH2O (negative as printed)
    A_l: float       # lung curve scale (L for sigmoid, cmH2O for logarithmic)
    B_l: float       # lung curve constant (1/cmH2O sigmoid, cmH2O logarithmic)
    D_l: float       # sigmoid lung curve center, cmH2O
    K_l: float       # logarithmic lung curve rate, 1/L (0 for sigmoid kind)
    A_s: float       # small airway resistance scale, cmH2O.s/L
    B_s: float       # small airway resistance floor, cmH2O.s/L
    K_s: float       # small airway volume-rate exponent, dimensionless
    V_star: float    # small airway normalization volume, L
    V_cmax: float    # collapsible segment capacity, L
    A_c: float       # collapsible curve rate, 1/cmH2O
    B_c: float       # collapsible curve center, cmH2O
    D_c: float       # collapsible curve shape power, dimensionless
    K_c: float       # collapsible resistance scale, cmH2O.s/L
    A_u: float       # upper airway Rohrer intercept, cmH2O.s/L
    K_u: float       # upper airway Rohrer slope, cmH2O.s^2/L^2
    R_ve: float      # viscoelastic (Kelvin) resistance, cmH2O.s/L
    C_ve: float      # viscoelastic (Kelvin) compliance, L/cmH2O
    lung_curve_kind: str = SIGMOID

    def __post_init__(self):
        if not (self.RV > 0 and self.TLC > self.RV):
            raise ValueError(f"{self.name}: need 0 < RV < TLC")
        if not (self.V_cmax > 0 and self.C_ve > 0 and self.R_ve > 0):
            raise ValueError(f"{self.name}: V_cmax, C_ve, R_ve must be positive")
        if self.lung_curve_kind == SIGMOID:
            if not (self.A_l > 0 and self.B_l > 0):
                raise ValueError(f"{self.name}: sigmoid lung curve needs A_l > 0, B_l > 0")
        elif self.lung_curve_kind == LOGARITHMIC:
            if self.K_l == 0 or self.A_l <= 0:
                raise ValueError(f"{self.name}: logarithmic lung curve needs K_l != 0, A_l > 0")
        else:
            raise ValueError(f"{self.name}: unknown lung_curve_kind {self.lung_curve_kind!r}")
        if self.V_star == self.RV:
            raise ValueError(f"{self.name}: V_star must differ from RV")


def _arch(name, RV, TLC, A_cw, B_cw, A_l, B_l, D_l, K_l, A_s, B_s, K_s, V_star,
          V_cmax, A_c, B_c, D_c, K_c, A_u, K_u, R_ve, C_ve, kind):
    return ArchetypeParams(
        name=name, RV=RV, TLC=TLC, A_cw=A_cw, B_cw=B_cw, A_l=A_l, B_l=B_l,
        D_l=D_l, K_l=K_l, A_s=A_s, B_s=B_s, K_s=K_s, V_star=V_star,
        V_cmax=V_cmax, A_c=A_c, B_c=B_c, D_c=D_c, K_c=K_c, A_u=A_u, K_u=K_u,
        R_ve=R_ve, C_ve=C_ve, lung_curve_kind=kind)


# Fitted constants per archetype. Column order matches the dataclass, one row
# per archetype; the healthy row is the only logarithmic one.
ARCHETYPES = {
    "Healthy":  _arch("Healthy",  1.24, 5.19, 1.4, -3.5, 0.2, -0.5,  0.0, 1.0,  2.2, 0.02, -10.9, 5.3, 0.10, 0.341, 9.692, 0.411, 0.21, 0.34, 0.46,  1.0, 0.50, LOGARITHMIC),
    "Obese1":   _arch("Obese1",   0.25, 4.0,  8.0, -5.0, 3.0,  0.2,  10.0, 0.0, 4.0, 0.5,  -5.0,  4.0, 0.07, 0.400, 9.0,   0.411, 0.50, 2.0,  8.0,  18.0, 0.20, SIGMOID),
    "Obese2":   _arch("Obese2",   0.25, 4.0,  8.0, -5.0, 3.0,  0.15, 14.4, 0.0, 7.0, 1.5,  -5.0,  3.5, 0.06, 0.550, 10.0,  0.411, 1.50, 2.0,  8.0,  18.0, 0.20, SIGMOID),
    "ARDS1":    _arch("ARDS1",    1.24, 5.19, 1.4, -3.5, 3.7,  0.15, 10.0, 0.0, 3.0, 1.0,  -4.0,  4.5, 0.07, 0.600, 10.0,  0.411, 1.00, 0.34, 0.46,  3.0, 0.20, SIGMOID),
    "ARDS2":    _arch("ARDS2",    1.24, 5.19, 1.4, -3.5, 3.0,  0.15, 14.4, 0.0, 7.0, 1.5,  -5.0,  3.5, 0.06, 0.550, 17.0,  0.411, 1.50, 0.34, 0.46,  3.0, 0.20, SIGMOID),
    "ARDS3":    _arch("ARDS3",    1.24, 5.19, 1.4, -3.5, 2.3,  0.15, 20.0, 0.0, 18.0, 2.0, -14.0, 3.0, 0.05, 0.770, 27.0,  0.411, 2.40, 0.34, 0.46,  3.0, 0.20, SIGMOID),
    "COPD1":    _arch("COPD1",    3.0,  7.0,  3.0, -5.0, 6.9,  0.5,  2.3,  0.0, 2.2, 1.5,  -20.0, 5.3, 0.05, 1.500, 6.2,   0.411, 2.00, 0.34, 0.46,  3.0, 0.20, SIGMOID),
    "COPD2":    _arch("COPD2",    3.0,  7.0,  3.0, -5.0, 6.9,  0.5,  2.3,  0.0, 7.0, 3.0,  -2.5,  6.0, 0.05, 1.200, 7.0,   0.411, 0.60, 0.34, 2.5,   1.0, 0.50, SIGMOID),
    "Fibrosis": _arch("Fibrosis", 1.1,  3.4,  1.4, -3.0, 3.4,  0.06, 7.0,  0.0, 2.0, 0.5,  -10.9, 3.4, 0.10, 0.341, 7.0,   0.411, 0.50, 0.34, 0.46,  2.0, 0.05, SIGMOID),
}

ARCHETYPE_NAMES = tuple(ARCHETYPES)


def get_archetype(name: str) -> ArchetypeParams:
    try:
        return ARCHETYPES[name]
    except KeyError:
        raise KeyError(f"unknown archetype {name!r}; known: {', '.join(ARCHETYPE_NAMES)}") from None


def _check_finite(x: float, what: str) -> float:
    if not math.isfinite(x):
        raise DomainError(f"{what} must be finite, got {x!r}")
    return x


def chest_wall_volume(p: ArchetypeParams, P_cw: float) -> float:
    """Chest wall volume on its relaxation curve.

    V_cw = (TLC - RV) / (0.99 + exp(-(P_cw - A_cw)/B_cw)) + RV

    The 0.99 in the denominator is implemented verbatim from the source table,
    so the upper asymptote is (TLC - RV)/0.99 + RV, slightly above TLC.
    Strictly monotone in P_cw (decreasing for the printed B_cw < 0).
    """
    _check_finite(P_cw, "P_cw")
    return (p.TLC - p.RV) / (0.99 + math.exp(-(P_cw - p.A_cw) / p.B_cw)) + p.RV


def chest_wall_bounds(p: ArchetypeParams) -> tuple[float, float]:
    """Open range of chest_wall_volume: (RV, (TLC-RV)/0.99 + RV)."""
    return p.RV, (p.TLC - p.RV) / 0.99 + p.RV


def lung_volume(p: ArchetypeParams, operand: float) -> float:
    """Lung volume on the archetype's pressure-volume curve.

    Sigmoid kind (disease): V_l = A_l / (1 + exp(-B_l (P - D_l))), range (0, A_l).
    Logarithmic kind (healthy): V_l = log((P - B_l)/A_l) / K_l, needs P > B_l.

    ``operand`` is the pressure across the lung compliance (alveolar minus
    pleural); the solver feeds the same operand for both kinds.
    """
    _check_finite(operand, "lung curve operand")
    if p.lung_curve_kind == SIGMOID:
        return p.A_l / (1.0 + math.exp(-p.B_l * (operand - p.D_l)))
    arg = (operand - p.B_l) / p.A_l
    if arg <= 0.0:
        raise DomainError(
            f"{p.name}: logarithmic lung curve needs pressure > B_l = {p.B_l} cmH2O, "
            f"got {operand} cmH2O")
    return math.log(arg) / p.K_l


def lung_volume_bounds(p: ArchetypeParams) -> tuple[float, float]:
    """Open volume range of the lung curve ((0, A_l) sigmoid, unbounded log)."""
    if p.lung_curve_kind == SIGMOID:
        return 0.0, p.A_l
    return -math.inf, math.inf


def collapsible_volume(p: ArchetypeParams, P_t: float) -> float:
    """Collapsible (middle) airway volume, V_c = V_cmax / (1+e^{-A_c (P_t-B_c)})^{D_c}."""
    _check_finite(P_t, "P_t")
    return p.V_cmax / (1.0 + math.exp(-p.A_c * (P_t - p.B_c))) ** p.D_c


def collapsible_resistance(p: ArchetypeParams, P_t: float) -> float:
    """Collapsible airway resistance, R_c = K_c (1+e^{-A_c (P_t-B_c)})^{2 D_c}.

    Satisfies R_c = K_c (V_cmax / V_c)^2 identically and tends to K_c as the
    segment is fully distended.
    """
    _check_finite(P_t, "P_t")
    return p.K_c * (1.0 + math.exp(-p.A_c * (P_t - p.B_c))) ** (2.0 * p.D_c)


def small_airway_resistance(p: ArchetypeParams, V_l: float) -> float:
    """Small airway resistance, R_s = A_s exp(K_s (V_l-RV)/(V*-RV)) + B_s.

    Falls with lung volume for K_s < 0: inflation stretches the small airways
    open.
    """
    _check_finite(V_l, "V_l")
    return p.A_s * math.exp(p.K_s * (V_l - p.RV) / (p.V_star - p.RV)) + p.B_s


def upper_airway_resistance(p: ArchetypeParams, dVcw_dt: float) -> float:
    """Upper airway Rohrer resistance, R_u = A_u + K_u |dV_cw/dt| (even in flow)."""
    return p.A_u + p.K_u * abs(dVcw_dt)


def invert_compliance(curve: str, p: ArchetypeParams, V: float) -> float:
    """Operand pressure for a given volume on one of the three compliance curves.

    ``curve`` is one of ``"chest_wall"``, ``"lung"``, ``"collapsible"``. All
    three curves are strictly monotone, so the inverse is closed-form; V must
    lie strictly inside the curve's open range or a DomainError names the curve
    and its bounds.
    """
    _check_finite(V, "V")
    if curve == "chest_wall":
        lo, hi = chest_wall_bounds(p)
        if not (lo < V < hi):
            raise DomainError(
                f"{p.name}: chest_wall volume {V} L outside open range ({lo}, {hi}) L")
        e = (p.TLC - p.RV) / (V - p.RV) - 0.99
        return p.A_cw - p.B_cw * math.log(e)
    if curve == "lung":
        if p.lung_curve_kind == SIGMOID:
            if not (0.0 < V < p.A_l):
                raise DomainError(
                    f"{p.name}: lung volume {V} L outside open range (0, {p.A_l}) L")
            return p.D_l - math.log(p.A_l / V - 1.0) / p.B_l
        return p.A_l * math.exp(p.K_l * V) + p.B_l
    if curve == "collapsible":
        if not (0.0 < V < p.V_cmax):
            raise DomainError(
                f"{p.name}: collapsible volume {V} L outside open range (0, {p.V_cmax}) L")
        return p.B_c - math.log((p.V_cmax / V) ** (1.0 / p.D_c) - 1.0) / p.A_c
    raise ValueError(f"unknown curve {curve!r}")


def archetype_catalog() -> list[dict]:
    """The built-in archetypes as plain dicts (field names as in ArchetypeParams)."""
    return [asdict(ARCHETYPES[name]) for name in ARCHETYPE_NAMES]


def export_catalog(path) -> None:
    """Write the archetype catalog as JSON; one object per archetype.

    This document is the single source of truth shared by the CLI manifests
    and the UI's archetype listing endpoint.
    """
    with open(path, "w") as fh:
        json.dump(archetype_catalog(), fh, indent=2)
        fh.write("\n")
