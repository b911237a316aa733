"""Walk through the nonlinear element laws of the lung circuit.

Plots the pressure-volume curves (chest wall, lung, collapsible airway) and
the pressure/volume-dependent resistances for a healthy patient next to a
COPD and an ARDS archetype. Note how the different archetypes operate in
completely different transmural-pressure ranges.

Run:  python demos/01_element_laws.py  (writes element_laws.svg)
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ventsim.archetypes import (
    ARCHETYPES,
    chest_wall_volume,
    collapsible_resistance,
    collapsible_volume,
    lung_volume,
    small_airway_resistance,
)

SHOW = ["Healthy", "COPD2", "ARDS2"]
COLORS = {"Healthy": "tab:blue", "COPD2": "tab:red", "ARDS2": "tab:orange"}

fig, axes = plt.subplots(2, 2, figsize=(10, 7))

pressures = np.linspace(-10, 40, 400)
for name in SHOW:
    p = ARCHETYPES[name]
    axes[0, 0].plot(pressures, [lung_volume(p, x) for x in pressures
                                if True] if p.lung_curve_kind == "sigmoid"
                    else [lung_volume(p, x) if x > p.B_l + 1e-6 else np.nan
                          for x in pressures],
                    color=COLORS[name], label=name)
    axes[0, 1].plot(pressures, [chest_wall_volume(p, x) for x in pressures],
                    color=COLORS[name], label=name)
    axes[1, 0].plot(pressures, [collapsible_volume(p, x) for x in pressures],
                    color=COLORS[name], label=name)
    axes[1, 1].plot(pressures, [collapsible_resistance(p, x) for x in pressures],
                    color=COLORS[name], label=name)

axes[0, 0].set(title="lung volume", xlabel="recoil pressure (cmH2O)", ylabel="L")
axes[0, 1].set(title="chest wall volume", xlabel="curve operand (cmH2O)", ylabel="L")
axes[1, 0].set(title="collapsible airway volume", xlabel="transmural (cmH2O)", ylabel="L")
axes[1, 1].set(title="collapsible airway resistance", xlabel="transmural (cmH2O)",
               ylabel="cmH2O.s/L", ylim=(0, 30))
for ax in axes.flat:
    ax.legend(fontsize=8)

# small airways stretch open with lung volume: print a few spot values
for name in SHOW:
    p = ARCHETYPES[name]
    vols = np.linspace(p.RV + 0.05, p.RV + 2.0, 5)
    rs = ", ".join(f"{small_airway_resistance(p, v):.2f}" for v in vols)
    print(f"{name:8s} R_s over volume sweep: {rs}  (cmH2O.s/L)")

fig.tight_layout()
fig.savefig("element_laws.svg")
print("wrote element_laws.svg")
