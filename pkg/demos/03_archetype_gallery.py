"""Pressure/flow/volume waveforms across all nine patient archetypes.

Runs a short closed-loop record per archetype at its calibrated-ish support
level, stacks the waveforms into one figure and prints each archetype's
equilibrium (FRC, pleural pressure). COPD hyperinflates with slow expiratory
decay, ARDS3 breathes small and fast-decaying, fibrosis tends to cycle early.

Run:  python demos/03_archetype_gallery.py
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ventsim import TubingParams, VentilatorSettings, simulate, steady_state
from ventsim.archetypes import ARCHETYPE_NAMES, ARCHETYPES
from ventsim.breath import build_breath_plan, default_effort_for

settings = VentilatorSettings(peep=5.0, p_insp=14.0)
fig, axes = plt.subplots(3, 1, figsize=(11, 8), sharex=True)

for name in ARCHETYPE_NAMES:
    p = ARCHETYPES[name]
    p_pl, frc, _ = steady_state(p, settings.peep)
    print(f"{name:9s} FRC {frc:5.2f} L at pleural {p_pl:7.2f} cmH2O")
    plan = build_breath_plan(15.0, 12.0, jitter=0.0, rng_seed=3,
                             shape=default_effort_for(name))
    traj = simulate(p, settings, TubingParams(), plan)
    axes[0].plot(traj.t, traj.paw, lw=0.8, label=name)
    axes[1].plot(traj.t, traj.flow, lw=0.8)
    axes[2].plot(traj.t, traj.vol, lw=0.8)

axes[0].set_ylabel("paw (cmH2O)")
axes[1].set_ylabel("flow (L/s)")
axes[2].set_ylabel("volume (L)")
axes[2].set_xlabel("time (s)")
axes[0].legend(fontsize=7, ncol=3)
fig.tight_layout()
fig.savefig("archetype_gallery.svg")
print("wrote archetype_gallery.svg")
