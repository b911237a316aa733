"""Simulate a handful of pressure-support breaths and inspect the morphology.

Generates three breaths for the healthy archetype (one normal, one late
cycling, one ineffective effort), prints the ground-truth labels and writes
an annotated SVG. The late-cycled breath shows the trademark exponential
flow decay after the patient's effort ends; the ineffective effort shows the
pressure dip with flow limited by the one-way expiratory valve.

Run:  python demos/02_single_breaths.py
"""

from ventsim import TubingParams, VentilatorSettings, simulate, label_breaths
from ventsim.breath import (
    AsynchronyPlan,
    BreathOverride,
    build_breath_plan,
    default_effort_for,
)
from ventsim.archetypes import get_archetype
from ventsim.plotting import plot_export

p = get_archetype("Healthy")
settings = VentilatorSettings(peep=5.0, p_insp=13.0)
plan = build_breath_plan(15.0, 14.0, jitter=0.0, rng_seed=1,
                         shape=default_effort_for("Healthy"))
overrides = (
    BreathOverride(),                                        # normal
    BreathOverride(intent="LC", cycle_offset=0.55),          # late cycling
    BreathOverride(intent="IE", suppress_trigger=True),      # ineffective
)
traj = simulate(p, settings, TubingParams(), plan,
                AsynchronyPlan(overrides=overrides))

labels, diags = label_breaths(traj.effort_windows,
                              traj.event_times("trigger"),
                              traj.event_times("cycle"))
for lab in labels:
    sd = "-" if lab.start_delay_ms is None else f"{lab.start_delay_ms:7.1f} ms"
    ed = "-" if lab.end_delay_ms is None else f"{lab.end_delay_ms:7.1f} ms"
    print(f"breath {lab.breath_idx}: {lab.label:7s} start delay {sd} end delay {ed}")

channels = {"t": traj.t, "paw": traj.paw, "flow": traj.flow,
            "vol": traj.vol, "pmus": traj.pmus, "phase": traj.phase}
plot_export(channels, labels, "three_breaths.svg", title="Healthy: N / LC / IE")
print("wrote three_breaths.svg")
