"""Ventilator-side unit tests: Rohrer law, sources, controller, branch assembly."""

import numpy as np
import pytest

from ventsim.errors import ConfigError
from ventsim.ventilator import (
    EXPIRATION,
    INSPIRATION,
    PSVController,
    ResolvedOverride,
    TubingParams,
    VentilatorSettings,
    VentPhase,
    assemble_vent_branches,
    rohrer_resistance,
    source_pressure,
)


class TestRohrer:
    def test_zero_flow_intercept(self):
        assert rohrer_resistance(3.0, 6.0, 0.0) == 3.0

    def test_default_ett_at_half_lps(self):
        assert rohrer_resistance(3.0, 6.0, 0.5) == 6.0

    def test_even_in_flow(self):
        rng = np.random.default_rng(0)
        for q in rng.uniform(-3, 3, 200):
            assert rohrer_resistance(0.5, 0.3, q) == rohrer_resistance(0.5, 0.3, -q)
            assert rohrer_resistance(0.5, 0.3, q) >= 0.5


class TestSourcePressure:
    settings = VentilatorSettings(peep=5.0, p_insp=15.0, pressurization_rise_time=0.1)

    def test_expiration_holds_peep(self):
        phase = VentPhase(EXPIRATION, 0.0, 0.0)
        for t in (0.0, 1.0, 50.0):
            assert source_pressure(self.settings, phase, t) == 5.0

    def test_block_wave(self):
        s = self.settings.replace(pressurization_rise_time=0.0)
        phase = VentPhase(INSPIRATION, 2.0, 0.0)
        assert source_pressure(s, phase, 2.0) == 15.0
        assert source_pressure(s, phase, 2.001) == 15.0

    def test_ramp_midpoint(self):
        phase = VentPhase(INSPIRATION, 2.0, 0.0)
        assert source_pressure(self.settings, phase, 2.05) == pytest.approx(10.0)
        assert source_pressure(self.settings, phase, 2.2) == 15.0


class TestSettingsInvariants:
    def test_pinsp_above_peep(self):
        with pytest.raises(ConfigError):
            VentilatorSettings(peep=10.0, p_insp=10.0)
        with pytest.raises(ConfigError):
            VentilatorSettings(peep=-1.0, p_insp=5.0)

    def test_cycle_fraction_bounds(self):
        with pytest.raises(ConfigError):
            VentilatorSettings(cycle_fraction=0.0)
        with pytest.raises(ConfigError):
            VentilatorSettings(cycle_fraction=1.0)

    def test_tubing_off_resistance_ratio(self):
        with pytest.raises(ConfigError):
            TubingParams(diode_on=0.005, diode_off=100.0)

    def test_ett_catalog(self):
        t = TubingParams.for_ett(7.5)
        assert (t.ett_k1, t.ett_k2) == (4.0, 8.5)
        with pytest.raises(ConfigError):
            TubingParams.for_ett(12.0)


class TestController:
    settings = VentilatorSettings(peep=5.0, p_insp=15.0, trigger_sensitivity=1.0,
                                  cycle_fraction=0.25, min_exp_time=0.4)

    def test_pressure_trigger_fires(self):
        ctrl = PSVController(self.settings)
        state = ctrl.step(sensed_pressure=5.0 - 1.2, sensed_flow=0.0, t=0.5)
        assert state.phase == INSPIRATION
        assert ctrl.transitions == [("trigger", 0.5)]

    def test_trigger_gated_by_min_exp_time(self):
        ctrl = PSVController(self.settings)
        state = ctrl.step(3.8, 0.0, t=0.2)  # before the gate opens
        assert state.phase == EXPIRATION

    def test_trigger_needs_threshold(self):
        ctrl = PSVController(self.settings)
        state = ctrl.step(4.5, 0.0, t=1.0)  # only 0.5 below PEEP
        assert state.phase == EXPIRATION

    def test_flow_cycling(self):
        ctrl = PSVController(self.settings)
        ctrl.step(3.5, 0.0, t=1.0)
        assert ctrl.state.phase == INSPIRATION
        ctrl.step(20.0, 0.8, t=1.3)   # establishes the peak, arms cycling
        state = ctrl.step(20.0, 0.19, t=2.0)  # 0.19 < 0.25 * 0.8
        assert state.phase == EXPIRATION
        assert ctrl.transitions[-1] == ("cycle", 2.0)

    def test_cycling_not_armed_below_floor(self):
        ctrl = PSVController(self.settings)
        ctrl.step(3.5, 0.0, t=1.0)
        state = ctrl.step(20.0, -0.01, t=1.01)  # tiny backflow right after trigger
        assert state.phase == INSPIRATION

    def test_max_insp_time_safeguard(self):
        ctrl = PSVController(self.settings)
        ctrl.step(3.5, 0.0, t=1.0)
        state = ctrl.step(20.0, 0.5, t=1.0 + self.settings.max_insp_time)
        assert state.phase == EXPIRATION

    def test_suppression_blocks_whole_effort(self):
        ctrl = PSVController(self.settings)
        ov = ResolvedOverride(suppress_trigger=True)
        for t in np.arange(0.5, 2.5, 0.01):
            state = ctrl.step(3.0, 0.0, t, override=ov)
        assert state.phase == EXPIRATION
        assert ctrl.transitions == []

    def test_trigger_delay_postpones_fire(self):
        ctrl = PSVController(self.settings)
        ov = ResolvedOverride(trigger_delay=0.3)
        ctrl.step(3.5, 0.0, t=1.0, override=ov)
        assert ctrl.state.phase == EXPIRATION
        ctrl.step(3.5, 0.0, t=1.1, override=ov)
        assert ctrl.state.phase == EXPIRATION
        ctrl.step(4.9, 0.0, t=1.31, override=ov)
        assert ctrl.state.phase == INSPIRATION
        assert ctrl.transitions == [("trigger", 1.3)]  # scheduled timestamp

    def test_scheduled_cycle_replaces_flow_cycling(self):
        ctrl = PSVController(self.settings)
        ov = ResolvedOverride(cycle_time_abs=2.5)
        ctrl.step(3.5, 0.0, t=1.0, override=ov)
        ctrl.step(20.0, 0.8, t=1.2)
        state = ctrl.step(20.0, 0.05, t=1.5)  # would flow-cycle naturally
        assert state.phase == INSPIRATION
        state = ctrl.step(20.0, 0.05, t=2.6)
        assert state.phase == EXPIRATION
        assert ctrl.transitions[-1] == ("cycle", 2.5)

    def test_deterministic_replay(self):
        rng = np.random.default_rng(5)
        trace = [(5.0 + rng.normal(0, 2.0), rng.normal(0, 0.4), 0.01 * k)
                 for k in range(2000)]

        def run():
            ctrl = PSVController(self.settings)
            for p, q, t in trace:
                ctrl.step(p, q, t)
            return list(ctrl.transitions)

        assert run() == run()


class TestBranchAssembly:
    def test_switch_states_match_phase(self):
        tub = TubingParams()
        s = VentilatorSettings()
        exp = assemble_vent_branches(tub, s, VentPhase(EXPIRATION, 0, 0))
        assert exp.inspiratory.switch_resistance == tub.switch_off
        assert exp.expiratory.switch_resistance == tub.switch_on
        insp = assemble_vent_branches(tub, s, VentPhase(INSPIRATION, 0, 0))
        assert insp.inspiratory.switch_resistance == tub.switch_on
        assert insp.expiratory.switch_resistance == tub.switch_off

    def test_diode_orientations(self):
        b = assemble_vent_branches(TubingParams(), VentilatorSettings(),
                                   VentPhase(EXPIRATION, 0, 0))
        assert b.inspiratory.diode_conducts_toward == "node"
        assert b.expiratory.diode_conducts_toward == "source"
        assert b.ett_k1 == 3.0 and b.ett_k2 == 6.0
