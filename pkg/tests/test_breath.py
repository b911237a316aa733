"""Breath engine tests: effort waveform, cardiac, plans, asynchrony draws."""

import math

import numpy as np
import pytest

from ventsim.breath import (
    AsynchronyPlan,
    BreathOverride,
    DEFAULT_DISTRIBUTIONS,
    DEFAULT_EFFORT,
    EffortShape,
    build_asynchrony_plan,
    build_breath_plan,
    cardiac_oscillation,
    derive_seed,
    pmus_waveform,
)
from ventsim.errors import ConfigError
from ventsim.labeling import DI, EC, IE, LC, NORMAL

SHAPE = EffortShape(amplitude=8.0, rise_time=0.45, plateau_time=0.25,
                    fall_time=0.35, corner_smoothing=0.05)


class TestPmusWaveform:
    def test_zero_outside_support(self):
        assert pmus_waveform(SHAPE, -0.1) == 0.0
        assert pmus_waveform(SHAPE, 0.0) == 0.0
        assert pmus_waveform(SHAPE, SHAPE.duration) == 0.0
        assert pmus_waveform(SHAPE, 10.0) == 0.0

    def test_plateau_center_exact(self):
        t = SHAPE.rise_time + SHAPE.plateau_time / 2
        assert pmus_waveform(SHAPE, t) == -SHAPE.amplitude

    def test_nonpositive_everywhere(self):
        for t in np.linspace(-0.5, SHAPE.duration + 0.5, 4000):
            assert pmus_waveform(SHAPE, t) <= 0.0

    def test_area_matches_trapezoid(self):
        # oracle: numerical quadrature vs the sharp-trapezoid area formula
        ts = np.linspace(0, SHAPE.duration, 200001)
        vals = np.array([pmus_waveform(SHAPE, t) for t in ts])
        area = np.trapezoid(vals, ts)
        expected = -SHAPE.amplitude * (
            SHAPE.plateau_time + (SHAPE.rise_time + SHAPE.fall_time) / 2)
        assert abs(area - expected) / abs(expected) < 0.02

    def test_c1_continuity(self):
        h = 1e-6
        ts = np.linspace(h, SHAPE.duration - h, 5000)
        d = np.array([
            (pmus_waveform(SHAPE, t + h) - pmus_waveform(SHAPE, t - h)) / (2 * h)
            for t in ts
        ])
        # slope magnitude bounded by the ramp slopes; no jumps on a fine grid
        max_slope = SHAPE.amplitude / (min(SHAPE.rise_time, SHAPE.fall_time) - 2 * SHAPE.corner_smoothing)
        assert np.max(np.abs(d)) < max_slope * 1.001
        assert np.max(np.abs(np.diff(d))) < max_slope * 0.02

    def test_monotone_on_ramps(self):
        s = SHAPE.corner_smoothing
        rise = np.linspace(2 * s, SHAPE.rise_time - 2 * s, 200)
        vals = [pmus_waveform(SHAPE, t) for t in rise]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        t0 = SHAPE.rise_time + SHAPE.plateau_time
        fall = np.linspace(t0 + 2 * s, SHAPE.duration - 2 * s, 200)
        vals = [pmus_waveform(SHAPE, t) for t in fall]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_different_slopes_allowed(self):
        sh = EffortShape(amplitude=5, rise_time=0.3, plateau_time=0.2,
                         fall_time=0.6, corner_smoothing=0.05)
        assert sh.rise_time != sh.fall_time

    def test_invalid_shapes_rejected(self):
        with pytest.raises(ConfigError):
            EffortShape(amplitude=-1)
        with pytest.raises(ConfigError):
            EffortShape(rise_time=0.1, corner_smoothing=0.05)


class TestCardiac:
    def test_zero_amplitude(self):
        for t in np.linspace(0, 10, 50):
            assert cardiac_oscillation(0.0, 70, t) == 0.0

    def test_quarter_period_value(self):
        assert abs(cardiac_oscillation(0.5, 60.0, 0.25) - 0.5) < 1e-12

    def test_zero_mean_over_integer_periods(self):
        f = 72.0 / 60.0
        n = 100001
        ts = np.linspace(0, 5.0 / f, n)  # five full periods
        vals = 0.4 * np.sin(2 * np.pi * f * ts)
        ours = np.array([cardiac_oscillation(0.4, 72.0, t) for t in ts])
        assert np.allclose(ours, vals, atol=1e-12)
        assert abs(np.trapezoid(ours, ts) / (ts[-1])) < 1e-9


class TestBreathPlan:
    def test_no_jitter_equal_spacing(self):
        plan = build_breath_plan(15.0, 120.0, jitter=0.0, rng_seed=1)
        assert plan.n_breaths == 30
        gaps = np.diff(plan.onsets)
        assert np.allclose(gaps, 4.0, atol=1e-12)

    def test_rate20_breath_count(self):
        plan = build_breath_plan(20.0, 120.0, jitter=0.05, rng_seed=2)
        assert abs(plan.n_breaths - 40) <= 1

    def test_determinism(self):
        a = build_breath_plan(17.0, 120.0, jitter=0.08, rng_seed=99)
        b = build_breath_plan(17.0, 120.0, jitter=0.08, rng_seed=99)
        assert a.onsets == b.onsets
        assert a.shapes == b.shapes

    def test_overlap_rejected(self):
        long_effort = EffortShape(amplitude=3, rise_time=1.0, plateau_time=1.0,
                                  fall_time=1.0, corner_smoothing=0.05)
        with pytest.raises(ConfigError):
            build_breath_plan(40.0, 120.0, jitter=0.0, shape=long_effort)

    def test_rate_bounds(self):
        with pytest.raises(ConfigError):
            build_breath_plan(4.0, 120.0)
        with pytest.raises(ConfigError):
            build_breath_plan(41.0, 120.0)

    def test_windows_fit_record(self):
        plan = build_breath_plan(20.0, 120.0, jitter=0.1, rng_seed=5)
        for start, end in plan.effort_windows():
            assert 0 < start < end <= 120.0

    def test_pmus_lookup(self):
        plan = build_breath_plan(15.0, 120.0, jitter=0.0, rng_seed=1, shape=SHAPE)
        onset = plan.onsets[3]
        t = onset + SHAPE.rise_time + SHAPE.plateau_time / 2
        assert plan.pmus(t) == -SHAPE.amplitude
        assert plan.pmus(onset - 0.01) == 0.0


class TestAsynchronyPlan:
    def plan(self):
        return build_breath_plan(15.0, 120.0, jitter=0.0, rng_seed=1)

    def test_all_normal(self):
        ap = build_asynchrony_plan(self.plan(), "Healthy", {NORMAL: 1.0}, rng_seed=3)
        assert all(ov.intent == NORMAL for ov in ap.overrides)
        assert all(ov.trigger_delay == 0.0 and ov.cycle_offset is None
                   and not ov.suppress_trigger for ov in ap.overrides)

    def test_copd_late_cycling_prevalence(self):
        assert DEFAULT_DISTRIBUTIONS["COPD2"][LC] > DEFAULT_DISTRIBUTIONS["Healthy"][LC]
        assert DEFAULT_DISTRIBUTIONS["Fibrosis"][EC] > DEFAULT_DISTRIBUTIONS["Healthy"][EC]
        for dist in DEFAULT_DISTRIBUTIONS.values():
            assert abs(sum(dist.values()) - 1.0) < 1e-9

    def test_binomial_concentration(self):
        # 10k draws at P(EC)=0.2: empirical frequency within +-0.01
        plan = build_breath_plan(15.0, 120.0, jitter=0.0, rng_seed=1)
        count = 0
        total = 0
        dist = {NORMAL: 0.8, EC: 0.2}
        for seed in range(334):  # 334 plans x 30 breaths > 10k draws
            ap = build_asynchrony_plan(plan, "Healthy", dist, rng_seed=seed)
            count += sum(1 for ov in ap.overrides if ov.intent == EC)
            total += len(ap.overrides)
        assert total >= 10000
        assert abs(count / total - 0.2) < 0.01

    def test_overrides_consistent(self):
        plan = self.plan()
        dist = {NORMAL: 0.2, EC: 0.2, LC: 0.2, DI: 0.2, IE: 0.2}
        ap = build_asynchrony_plan(plan, "Healthy", dist, rng_seed=11)
        for ov in ap.overrides:
            if ov.intent == IE:
                assert ov.suppress_trigger
            if ov.intent == EC:
                assert ov.cycle_offset < -0.1
            if ov.intent == LC:
                assert ov.cycle_offset > 0.3
            if ov.intent == DI:
                assert ov.trigger_delay > 0.25

    def test_unknown_class_rejected(self):
        with pytest.raises(ConfigError):
            build_asynchrony_plan(self.plan(), "Healthy", {"Weird": 1.0})

    def test_bad_sum_rejected(self):
        with pytest.raises(ConfigError):
            build_asynchrony_plan(self.plan(), "Healthy", {NORMAL: 0.9})

    def test_determinism(self):
        dist = DEFAULT_DISTRIBUTIONS["COPD2"]
        a = build_asynchrony_plan(self.plan(), "COPD2", dist, rng_seed=8)
        b = build_asynchrony_plan(self.plan(), "COPD2", dist, rng_seed=8)
        assert a.overrides == b.overrides

    def test_invalid_override_combination(self):
        with pytest.raises(ConfigError):
            AsynchronyPlan(overrides=(BreathOverride(intent=IE, suppress_trigger=False),))

    def test_seed_mixing_stable(self):
        a = derive_seed(42, 3).generate_state(4)
        b = derive_seed(42, 3).generate_state(4)
        c = derive_seed(42, 4).generate_state(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
