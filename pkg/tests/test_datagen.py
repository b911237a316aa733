"""Dataset pipeline tests: noise, calibration, record IO, evaluation, plots."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from scipy import signal

from ventsim.breath import EffortShape
from ventsim.datagen import (
    NoiseParams,
    RunConfig,
    add_noise,
    calibrate_pinsp,
    evaluate,
    generate_dataset,
    generate_record,
    load_labels,
    load_predictions,
    read_waveforms,
    write_record,
)
from ventsim.errors import AlignmentError, CalibrationError, ConfigError
from ventsim.labeling import EC, IE, LC, NORMAL
from ventsim.ventilator import VentilatorSettings


def tree_hash(root) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


SMALL = dict(records=1, archetypes=("Healthy",), record_length=20.0,
             calibrate=False, master_seed=3)


class TestNoise:
    def channels(self, n=12001, fs=100.0):
        t = np.arange(n) / fs
        return {"t": t, "paw": np.full(n, 5.0), "flow": np.zeros(n),
                "vol": np.zeros(n), "pmus": np.zeros(n),
                "phase": np.zeros(n, dtype=np.int8)}

    def test_zero_std_identity(self):
        ch = self.channels(2001)
        out = add_noise(ch, NoiseParams(pressure_std=0.0, flow_std=0.0), 1)
        assert np.array_equal(out["paw"], ch["paw"])
        assert np.array_equal(out["flow"], ch["flow"])

    def test_determinism(self):
        ch = self.channels(2001)
        a = add_noise(ch, NoiseParams(), (1, 2))
        b = add_noise(ch, NoiseParams(), (1, 2))
        c = add_noise(ch, NoiseParams(), (1, 3))
        assert np.array_equal(a["paw"], b["paw"])
        assert not np.array_equal(a["paw"], c["paw"])

    def test_ground_truth_untouched(self):
        ch = self.channels(2001)
        out = add_noise(ch, NoiseParams(), 5)
        assert out["vol"] is ch["vol"]
        assert out["pmus"] is ch["pmus"]

    def test_requested_std_achieved(self):
        ch = self.channels()
        out = add_noise(ch, NoiseParams(pressure_std=0.1, flow_std=0.01), 7)
        assert np.std(out["paw"] - ch["paw"]) == pytest.approx(0.1, rel=1e-6)
        assert np.std(out["flow"] - ch["flow"]) == pytest.approx(0.01, rel=1e-6)

    def test_spectrum_bandlimit(self):
        # defaults: >=95% of added power below 15 Hz, <1% above 20 Hz
        ch = self.channels()
        out = add_noise(ch, NoiseParams(), 11)
        added = out["paw"] - ch["paw"]
        f, pxx = signal.periodogram(added, fs=100.0)
        total = pxx.sum()
        assert pxx[f < 15.0].sum() / total >= 0.95
        assert pxx[f > 20.0].sum() / total < 0.01


class TestCalibration:
    def test_fixed_point_returns_initial(self, monkeypatch):
        import ventsim.datagen as dg
        from ventsim.archetypes import get_archetype
        from ventsim.solver import SolverConfig
        from ventsim.ventilator import TubingParams

        settings = VentilatorSettings(peep=5.0, p_insp=12.9)
        vt_now = dg._calibration_vt(get_archetype("Healthy"), settings,
                                    TubingParams(), SolverConfig(),
                                    EffortShape(), 12.9)
        calls = []
        real = dg._calibration_vt

        def counting(*a, **k):
            calls.append(1)
            return real(*a, **k)

        monkeypatch.setattr(dg, "_calibration_vt", counting)
        # ask for exactly what the current P_insp already delivers
        out = calibrate_pinsp("Healthy", settings, vt_now)
        assert out == settings.p_insp
        assert len(calls) == 1  # zero bisection iterations

    def test_healthy_converges_to_target(self):
        settings = VentilatorSettings(peep=5.0, p_insp=15.0)
        p_insp = calibrate_pinsp("Healthy", settings, 0.5, tolerance=0.05)
        from ventsim.archetypes import get_archetype
        from ventsim.datagen import _calibration_vt
        from ventsim.solver import SolverConfig
        from ventsim.ventilator import TubingParams

        vt = _calibration_vt(get_archetype("Healthy"), settings,
                             TubingParams(), SolverConfig(), EffortShape(),
                             p_insp)
        assert 0.475 <= vt <= 0.525

    def test_unreachable_target_raises(self):
        settings = VentilatorSettings(peep=5.0, p_insp=10.0)
        with pytest.raises(CalibrationError) as err:
            calibrate_pinsp("Healthy", settings, 5.0)  # five liters
        assert "achievable" in str(err.value)


class TestRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(**SMALL)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = RunConfig.from_json(path)
        assert back == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"bogus": 1})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"settings": {"nope": 2}})

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            RunConfig(pipeline="magic")
        with pytest.raises(ConfigError):
            RunConfig(archetypes=("Nobody",))


class TestRecords:
    def test_record_shape_and_roundtrip(self, tmp_path):
        cfg = RunConfig(**SMALL)
        channels, labels, intents, manifest = generate_record(cfg, 0)
        n_expected = cfg.record_length * cfg.solver.output_rate
        assert abs(len(channels["t"]) - n_expected) <= 1
        assert len(labels) == len(intents) > 0

        rec = tmp_path / "rec_0000"
        write_record(rec, channels, labels, intents, manifest)
        wf = read_waveforms(rec / "waveforms.csv")
        assert len(wf["t"]) == len(channels["t"])
        assert np.allclose(wf["paw"], channels["paw"], atol=1e-4)
        rows = load_labels(rec / "labels.csv")
        assert len(rows) == len(labels)
        assert [lab.label for lab, _ in rows] == [lab.label for lab in labels]
        man = json.loads((rec / "manifest.json").read_text())
        assert man["archetype"] == "Healthy"
        assert man["n_breaths"] == len(labels)

    def test_dataset_manifest_aggregates(self, tmp_path):
        cfg = RunConfig(records=2, archetypes=("Healthy", "COPD2"),
                        record_length=20.0, calibrate=False, master_seed=5)
        manifest = generate_dataset(cfg, tmp_path / "ds")
        assert manifest["failures"] == []
        total = 0
        for rec in manifest["records"]:
            rows = load_labels(tmp_path / "ds" / "records" / rec["id"] / "labels.csv")
            counts = {}
            for lab, _ in rows:
                counts[lab.label] = counts.get(lab.label, 0) + 1
            for cls, cnt in counts.items():
                assert rec["class_counts"][cls] == cnt
            total += len(rows)
        agg = manifest["aggregate_class_counts"]
        assert sum(sum(v.values()) for v in agg.values()) == total

    def test_determinism_bytes(self, tmp_path):
        cfg = RunConfig(**SMALL)
        generate_dataset(cfg, tmp_path / "a")
        generate_dataset(cfg, tmp_path / "b")
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    cfg = RunConfig(records=1, archetypes=("Healthy",), record_length=30.0,
                    calibrate=False, master_seed=9,
                    distributions={"Healthy": {NORMAL: 0.4, EC: 0.2,
                                               LC: 0.2, IE: 0.2}})
    generate_dataset(cfg, out)
    return out


class TestEvaluate:

    def test_perfect_predictions_score_one(self, dataset, tmp_path):
        rows = load_labels(dataset / "records" / "rec_0000" / "labels.csv")
        pred = tmp_path / "pred.csv"
        with open(pred, "w") as fh:
            fh.write("record_id,breath_idx,label\n")
            for lab, _ in rows:
                fh.write(f"rec_0000,{lab.breath_idx},{lab.label}\n")
        report = evaluate(dataset, pred, tmp_path / "out")
        present = {lab.label for lab, _ in rows}
        for cls in present:
            assert report.balanced_accuracy[cls] == 1.0
        metrics = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
        assert metrics[0].startswith("metric,EC,LC,DI,Normal")
        assert (tmp_path / "out" / "report.json").exists()

    def test_delay_predictions(self, dataset, tmp_path):
        rows = load_labels(dataset / "records" / "rec_0000" / "labels.csv")
        pred = tmp_path / "pred_delays.csv"
        with open(pred, "w") as fh:
            fh.write("record_id,breath_idx,start_delay_ms,end_delay_ms\n")
            for lab, _ in rows:
                sd = "" if lab.start_delay_ms is None else f"{lab.start_delay_ms:.3f}"
                ed = "" if lab.end_delay_ms is None else f"{lab.end_delay_ms:.3f}"
                fh.write(f"rec_0000,{lab.breath_idx},{sd},{ed}\n")
        report = evaluate(dataset, pred)
        present = {lab.label for lab, _ in rows}
        for cls in present:
            assert report.tpr[cls] == 1.0

    def test_unknown_breath_rejected(self, dataset, tmp_path):
        pred = tmp_path / "bad.csv"
        pred.write_text("record_id,breath_idx,label\nrec_0000,999,Normal\n")
        with pytest.raises(AlignmentError) as err:
            evaluate(dataset, pred)
        assert "999" in str(err.value)

    def test_bad_header_rejected(self, dataset, tmp_path):
        pred = tmp_path / "bad2.csv"
        pred.write_text("foo,bar\n1,2\n")
        with pytest.raises(AlignmentError):
            load_predictions(pred)


class TestPlotting:
    def test_deterministic_svg(self, tmp_path):
        from ventsim.plotting import plot_export

        cfg = RunConfig(**SMALL)
        channels, labels, intents, _ = generate_record(cfg, 0)
        p1 = plot_export(channels, labels, tmp_path / "a.svg", breath_range=(0, 2))
        p2 = plot_export(channels, labels, tmp_path / "b.svg", breath_range=(0, 2))
        assert p1.read_bytes() == p2.read_bytes()
        assert b"<svg" in p1.read_bytes()[:500]

    def test_empty_range_rejected(self, tmp_path):
        from ventsim.plotting import plot_export

        cfg = RunConfig(**SMALL)
        channels, labels, intents, _ = generate_record(cfg, 0)
        with pytest.raises(ConfigError):
            plot_export(channels, labels, tmp_path / "x.svg",
                        breath_range=(50, 60))


class TestParallelAndStaged:
    def test_parallel_workers_match_serial(self, tmp_path):
        cfg1 = RunConfig(records=2, archetypes=("Healthy", "ARDS1"),
                         record_length=20.0, calibrate=False, master_seed=13)
        from dataclasses import replace

        cfg2 = replace(cfg1, workers=2)
        generate_dataset(cfg1, tmp_path / "serial")
        generate_dataset(cfg2, tmp_path / "parallel")
        a = tree_hash(tmp_path / "serial")
        b = tree_hash(tmp_path / "parallel")
        # the only allowed difference is the workers field echoed in configs
        assert (tmp_path / "parallel" / "records" / "rec_0001").is_dir()
        wavs_a = (tmp_path / "serial" / "records" / "rec_0000" / "waveforms.csv").read_bytes()
        wavs_b = (tmp_path / "parallel" / "records" / "rec_0000" / "waveforms.csv").read_bytes()
        assert wavs_a == wavs_b
        labs_a = (tmp_path / "serial" / "records" / "rec_0001" / "labels.csv").read_bytes()
        labs_b = (tmp_path / "parallel" / "records" / "rec_0001" / "labels.csv").read_bytes()
        assert labs_a == labs_b

    def test_staged_pipeline_through_datagen(self, tmp_path):
        cfg = RunConfig(records=1, archetypes=("Healthy",), record_length=20.0,
                        calibrate=False, master_seed=17, pipeline="staged")
        manifest = generate_dataset(cfg, tmp_path / "st1")
        assert manifest["failures"] == []
        generate_dataset(cfg, tmp_path / "st2")
        assert tree_hash(tmp_path / "st1") == tree_hash(tmp_path / "st2")
        rows = load_labels(tmp_path / "st1" / "records" / "rec_0000" / "labels.csv")
        assert len(rows) >= 4
