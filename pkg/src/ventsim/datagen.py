"""Dataset generation: calibration, noise, record export, evaluation.

A dataset directory looks like:

    <out>/manifest.json            dataset manifest (written last)
    <out>/records/rec_0000/
        manifest.json              per-record manifest (seed, config echo)
        waveforms.csv              t,paw_cmH2O,flow_L_s,vol_L,pmus_cmH2O,vent_phase
        labels.csv                 one row per breath (BreathLabel fields + intent)

Tables are comma-delimited with a header row, 6 significant digits and
newline-terminated rows; manifests are JSON with sorted keys. Everything is a
pure function of (config, master_seed): per-record randomness is derived via
SeedSequence([master_seed, record_index, stream]) with stream 0 for the
breath plan, 1 for the asynchrony plan and 2 for measurement noise.
"""

from __future__ import annotations

import csv
import json
import os
import shutil
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal

from . import __version__
from .archetypes import ARCHETYPE_NAMES, get_archetype
from .breath import (
    AsynchronyPlan,
    BreathPlan,
    CardiacParams,
    EffortShape,
    build_asynchrony_plan,
    build_breath_plan,
    default_effort_for,
    derive_seed,
)
from .errors import AlignmentError, CalibrationError, ConfigError, VentsimError
from .labeling import (
    CLASSES,
    THRESHOLDS,
    BreathLabel,
    DetectorReport,
    label_breaths,
    score_detector,
)
from .solver import SolverConfig, Trajectory, run_staged_scenario, simulate
from .ventilator import TubingParams, VentilatorSettings

__all__ = [
    "NoiseParams", "RunConfig", "add_noise", "calibrate_pinsp",
    "generate_record", "generate_dataset", "evaluate", "load_labels",
    "write_record", "read_waveforms",
]


@dataclass(frozen=True)
class NoiseParams:
    """Filtered measurement noise for the pressure and flow channels.

    The low-pass is a zero-phase Butterworth cascade (applied forward and
    backward); with the 15 Hz cutoff and order 4 the added noise keeps ~98%
    of its power below 15 Hz and <0.1% above 20 Hz. Stds are the final
    (post-filter) amplitudes.
    """

    pressure_std: float = 0.1   # cmH2O
    flow_std: float = 0.01     # L/s
    cutoff: float = 15.0       # Hz
    order: int = 4

    def __post_init__(self):
        if self.pressure_std < 0 or self.flow_std < 0:
            raise ConfigError("noise stds must be >= 0")
        if self.cutoff <= 0 or self.order < 1:
            raise ConfigError("cutoff must be positive and order >= 1")


def _filtered_noise(n: int, fs: float, noise: NoiseParams,
                    rng: np.random.Generator, std: float) -> np.ndarray:
    if std == 0.0 or n == 0:
        return np.zeros(n)
    white = rng.standard_normal(n)
    sos = signal.butter(noise.order, noise.cutoff, btype="low", fs=fs,
                        output="sos")
    shaped = signal.sosfiltfilt(sos, white)
    measured = shaped.std()
    if measured == 0.0:
        return np.zeros(n)
    return shaped * (std / measured)


def add_noise(channels: dict, noise: NoiseParams, seed) -> dict:
    """Contaminate paw and flow with band-limited noise; everything else stays
    clean ground truth. Deterministic per seed."""
    out = dict(channels)
    t = np.asarray(channels["t"])
    if len(t) > 1:
        fs = 1.0 / float(np.median(np.diff(t)))
    else:
        fs = 100.0
    rng = np.random.default_rng(
        derive_seed(*seed) if isinstance(seed, (tuple, list)) else derive_seed(seed))
    out["paw"] = channels["paw"] + _filtered_noise(len(t), fs, noise, rng,
                                                   noise.pressure_std)
    out["flow"] = channels["flow"] + _filtered_noise(len(t), fs, noise, rng,
                                                     noise.flow_std)
    return out


@dataclass
class RunConfig:
    """Everything a dataset run needs; JSON round-trippable."""

    master_seed: int = 0
    records: int = 9
    archetypes: tuple = ARCHETYPE_NAMES       # cycled across records
    record_length: float = 120.0
    respiratory_rate: float = 15.0
    rate_jitter: float = 0.05
    effort: EffortShape = field(default_factory=EffortShape)
    cardiac: CardiacParams = field(default_factory=CardiacParams)
    settings: VentilatorSettings = field(default_factory=VentilatorSettings)
    tubing: TubingParams = field(default_factory=TubingParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    target_vt: float = 0.5
    vt_tolerance: float = 0.05
    calibrate: bool = True
    pipeline: str = "closed_loop"              # or "staged"
    distributions: Optional[dict] = None       # archetype -> class -> prob
    effort_scales: Optional[dict] = None       # archetype -> amplitude scale
    output_dir: Optional[str] = None
    workers: int = 1

    def effort_for(self, archetype: str) -> EffortShape:
        return default_effort_for(archetype, self.effort, self.effort_scales)

    def __post_init__(self):
        if self.records < 1:
            raise ConfigError("records must be >= 1")
        if self.pipeline not in ("closed_loop", "staged"):
            raise ConfigError(f"unknown pipeline {self.pipeline!r}")
        unknown = [a for a in self.archetypes if a not in ARCHETYPE_NAMES]
        if unknown:
            raise ConfigError(f"unknown archetypes: {unknown}")
        if not (0 < self.vt_tolerance < 1):
            raise ConfigError("vt_tolerance must lie in (0, 1)")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        nested = {
            "effort": EffortShape, "cardiac": CardiacParams,
            "settings": VentilatorSettings, "tubing": TubingParams,
            "noise": NoiseParams, "solver": SolverConfig,
        }
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            if key in nested and isinstance(value, dict):
                sub = nested[key]
                sub_unknown = set(value) - set(sub.__dataclass_fields__)
                if sub_unknown:
                    raise ConfigError(
                        f"unknown keys in {key}: {sorted(sub_unknown)}")
                if key == "tubing":
                    kwargs[key] = _tubing_from_dict(value)
                else:
                    kwargs[key] = sub(**value)
            elif key == "archetypes":
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["archetypes"] = list(self.archetypes)
        return d


def _tubing_from_dict(value: dict) -> TubingParams:
    from .ventilator import LimbParams

    val = dict(value)
    for limb in ("insp_limb", "exp_limb"):
        if limb in val and isinstance(val[limb], dict):
            val[limb] = LimbParams(**val[limb])
    return TubingParams(**val)


# --------------------------------------------------------------- calibration

def measure_tidal_volumes(traj: Trajectory) -> list:
    """Inhaled volume per pressurization: vol rise from trigger to its peak."""
    vts = []
    trig = traj.event_times("trigger")
    cyc = traj.event_times("cycle")
    for tt, tc in zip(trig, cyc):
        i0 = int(np.searchsorted(traj.t, tt))
        i1 = int(np.searchsorted(traj.t, tc + 1.5))
        if i1 > i0:
            vts.append(float(np.max(traj.vol[i0:i1]) - traj.vol[i0]))
    return vts


def _calibration_vt(p, settings, tubing, cfg, effort, p_insp: float) -> float:
    plan = build_breath_plan(15.0, 22.0, jitter=0.0, rng_seed=0, shape=effort)
    traj = simulate(p, settings.replace(p_insp=p_insp), tubing, plan, cfg=cfg)
    vts = measure_tidal_volumes(traj)
    if not vts:
        return 0.0
    return float(np.median(vts))


def calibrate_pinsp(archetype: str, settings: VentilatorSettings,
                    target_vt: float, tolerance: float = 0.05,
                    tubing: Optional[TubingParams] = None,
                    cfg: Optional[SolverConfig] = None,
                    effort: EffortShape = EffortShape()) -> float:
    """Bisection on P_insp until the median tidal volume of a five-breath
    calibration run lands within ``tolerance`` of ``target_vt``.

    Deterministic (fixed calibration plan, no jitter, no noise). Raises
    CalibrationError with the achieved range when the target is outside
    (PEEP, PEEP+40] cmH2O.
    """
    p = get_archetype(archetype)
    tubing = tubing or TubingParams()
    cfg = cfg or SolverConfig()

    def vt_at(p_insp):
        return _calibration_vt(p, settings, tubing, cfg, effort, p_insp)

    vt0 = vt_at(settings.p_insp)
    if abs(vt0 - target_vt) <= tolerance * target_vt:
        return settings.p_insp

    lo = settings.peep + 0.5
    hi = settings.peep + 40.0
    vt_lo = vt_at(lo)
    vt_hi = vt_at(hi)
    if not (vt_lo <= target_vt <= vt_hi):
        raise CalibrationError(
            f"{archetype}: target VT {target_vt:.3f} L outside achievable "
            f"range [{vt_lo:.3f}, {vt_hi:.3f}] L for P_insp in "
            f"({settings.peep}, {settings.peep + 40}] cmH2O")
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        vt = vt_at(mid)
        if abs(vt - target_vt) <= tolerance * target_vt:
            return mid
        if vt < target_vt:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"{archetype}: calibration failed to converge; last VT {vt:.3f} L")


# ------------------------------------------------------------------ records

_WAVE_COLUMNS = ("t", "paw_cmH2O", "flow_L_s", "vol_L", "pmus_cmH2O", "vent_phase")
_LABEL_COLUMNS = ("breath_idx", "intent", "label", "t_insp_start_s",
                  "t_insp_end_s", "t_trigger_s", "t_cycle_s",
                  "start_delay_ms", "end_delay_ms")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".6g")


def write_waveforms(path, channels: dict):
    cols = [channels["t"], channels["paw"], channels["flow"],
            channels["vol"], channels["pmus"], channels["phase"]]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(_WAVE_COLUMNS) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_waveforms(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {"t": data["t"], "paw": data["paw_cmH2O"], "flow": data["flow_L_s"],
            "vol": data["vol_L"], "pmus": data["pmus_cmH2O"],
            "phase": data["vent_phase"].astype(int)}


def write_labels(path, labels, intents):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(_LABEL_COLUMNS) + "\n")
        for lab, intent in zip(labels, intents):
            row = [str(lab.breath_idx), intent, lab.label,
                   _fmt(lab.t_insp_start), _fmt(lab.t_insp_end),
                   _fmt(lab.t_trigger), _fmt(lab.t_cycle),
                   _fmt(lab.start_delay_ms), _fmt(lab.end_delay_ms)]
            fh.write(",".join(row) + "\n")


def load_labels(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            def fl(key):
                return float(row[key]) if row[key] != "" else None

            out.append((BreathLabel(
                breath_idx=int(row["breath_idx"]),
                t_insp_start=fl("t_insp_start_s"),
                t_insp_end=fl("t_insp_end_s"),
                t_trigger=fl("t_trigger_s"),
                t_cycle=fl("t_cycle_s"),
                start_delay_ms=fl("start_delay_ms"),
                end_delay_ms=fl("end_delay_ms"),
                label=row["label"]), row["intent"]))
    return out


def write_record(record_dir, channels: dict, labels, intents, manifest: dict):
    """Atomically write one record directory (tmp dir + rename)."""
    record_dir = Path(record_dir)
    tmp = record_dir.parent / (".tmp_" + record_dir.name)
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    write_waveforms(tmp / "waveforms.csv", channels)
    write_labels(tmp / "labels.csv", labels, intents)
    with open(tmp / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if record_dir.exists():
        shutil.rmtree(record_dir)
    os.replace(tmp, record_dir)


def generate_record(config: RunConfig, index: int,
                    p_insp: Optional[float] = None):
    """Simulate, label and noise one record; returns (channels, labels,
    intents, manifest) without touching the filesystem."""
    archetype = config.archetypes[index % len(config.archetypes)]
    p = get_archetype(archetype)
    settings = config.settings if p_insp is None \
        else config.settings.replace(p_insp=p_insp)
    plan = build_breath_plan(config.respiratory_rate, config.record_length,
                             jitter=config.rate_jitter,
                             rng_seed=(config.master_seed, index, 0),
                             shape=config.effort_for(archetype))
    dist = None
    if config.distributions is not None:
        dist = config.distributions.get(archetype)
    asynch = build_asynchrony_plan(plan, archetype, dist,
                                   rng_seed=(config.master_seed, index, 1))
    runner = simulate if config.pipeline == "closed_loop" else run_staged_scenario
    traj = runner(p, settings, config.tubing, plan, asynch, cfg=config.solver,
                  cardiac=config.cardiac)
    labels, diags = label_breaths(traj.effort_windows,
                                  traj.event_times("trigger"),
                                  traj.event_times("cycle"))
    channels = {"t": traj.t, "paw": traj.paw, "flow": traj.flow,
                "vol": traj.vol, "pmus": traj.pmus, "phase": traj.phase}
    channels = add_noise(channels, config.noise,
                         (config.master_seed, index, 2))
    intents = [ov.intent for ov in asynch.overrides]
    class_counts = {c: 0 for c in CLASSES}
    for lab in labels:
        class_counts[lab.label] += 1
    manifest = {
        "generator_version": __version__,
        "record_index": index,
        "archetype": archetype,
        "seed": [config.master_seed, index],
        "pipeline": config.pipeline,
        "p_insp": settings.p_insp,
        "n_breaths": len(labels),
        "class_counts": class_counts,
        "auto_triggers": diags.auto_trigger_times,
        "label_thresholds": dict(THRESHOLDS),
        "output_rate_hz": config.solver.output_rate,
        "record_length_s": config.record_length,
        "config_echo": config.to_dict(),
    }
    return channels, labels, intents, manifest


def _record_task(config_dict: dict, index: int, p_insp, out_dir: str):
    config = RunConfig.from_dict(config_dict)
    channels, labels, intents, manifest = generate_record(config, index, p_insp)
    rec_dir = Path(out_dir) / "records" / f"rec_{index:04d}"
    write_record(rec_dir, channels, labels, intents, manifest)
    return index, manifest


def generate_dataset(config: RunConfig, out_dir=None) -> dict:
    """Generate all records plus the dataset manifest; returns the manifest.

    Per-record failures are recorded and do not stop other records; the
    caller inspects manifest["failures"]. Calibration (when enabled) runs
    once per archetype and is reused across records.
    """
    out_dir = Path(out_dir or config.output_dir or "dataset")
    (out_dir / "records").mkdir(parents=True, exist_ok=True)

    calibrated = {}
    failures = []
    if config.calibrate:
        for name in dict.fromkeys(config.archetypes):
            try:
                calibrated[name] = calibrate_pinsp(
                    name, config.settings, config.target_vt,
                    config.vt_tolerance, config.tubing, config.solver,
                    config.effort_for(name))
            except VentsimError as err:
                failures.append({"archetype": name, "stage": "calibration",
                                 "error": str(err)})

    tasks = []
    for i in range(config.records):
        archetype = config.archetypes[i % len(config.archetypes)]
        if config.calibrate and archetype not in calibrated:
            failures.append({"record": i, "stage": "skipped",
                             "error": f"no calibration for {archetype}"})
            continue
        tasks.append((i, calibrated.get(archetype)))

    record_entries = {}

    def finish(index, manifest):
        record_entries[index] = {
            "id": f"rec_{index:04d}",
            "archetype": manifest["archetype"],
            "n_breaths": manifest["n_breaths"],
            "class_counts": manifest["class_counts"],
            "p_insp": manifest["p_insp"],
        }

    if config.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        cfg_dict = config.to_dict()
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {pool.submit(_record_task, cfg_dict, i, pi, str(out_dir)): i
                       for i, pi in tasks}
            for fut, i in futures.items():
                try:
                    finish(*fut.result())
                except VentsimError as err:
                    failures.append({"record": i, "stage": "simulate",
                                     "error": str(err)})
    else:
        for i, pi in tasks:
            try:
                finish(*_record_task(config.to_dict(), i, pi, str(out_dir)))
            except VentsimError as err:
                failures.append({"record": i, "stage": "simulate",
                                 "error": str(err)})

    aggregate = {}
    for entry in record_entries.values():
        agg = aggregate.setdefault(entry["archetype"], {c: 0 for c in CLASSES})
        for cls, cnt in entry["class_counts"].items():
            agg[cls] += cnt
    manifest = {
        "generator_version": __version__,
        "master_seed": config.master_seed,
        "config": config.to_dict(),
        "calibrated_p_insp": calibrated,
        "records": [record_entries[k] for k in sorted(record_entries)],
        "aggregate_class_counts": aggregate,
        "failures": failures,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# --------------------------------------------------------------- evaluation

def _load_truth(dataset_dir) -> dict:
    truth = {}
    records_dir = Path(dataset_dir) / "records"
    if not records_dir.is_dir():
        raise AlignmentError(f"{dataset_dir} has no records/ directory")
    for rec in sorted(records_dir.iterdir()):
        if rec.is_dir() and (rec / "labels.csv").exists():
            truth[rec.name] = load_labels(rec / "labels.csv")
    return truth


def load_predictions(path) -> dict:
    """Prediction rows keyed by (record_id, breath_idx).

    Two layouts are accepted: class predictions (record_id,breath_idx,label)
    or delay predictions (record_id,breath_idx,start_delay_ms,end_delay_ms)
    with empty delays meaning "not triggered".
    """
    preds = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        if {"record_id", "breath_idx", "label"} <= fields:
            mode = "class"
        elif {"record_id", "breath_idx", "start_delay_ms", "end_delay_ms"} <= fields:
            mode = "delays"
        else:
            raise AlignmentError(
                "predictions need (record_id,breath_idx,label) or "
                "(record_id,breath_idx,start_delay_ms,end_delay_ms) columns")
        for row in reader:
            key = (row["record_id"], int(row["breath_idx"]))
            if mode == "class":
                preds[key] = row["label"]
            else:
                sd = float(row["start_delay_ms"]) if row["start_delay_ms"] else None
                ed = float(row["end_delay_ms"]) if row["end_delay_ms"] else None
                preds[key] = (sd, ed)
    return preds


def evaluate(dataset_dir, predictions_path, out_dir=None) -> DetectorReport:
    """Score a predictions file against a dataset's ground truth.

    Writes metrics.csv (rows TPR/TNR/PPV/balanced accuracy, one column per
    class), delay_quartiles.csv and report.json under ``out_dir``.
    """
    truth = _load_truth(dataset_dir)
    preds = load_predictions(predictions_path)
    known = {(rec_id, lab.breath_idx)
             for rec_id, rows in truth.items() for lab, _ in rows}
    offenders = sorted(set(preds) - known)
    if offenders:
        raise AlignmentError(f"predictions reference unknown breaths: "
                             f"{offenders[:10]}")
    truth_labels = []
    aligned_preds = []
    for rec_id in sorted(truth):
        for lab, _intent in truth[rec_id]:
            key = (rec_id, lab.breath_idx)
            if key in preds:
                truth_labels.append(lab)
                aligned_preds.append(preds[key])
    if not truth_labels:
        raise AlignmentError("no overlapping breaths between truth and predictions")
    report = score_detector(truth_labels, aligned_preds)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        order = ["EC", "LC", "DI", "Normal", "DI+LC", "DI+EC", "IE"]
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            fh.write("metric," + ",".join(order) + "\n")
            for name, table in (("true_positive_rate", report.tpr),
                                ("true_negative_rate", report.tnr),
                                ("positive_predictive_value", report.ppv),
                                ("balanced_accuracy", report.balanced_accuracy)):
                fh.write(name + "," + ",".join(f"{table[c]:.2f}" for c in order) + "\n")
        with open(out_dir / "delay_quartiles.csv", "w", newline="") as fh:
            fh.write("class,which,q25_ms,median_ms,q75_ms\n")
            for cls in order:
                q = report.delay_error_quartiles.get(cls)
                if q is None:
                    continue
                for which in ("start", "end"):
                    q25, q50, q75 = q[which]
                    fh.write(f"{cls},{which},{q25:.6g},{q50:.6g},{q75:.6g}\n")
        payload = {
            "n_breaths": report.n_breaths,
            "classes": list(report.classes),
            "confusion": report.confusion.tolist(),
            "tpr": report.tpr, "tnr": report.tnr, "ppv": report.ppv,
            "balanced_accuracy": report.balanced_accuracy,
            "thresholds": report.thresholds,
        }
        with open(out_dir / "report.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
