"""Breath segmentation, delay computation, asynchrony classification, scoring.

Ground-truth effort times come from the muscle-pressure generator, never from
waveform inference, so labels are exact by construction. Classification
thresholds follow the delay-plane margins used for the reference detector:
a breath is Normal only if its start-inspiration delay is strictly below
250 ms and its end-inspiration delay lies strictly between -100 ms and
+300 ms; boundary values classify as asynchronous. An untriggered effort is
an ineffective effort (IE) and carries no delays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import AlignmentError

__all__ = [
    "NORMAL", "EC", "LC", "DI", "IE", "DI_LC", "DI_EC",
    "CLASSES", "INJECTABLE_CLASSES", "THRESHOLDS",
    "BreathLabel", "DetectorReport", "PairingDiagnostics",
    "segment_breaths", "compute_delays", "classify_breath",
    "label_breaths", "score_detector",
]

NORMAL = "Normal"
EC = "EC"          # early cycling
LC = "LC"          # late cycling
DI = "DI"          # delayed inspiration
IE = "IE"          # ineffective effort
DI_LC = "DI+LC"
DI_EC = "DI+EC"

CLASSES = (NORMAL, EC, LC, DI, IE, DI_LC, DI_EC)
INJECTABLE_CLASSES = (EC, LC, DI, IE)

# Delay-plane margins in milliseconds; read-only defaults echoed into reports.
THRESHOLDS = {
    "start_delay_max_ms": 250.0,   # Normal requires start delay strictly below
    "end_delay_min_ms": -100.0,    # Normal requires end delay strictly above
    "end_delay_max_ms": 300.0,     # Normal requires end delay strictly below
}


@dataclass
class BreathLabel:
    """One labeled breath: effort window, ventilator timing, delays, class."""

    breath_idx: int
    t_insp_start: float
    t_insp_end: float
    t_trigger: Optional[float] = None
    t_cycle: Optional[float] = None
    start_delay_ms: Optional[float] = None
    end_delay_ms: Optional[float] = None
    label: str = NORMAL

    def __post_init__(self):
        if not self.t_insp_start < self.t_insp_end:
            raise ValueError("effort must have positive duration")
        if (self.t_trigger is None) != (self.t_cycle is None):
            raise ValueError("trigger and cycle must both be present or both absent")


@dataclass
class PairingDiagnostics:
    """Triggers that could not be attributed to any effort (auto-triggers)."""

    auto_trigger_times: list = field(default_factory=list)


@dataclass
class DetectorReport:
    """One-vs-rest confusion metrics per class plus delay-error quartiles."""

    classes: tuple
    confusion: np.ndarray            # rows = truth class, cols = predicted class
    tpr: dict
    tnr: dict
    ppv: dict
    balanced_accuracy: dict
    delay_error_quartiles: dict      # class -> {start|end} -> (q25, median, q75)
    n_breaths: int
    thresholds: dict = field(default_factory=lambda: dict(THRESHOLDS))


def classify_breath(start_delay_ms: Optional[float], end_delay_ms: Optional[float],
                    triggered: bool, thresholds: dict = THRESHOLDS) -> str:
    """Classify one breath from its delays (ms) and trigger flag.

    Untriggered -> IE. Otherwise DI iff start delay > 250 ms, EC iff end delay
    < -100 ms, LC iff end delay > 300 ms, with DI compounding to DI+EC / DI+LC;
    exact threshold values are asynchronous (strict inequalities for Normal).
    """
    if not triggered:
        return IE
    if start_delay_ms is None or end_delay_ms is None:
        raise ValueError("triggered breath must carry both delays")
    di = start_delay_ms >= thresholds["start_delay_max_ms"]
    ec = end_delay_ms <= thresholds["end_delay_min_ms"]
    lc = end_delay_ms >= thresholds["end_delay_max_ms"]
    if di and ec:
        return DI_EC
    if di and lc:
        return DI_LC
    if di:
        return DI
    if ec:
        return EC
    if lc:
        return LC
    return NORMAL


def compute_delays(t_insp_start: float, t_insp_end: float,
                   t_trigger: Optional[float], t_cycle: Optional[float]):
    """(start_delay, end_delay) in ms, or (None, None) for an untriggered effort."""
    if t_trigger is None:
        return None, None
    return (t_trigger - t_insp_start) * 1e3, (t_cycle - t_insp_end) * 1e3


def _median_interval(starts: Sequence[float]) -> float:
    if len(starts) < 2:
        return 4.0
    return float(np.median(np.diff(np.asarray(starts))))


def segment_breaths(efforts: Sequence[tuple], triggers: Sequence[float],
                    cycles: Sequence[float], horizon: Optional[float] = None):
    """Pair ventilator pressurizations to patient efforts.

    ``efforts`` is a sequence of (start, end) windows, non-overlapping and
    sorted; ``triggers``/``cycles`` are matched pressurization start/end times
    (equal length, cycles[i] > triggers[i]). A trigger pairs to the effort
    whose window contains it, else to the next effort starting within one
    breath period (covers a trigger firing just ahead of its effort); anything
    else is an auto-trigger, excluded from the labeled set and reported in the
    diagnostics sidecar. Efforts with no trigger become IE candidates.

    Returns (pairs, diagnostics) where pairs[k] is the (trigger, cycle) tuple
    for effort k or None.
    """
    efforts = sorted(efforts)
    for (s0, e0), (s1, _) in zip(efforts, efforts[1:]):
        if s1 < e0:
            raise ValueError("effort windows overlap")
    if len(triggers) != len(cycles):
        raise ValueError("each trigger needs a matching cycle time")
    if horizon is None:
        horizon = _median_interval([s for s, _ in efforts])

    pairs: list = [None] * len(efforts)
    diags = PairingDiagnostics()
    starts = [s for s, _ in efforts]
    for t_trig, t_cyc in sorted(zip(triggers, cycles)):
        idx = None
        for k, (s, e) in enumerate(efforts):
            if s <= t_trig <= e:
                idx = k
                break
        if idx is None:
            # forward pairing: next effort starting within one breath period
            later = [k for k, s in enumerate(starts) if s > t_trig and s - t_trig <= horizon]
            if later:
                idx = later[0]
        if idx is None or pairs[idx] is not None:
            diags.auto_trigger_times.append(t_trig)
            continue
        pairs[idx] = (t_trig, t_cyc)
    return pairs, diags


def label_breaths(efforts, triggers, cycles, horizon=None,
                  thresholds: dict = THRESHOLDS):
    """Segment, compute delays, classify: the full ground-truth labeling pass."""
    pairs, diags = segment_breaths(efforts, triggers, cycles, horizon)
    labels = []
    for k, ((s, e), pair) in enumerate(zip(sorted(efforts), pairs)):
        if pair is None:
            labels.append(BreathLabel(k, s, e, label=IE))
            continue
        t_trig, t_cyc = pair
        sd, ed = compute_delays(s, e, t_trig, t_cyc)
        labels.append(BreathLabel(k, s, e, t_trig, t_cyc, sd, ed,
                                  classify_breath(sd, ed, True, thresholds)))
    return labels, diags


def _one_vs_rest(truth: np.ndarray, pred: np.ndarray, cls: str):
    tp = int(np.sum((truth == cls) & (pred == cls)))
    fn = int(np.sum((truth == cls) & (pred != cls)))
    fp = int(np.sum((truth != cls) & (pred == cls)))
    tn = int(np.sum((truth != cls) & (pred != cls)))
    # empty denominators are vacuously perfect, so an absent class cannot
    # drag scores below 1.0 on otherwise perfect predictions
    tpr = tp / (tp + fn) if tp + fn else 1.0
    tnr = tn / (tn + fp) if tn + fp else 1.0
    ppv = tp / (tp + fp) if tp + fp else 1.0
    return tpr, tnr, ppv


def score_detector(truth_labels: Sequence[BreathLabel],
                   predicted) -> DetectorReport:
    """Score per-class detector performance against ground truth.

    ``predicted`` is either a sequence of class names, or a sequence of
    (start_delay_ms, end_delay_ms) pairs (None values meaning "not triggered")
    which are first classified through the same margins. Truth and predictions
    must be index-aligned by breath.
    """
    if len(predicted) != len(truth_labels):
        raise AlignmentError(
            f"{len(predicted)} predictions for {len(truth_labels)} breaths")
    truth = np.array([b.label for b in truth_labels])
    pred_classes = []
    pred_delays = []
    for item in predicted:
        if isinstance(item, str):
            if item not in CLASSES:
                raise AlignmentError(f"unknown predicted class {item!r}")
            pred_classes.append(item)
            pred_delays.append((None, None))
        else:
            sd, ed = item
            triggered = sd is not None and ed is not None
            pred_classes.append(classify_breath(sd, ed, triggered))
            pred_delays.append((sd, ed))
    pred = np.array(pred_classes)

    n = len(CLASSES)
    index = {c: i for i, c in enumerate(CLASSES)}
    confusion = np.zeros((n, n), dtype=int)
    for t, q in zip(truth, pred):
        confusion[index[t], index[q]] += 1

    tpr, tnr, ppv, ba = {}, {}, {}, {}
    for cls in CLASSES:
        r, s, v = _one_vs_rest(truth, pred, cls)
        tpr[cls], tnr[cls], ppv[cls] = r, s, v
        ba[cls] = (r + s) / 2.0

    quartiles = {}
    for cls in CLASSES:
        errs_start, errs_end = [], []
        for b, (sd, ed) in zip(truth_labels, pred_delays):
            if b.label != cls or b.start_delay_ms is None or sd is None:
                continue
            errs_start.append(sd - b.start_delay_ms)
            errs_end.append(ed - b.end_delay_ms)
        if errs_start:
            quartiles[cls] = {
                "start": tuple(np.percentile(errs_start, [25, 50, 75])),
                "end": tuple(np.percentile(errs_end, [25, 50, 75])),
            }
    return DetectorReport(
        classes=CLASSES, confusion=confusion, tpr=tpr, tnr=tnr, ppv=ppv,
        balanced_accuracy=ba, delay_error_quartiles=quartiles,
        n_breaths=len(truth_labels))
