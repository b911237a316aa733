"""Vector-graphics export of labeled records (stacked paw/flow/volume panels)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ConfigError

# deterministic SVG output: fixed id hash salt, no creation date
matplotlib.rcParams["svg.hashsalt"] = "ventsim"

_MARKER_STYLE = {
    "effort_start": dict(color="tab:blue", linestyle="--", alpha=0.8),
    "effort_end": dict(color="tab:red", linestyle="--", alpha=0.8),
    "trigger": dict(color="tab:green", linestyle="-", alpha=0.9),
    "cycle": dict(color="tab:orange", linestyle="-", alpha=0.9),
}


def plot_export(channels: dict, labels, out_path, breath_range=None,
                title: str = "") -> Path:
    """Render stacked pressure/flow/volume strips with label markers to SVG.

    ``breath_range`` is an inclusive (first, last) breath index pair selecting
    the plotted window; None plots everything. Output bytes are deterministic
    for fixed input.
    """
    labels = list(labels)
    if breath_range is not None:
        a, b = breath_range
        selected = [lab for lab in labels if a <= lab.breath_idx <= b]
        if not selected:
            raise ConfigError(f"breath range {breath_range} selects no breaths")
    else:
        selected = labels

    t = channels["t"]
    if selected:
        t0 = max(min(lab.t_insp_start for lab in selected) - 1.0, float(t[0]))
        t_ends = [lab.t_cycle or lab.t_insp_end for lab in selected]
        t1 = min(max(t_ends) + 2.0, float(t[-1]))
    else:
        t0, t1 = float(t[0]), float(t[-1])
    lo = int(max(0, (t >= t0).argmax()))
    hi = int(len(t) - (t[::-1] <= t1).argmax())
    window = slice(lo, hi)

    fig, axes = plt.subplots(3, 1, figsize=(9, 6), sharex=True)
    axes[0].plot(t[window], channels["paw"][window], lw=0.9, color="k")
    axes[0].set_ylabel("paw (cmH2O)")
    axes[1].plot(t[window], channels["flow"][window], lw=0.9, color="k")
    axes[1].set_ylabel("flow (L/s)")
    axes[2].plot(t[window], channels["vol"][window], lw=0.9, color="k")
    axes[2].set_ylabel("volume (L)")
    axes[2].set_xlabel("time (s)")
    if "pmus" in channels:
        ax0b = axes[0].twinx()
        ax0b.plot(t[window], channels["pmus"][window], lw=0.8,
                  color="tab:purple", alpha=0.6)
        ax0b.set_ylabel("pmus (cmH2O)", color="tab:purple")

    def mark(time, kind):
        if time is None or not (t0 <= time <= t1):
            return
        for ax in axes:
            ax.axvline(time, lw=0.8, **_MARKER_STYLE[kind])

    for lab in selected:
        mark(lab.t_insp_start, "effort_start")
        mark(lab.t_insp_end, "effort_end")
        mark(lab.t_trigger, "trigger")
        mark(lab.t_cycle, "cycle")
        y = axes[0].get_ylim()[1]
        axes[0].text(lab.t_insp_start, y, lab.label, fontsize=7,
                     va="bottom", ha="left")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


def plot_record(record_dir, out_path, breath_range=None) -> Path:
    """Plot a record directory produced by the dataset generator."""
    from .datagen import load_labels, read_waveforms

    record_dir = Path(record_dir)
    channels = read_waveforms(record_dir / "waveforms.csv")
    rows = load_labels(record_dir / "labels.csv")
    return plot_export(channels, [lab for lab, _ in rows], out_path,
                       breath_range=breath_range, title=record_dir.name)
