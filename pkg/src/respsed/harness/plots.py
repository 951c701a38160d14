"""Static spectrogram overlays: ground truth bars above, detections below."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from ..corpus import CLIP_SECONDS  # noqa: E402
from ..features import Spectrogram  # noqa: E402

KIND_COLORS = {"I": "#d62728", "E": "#1f77b4", "C": "#2ca02c"}
LANE_ROWS = {"I": 2, "E": 1, "C": 0}


@dataclass(frozen=True)
class Bar:
    lane: str  # "truth" or "detected"
    kind: str
    start_s: float
    end_s: float
    gid: str


@dataclass(frozen=True)
class PlotInfo:
    path: Path
    bars: tuple[Bar, ...]
    axes_x0: float  # spectrogram axes left edge in output units (pt for SVG)
    axes_width: float


def emit_plot(path: str | Path, spec: Spectrogram, labels: Sequence, detections: Sequence,
              title: str = "") -> PlotInfo:
    """Write one SVG (or PNG, by suffix) overlay; output bytes depend only on inputs."""
    path = Path(path)
    plt.rcParams["svg.hashsalt"] = "respsed"
    fig = plt.figure(figsize=(10, 4.5))
    gs = fig.add_gridspec(3, 1, height_ratios=[1, 4, 1], hspace=0.08,
                          left=0.08, right=0.98, top=0.92, bottom=0.1)
    ax_truth = fig.add_subplot(gs[0])
    ax_spec = fig.add_subplot(gs[1], sharex=ax_truth)
    ax_det = fig.add_subplot(gs[2], sharex=ax_truth)

    log_power = 10 * np.log10(spec.power.T + 1e-10)
    ax_spec.imshow(log_power, origin="lower", aspect="auto", cmap="magma",
                   extent=(0.0, CLIP_SECONDS, 0.0, float(spec.bin_freqs[-1])), interpolation="nearest")
    ax_spec.set_ylabel("Hz")

    bars = []
    for lane, ax, events in (("truth", ax_truth, labels), ("detected", ax_det, detections)):
        ax.set_ylim(0, 3)
        ax.set_yticks([0.5, 1.5, 2.5], ["C", "E", "I"])
        for n, ev in enumerate(events):
            gid = f"{lane}-{n}"
            ax.add_patch(Rectangle((ev.start_s, LANE_ROWS[ev.kind] + 0.15), ev.end_s - ev.start_s, 0.7,
                                   color=KIND_COLORS[ev.kind], gid=gid, linewidth=0))
            bars.append(Bar(lane, ev.kind, ev.start_s, ev.end_s, gid))
    ax_truth.set_xlim(0.0, CLIP_SECONDS)
    ax_truth.tick_params(labelbottom=False)
    ax_spec.tick_params(labelbottom=False)
    ax_det.set_xlabel("time (s)")
    if title:
        ax_truth.set_title(title, fontsize=9)

    bbox = ax_spec.get_position()
    width_units = fig.get_figwidth() * 72.0  # SVG user units are points
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else {"Software": None})
    plt.close(fig)
    return PlotInfo(path, tuple(bars), bbox.x0 * width_units, bbox.width * width_units)
