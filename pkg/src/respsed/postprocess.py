"""Segment probabilities -> detected events.

binarize -> connected runs -> close-event merging -> burst removal.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .corpus import CLIP_SECONDS, KINDS
from .features import BIN_HZ, Spectrogram
from .grid import GRID, SegmentGrid

MERGE_GAP_S = 0.5  # strict
MERGE_DF_HZ = 25.0  # inclusive
BURST_S = 0.05  # strict
THRESHOLDS = np.arange(101) / 100


@dataclass(frozen=True)
class DetectedEvent:
    kind: str
    start_s: float
    end_s: float
    peak_freq_hz: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if not 0.0 <= self.start_s < self.end_s <= CLIP_SECONDS:
            raise ValueError(f"invalid event span {self.start_s}..{self.end_s}")
        if self.peak_freq_hz is not None:
            k = self.peak_freq_hz / BIN_HZ
            if k != int(k) or not 0 <= k <= 128:
                raise ValueError(f"peak frequency {self.peak_freq_hz} is not a bin centre")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


def select_threshold(prob_sets: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Threshold on the 0.01 grid maximizing pooled segment accuracy; ties -> smallest."""
    if not prob_sets:
        raise ValueError("need at least one (probabilities, truth) pair")
    p = np.concatenate([np.asarray(getattr(ps, "p", ps), dtype=np.float64) for ps, _ in prob_sets])
    truth = np.concatenate([np.asarray(t) for _, t in prob_sets]).astype(bool)
    correct = ((p[None, :] >= THRESHOLDS[:, None]) == truth[None, :]).sum(axis=1)
    return float(THRESHOLDS[int(np.argmax(correct))])


def binarize(p, threshold: float) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return (np.asarray(getattr(p, "p", p)) >= threshold).astype(np.int8)


def segments_to_events(b: np.ndarray, grid: SegmentGrid = GRID, kind: str = "I") -> list[DetectedEvent]:
    b = np.asarray(b).astype(bool)
    edges = np.diff(np.concatenate([[False], b, [False]]).astype(np.int8))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)  # exclusive
    return [DetectedEvent(kind, grid.start(s), grid.end(e - 1)) for s, e in zip(starts, stops)]


def peak_bin(spec: Spectrogram, start_s: float, end_s: float) -> int:
    """Bin of the maximum power inside [start_s, end_s); ties -> lowest bin."""
    times = spec.frame_times
    frames = np.flatnonzero((times >= start_s) & (times < end_s))
    if len(frames) == 0:
        frames = np.array([int(np.argmin(np.abs(times - start_s)))])
    sub = spec.power[frames]
    hits = (sub == sub.max()).any(axis=0)
    return int(np.flatnonzero(hits)[0])


def with_peak(ev: DetectedEvent, spec: Spectrogram) -> DetectedEvent:
    return replace(ev, peak_freq_hz=peak_bin(spec, ev.start_s, ev.end_s) * BIN_HZ)


def should_merge(a: DetectedEvent, b: DetectedEvent) -> bool:
    return (b.start_s - a.end_s < MERGE_GAP_S
            and abs(a.peak_freq_hz - b.peak_freq_hz) <= MERGE_DF_HZ)


def merge_close_events(events: Iterable[DetectedEvent], spec: Spectrogram) -> list[DetectedEvent]:
    """Merge neighbours closer than 0.5 s whose peak frequencies lie within 25 Hz.

    Passes repeat until nothing merges; a merged event's peak is recomputed
    over its whole span.
    """
    events = [with_peak(ev, spec) for ev in events]
    changed = True
    while changed and len(events) > 1:
        changed = False
        out = [events[0]]
        for ev in events[1:]:
            if should_merge(out[-1], ev):
                out[-1] = with_peak(replace(out[-1], end_s=max(out[-1].end_s, ev.end_s)), spec)
                changed = True
            else:
                out.append(ev)
        events = out
    return events


def remove_bursts(events: Iterable[DetectedEvent]) -> list[DetectedEvent]:
    return [ev for ev in events if ev.end_s - ev.start_s >= BURST_S]


def postprocess(p, threshold: float, spec: Spectrogram, kind: str,
                grid: SegmentGrid = GRID) -> list[DetectedEvent]:
    events = segments_to_events(binarize(p, threshold), grid, kind)
    return remove_bursts(merge_close_events(events, spec))
