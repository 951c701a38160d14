"""Segment- and event-level scoring.

Undefined ratios (zero denominators) are returned as ``None`` and skipped by
aggregation; they are never replaced by 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import GRID, SegmentGrid

JI_THRESHOLD = 0.5


def _ratio(num: float, den: float) -> float | None:
    return num / den if den else None


# --------------------------------------------------------------------------
# Segment level


def rasterize_truth(labels: Iterable, kind: str, grid: SegmentGrid = GRID) -> np.ndarray:
    """Segment j is positive iff the kind's label union covers more than half of it."""
    spans = sorted((ev.start_s, ev.end_s) for ev in labels if ev.kind == kind)
    union: list[list[float]] = []
    for s, e in spans:
        if union and s <= union[-1][1]:
            union[-1][1] = max(union[-1][1], e)
        else:
            union.append([s, e])
    seg_start, seg_end = grid.starts(), grid.ends()
    overlap = np.zeros(grid.n_segments)
    for s, e in union:
        overlap += np.clip(np.minimum(seg_end, e) - np.maximum(seg_start, s), 0.0, None)
    return (overlap > (seg_end - seg_start) / 2).astype(np.int8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def segment_confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)), tn=int(np.sum(~pred & ~truth)),
        fp=int(np.sum(pred & ~truth)), fn=int(np.sum(~pred & truth)),
    )


@dataclass(frozen=True)
class MetricSet:
    accuracy: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    ppv: float | None = None
    f1: float | None = None
    auc: float | None = None


def f1_score(sensitivity: float | None, ppv: float | None) -> float | None:
    if sensitivity is None or ppv is None:
        return None
    return _ratio(2 * sensitivity * ppv, sensitivity + ppv)


def segment_metrics(c: ConfusionCounts, auc: float | None = None) -> MetricSet:
    if c.total == 0:
        raise ValueError("no segments to score")
    sen = _ratio(c.tp, c.tp + c.fn)
    ppv = _ratio(c.tp, c.tp + c.fp)
    return MetricSet(
        accuracy=(c.tp + c.tn) / c.total,
        sensitivity=sen,
        specificity=_ratio(c.tn, c.tn + c.fp),
        ppv=ppv,
        f1=f1_score(sen, ppv),
        auc=auc,
    )


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def roc_auc(scores, truth) -> float | None:
    """P(random positive outscores random negative), ties counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _midranks(scores)
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# --------------------------------------------------------------------------
# Event level


def jaccard(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def _span(ev) -> tuple[float, float]:
    return (ev.start_s, ev.end_s) if hasattr(ev, "start_s") else (ev[0], ev[1])


@dataclass(frozen=True)
class EventCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    unpaired_matches: int = 0  # matched at JI >= 0.5 but lost the one-to-one pairing

    def __add__(self, other: EventCounts) -> EventCounts:
        return EventCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                           self.unpaired_matches + other.unpaired_matches)


def match_events(truth: Sequence, pred: Sequence) -> EventCounts:
    """Bidirectional JI >= 0.5 matching with each TP pair counted once.

    Pairs are accepted greedily by descending JI (ties: earlier truth start,
    then earlier prediction start). Events with a qualifying partner that lost
    the pairing count as neither FP nor FN.
    """
    t_spans = [_span(e) for e in truth]
    p_spans = [_span(e) for e in pred]
    candidates = []
    for i, t in enumerate(t_spans):
        for j, p in enumerate(p_spans):
            ji = jaccard(t, p)
            if ji >= JI_THRESHOLD:
                candidates.append((-ji, t[0], p[0], i, j))
    candidates.sort()
    paired_t, paired_p = set(), set()
    for _, _, _, i, j in candidates:
        if i not in paired_t and j not in paired_p:
            paired_t.add(i)
            paired_p.add(j)
    matched_t = {c[3] for c in candidates}
    matched_p = {c[4] for c in candidates}
    return EventCounts(
        tp=len(paired_t),
        fp=len(p_spans) - len(matched_p),
        fn=len(t_spans) - len(matched_t),
        unpaired_matches=len(matched_t - paired_t) + len(matched_p - paired_p),
    )


@dataclass(frozen=True)
class EventMetrics:
    ppv: float | None
    sensitivity: float | None
    f1: float | None


def event_metrics(c: EventCounts) -> EventMetrics:
    sen = _ratio(c.tp, c.tp + c.fn)
    ppv = _ratio(c.tp, c.tp + c.fp)
    return EventMetrics(ppv=ppv, sensitivity=sen, f1=f1_score(sen, ppv))


def weighted_dual_score(score_a: float, n_a: int, score_b: float, n_b: int) -> float:
    """Label-count weighted mean of one index measured on two test sets."""
    if n_a + n_b <= 0:
        raise ValueError("label counts must sum to a positive number")
    return (score_a * n_a + score_b * n_b) / (n_a + n_b)


# --------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class ClipEval:
    clip_id: str
    segments: ConfusionCounts
    events: EventCounts


@dataclass
class EvalReport:
    task: str
    scenario: str = ""
    fold: str = ""
    threshold: float | None = None
    clips: list[ClipEval] = field(default_factory=list)
    auc: float | None = None

    @property
    def segments(self) -> ConfusionCounts:
        total = ConfusionCounts()
        for c in self.clips:
            total = total + c.segments
        return total

    @property
    def events(self) -> EventCounts:
        total = EventCounts()
        for c in self.clips:
            total = total + c.events
        return total

    def segment_metrics(self) -> MetricSet:
        return segment_metrics(self.segments, self.auc)

    def event_metrics(self) -> EventMetrics:
        return event_metrics(self.events)
