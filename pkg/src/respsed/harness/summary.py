"""Corpus summary statistics: label counts, total and mean durations."""

from __future__ import annotations

from dataclasses import dataclass

from ..corpus import CLIP_SECONDS, KINDS, Corpus
from ..stats import t_test_two_sample
from .reports import _csv_text, aligned, fmt, mean_sd


@dataclass(frozen=True)
class KindSummary:
    kind: str
    count: int
    total_min: float
    mean_s: float | None
    sd_s: float | None
    durations: tuple[float, ...]


@dataclass(frozen=True)
class CorpusSummary:
    name: str
    n_clips: int
    total_min: float
    kinds: dict[str, KindSummary]


def summarize_corpus(corpus: Corpus) -> CorpusSummary:
    kinds = {}
    for kind in KINDS:
        durations = tuple(ev.duration for ev in corpus.labels(kind))
        mean, sd, _ = mean_sd(durations)
        kinds[kind] = KindSummary(kind, len(durations), sum(durations) / 60.0, mean, sd, durations)
    return CorpusSummary(corpus.name, len(corpus), len(corpus) * CLIP_SECONDS / 60.0, kinds)


def compare_durations(a: CorpusSummary, b: CorpusSummary) -> dict[str, float | None]:
    """Student's t-test p-value per kind between two corpora's label durations."""
    out = {}
    for kind in KINDS:
        da, db = a.kinds[kind].durations, b.kinds[kind].durations
        out[kind] = t_test_two_sample(da, db) if len(da) >= 2 and len(db) >= 2 else None
    return out


def _mean_sd_text(k: KindSummary) -> str:
    if k.mean_s is None:
        return "NA"
    return f"{k.mean_s:.2f} ± {fmt(k.sd_s, 2)}"


def summary_tables(summaries: list[CorpusSummary]) -> tuple[str, str]:
    """CSV and aligned text with one column per corpus, plus pairwise p-values for two."""
    names = [s.name for s in summaries]
    p_values = compare_durations(*summaries) if len(summaries) == 2 else {}
    csv_rows = [["recordings", "count", *(s.n_clips for s in summaries), ""],
                ["recordings", "total_min", *(fmt(s.total_min) for s in summaries), ""]]
    text_rows = [["Recordings", "No. of 15 s recordings", *(str(s.n_clips) for s in summaries), ""],
                 ["", "Total duration (min)", *(f"{s.total_min:.2f}" for s in summaries), ""]]
    for kind in KINDS:
        ks = [s.kinds[kind] for s in summaries]
        p = fmt(p_values.get(kind)) if p_values else ""
        p_text = fmt(p_values.get(kind), 4) if p_values else ""
        csv_rows += [[kind, "count", *(k.count for k in ks), ""],
                     [kind, "total_min", *(fmt(k.total_min) for k in ks), ""],
                     [kind, "mean_s", *(fmt(k.mean_s) for k in ks), p],
                     [kind, "sd_s", *(fmt(k.sd_s) for k in ks), ""]]
        text_rows += [[kind, "No.", *(str(k.count) for k in ks), ""],
                      ["", "Total duration (min)", *(f"{k.total_min:.2f}" for k in ks), ""],
                      ["", "Mean duration (s)", *(_mean_sd_text(k) for k in ks), p_text]]
    header = ["group", "attribute", *names, "p_value"]
    return _csv_text(header, csv_rows), aligned(header, text_rows)
