"""CSV and aligned-text reports: the per-row event table, the label-weighted
dual-purpose table and the per-row segment table."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..corpus import write_split_manifest
from ..detector import save_model
from ..evaluation import weighted_dual_score
from ..stats import wilcoxon_rank_sum
from .experiment import STRATEGIES, ExperimentResult, MatrixRow, ModelResult, model_path, scenario_matrix

EVENT_METRICS = ("ppv", "sen", "f1")
SEGMENT_METRICS = ("acc", "sen", "spe", "ppv", "f1", "auc")
NA = "NA"


def fmt(x: float | None, digits: int | None = None) -> str:
    if x is None:
        return NA
    return repr(float(x)) if digits is None else f"{x:.{digits}f}"


def mean_sd(values: Iterable[float | None]) -> tuple[float | None, float | None, int]:
    """Mean and sample sd of the defined values."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None, 0
    arr = np.array(vals, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else None
    return float(arr.mean()), sd, len(arr)


def significance_marker(p: float | None, better: bool) -> str:
    if p is None or p >= 0.05:
        return ""
    level = 3 if p < 0.001 else 2 if p < 0.01 else 1
    return ("*" if better else "†") * level


@dataclass
class SummaryRow:
    task: str
    row: MatrixRow
    train_label: str
    test_label: str
    n_models: int
    event: dict[str, tuple[float | None, float | None]]
    event_marker: dict[str, str]
    segment: dict[str, tuple[float | None, float | None]]


def _rows_for(result: ExperimentResult, task: str, row: MatrixRow) -> list[ModelResult]:
    return [r for r in result.results
            if r.task == task and r.strategy == row.strategy and r.test == row.test]


def summarize_results(result: ExperimentResult) -> list[SummaryRow]:
    out = []
    tasks = [t for t in result.config.tasks if any(r.task == t for r in result.results)]
    for task in tasks:
        pcs = {row.test: _rows_for(result, task, row) for row in scenario_matrix() if row.control == "PC"}
        for row in scenario_matrix():
            models = _rows_for(result, task, row)
            event, markers, segment = {}, {}, {}
            for m in EVENT_METRICS:
                vals = [r.event_values()[m] for r in models]
                mean, sd, _ = mean_sd(vals)
                event[m] = (mean, sd)
                markers[m] = ""
                if row.control != "PC" and row.headline:
                    ref = [r.event_values()[m] for r in pcs[row.test]]
                    a = [v for v in vals if v is not None]
                    b = [v for v in ref if v is not None]
                    if a and b:
                        ref_mean = float(np.mean(b))
                        markers[m] = significance_marker(wilcoxon_rank_sum(a, b), mean > ref_mean)
            for m in SEGMENT_METRICS:
                mean, sd, _ = mean_sd(r.segment_values()[m] for r in models)
                segment[m] = (mean, sd)
            out.append(SummaryRow(task, row, row.strategy.label(result.names), result.names[row.test],
                                  len(models), event, markers, segment))
    return out


def dual_table(result: ExperimentResult, summary: Sequence[SummaryRow]) -> list[dict]:
    rows = []
    for task in dict.fromkeys(s.task for s in summary):
        n_a = result.test_label_counts[(task, "A")]
        n_b = result.test_label_counts[(task, "B")]
        for strategy in STRATEGIES:
            on = {s.row.test: s for s in summary if s.task == task and s.row.strategy == strategy}
            entry = {"task": task, "strategy": strategy.label(result.names), "n_a": n_a, "n_b": n_b}
            for m in EVENT_METRICS:
                a, b = on["A"].event[m][0], on["B"].event[m][0]
                entry[m] = None if a is None or b is None else weighted_dual_score(a, n_a, b, n_b)
            rows.append(entry)
    return rows


# --------------------------------------------------------------------------
# Writers


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def aligned(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def models_csv(result: ExperimentResult) -> str:
    header = ["task", "train", "test", "control", "headline", "repeat", "fold", "threshold",
              "seg_tp", "seg_tn", "seg_fp", "seg_fn", *(f"seg_{m}" for m in SEGMENT_METRICS),
              "ev_tp", "ev_fp", "ev_fn", "ev_unpaired", *(f"ev_{m}" for m in EVENT_METRICS)]
    control = {(row.strategy, row.test): row for row in scenario_matrix()}
    rows = []
    for r in result.results:
        row = control[(r.strategy, r.test)]
        seg, ev = r.report.segments, r.report.events
        sv, evv = r.segment_values(), r.event_values()
        rows.append([r.task, r.strategy.label(result.names), result.names[r.test], row.control,
                     int(row.headline), r.fold.repeat, r.fold.fold, fmt(r.threshold),
                     seg.tp, seg.tn, seg.fp, seg.fn, *(fmt(sv[m]) for m in SEGMENT_METRICS),
                     ev.tp, ev.fp, ev.fn, ev.unpaired_matches, *(fmt(evv[m]) for m in EVENT_METRICS)])
    return _csv_text(header, rows)


def per_clip_csv(result: ExperimentResult) -> str:
    header = ["task", "train", "test", "repeat", "fold", "clip_id", "seg_tp", "seg_tn", "seg_fp",
              "seg_fn", "ev_tp", "ev_fp", "ev_fn", "ev_unpaired"]
    rows = []
    for r in result.results:
        for c in r.report.clips:
            rows.append([r.task, r.strategy.label(result.names), result.names[r.test], r.fold.repeat,
                         r.fold.fold, c.clip_id, c.segments.tp, c.segments.tn, c.segments.fp,
                         c.segments.fn, c.events.tp, c.events.fp, c.events.fn, c.events.unpaired_matches])
    return _csv_text(header, rows)


def _pm(mean_sd_pair, marker: str = "") -> str:
    mean, sd = mean_sd_pair
    if mean is None:
        return NA
    return f"{mean:.3f}±{fmt(sd, 3)}{marker}"


def event_table_outputs(summary: Sequence[SummaryRow]) -> tuple[str, str]:
    header = ["task", "control", "train", "test", "n_models"]
    for m in EVENT_METRICS:
        header += [f"{m}_mean", f"{m}_sd", f"{m}_sig"]
    csv_rows, text_rows = [], []
    for s in summary:
        if not s.row.headline:
            continue
        vals = []
        for m in EVENT_METRICS:
            vals += [fmt(s.event[m][0]), fmt(s.event[m][1]), s.event_marker[m]]
        csv_rows.append([s.task, s.row.control, s.train_label, s.test_label, s.n_models, *vals])
        text_rows.append([s.task, s.row.control, s.train_label, s.test_label,
                          *(_pm(s.event[m], s.event_marker[m]) for m in EVENT_METRICS)])
    text = aligned(["task", "control", "train", "test", "PPV", "SEN", "F1"], text_rows)
    return _csv_text(header, csv_rows), text


def dual_table_outputs(rows: Sequence[dict]) -> tuple[str, str]:
    header = ["task", "strategy", "n_a", "n_b", *EVENT_METRICS]
    csv_rows = [[r["task"], r["strategy"], r["n_a"], r["n_b"], *(fmt(r[m]) for m in EVENT_METRICS)]
                for r in rows]
    text_rows = [[r["task"], r["strategy"], *(fmt(r[m], 3) for m in EVENT_METRICS)] for r in rows]
    return _csv_text(header, csv_rows), aligned(["task", "strategy", "PPV", "SEN", "F1"], text_rows)


def segment_table_outputs(summary: Sequence[SummaryRow]) -> tuple[str, str]:
    header = ["task", "control", "train", "test", "headline"]
    for m in SEGMENT_METRICS:
        header += [f"{m}_mean", f"{m}_sd"]
    csv_rows, text_rows = [], []
    for s in summary:
        vals = []
        for m in SEGMENT_METRICS:
            vals += [fmt(s.segment[m][0]), fmt(s.segment[m][1])]
        csv_rows.append([s.task, s.row.control, s.train_label, s.test_label, int(s.row.headline), *vals])
        text_rows.append([s.task, s.row.control, s.train_label, s.test_label,
                          *(_pm(s.segment[m]) for m in SEGMENT_METRICS)])
    text = aligned(["task", "control", "train", "test", "ACC", "SEN", "SPE", "PPV", "F1", "AUC"], text_rows)
    return _csv_text(header, csv_rows), text


def write_reports(result: ExperimentResult, out: str | Path) -> dict[str, Path]:
    """Write models, split manifests, CSV tables and their aligned-text twins."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for role, d in result.data.items():
        p = out / "splits" / f"{role}_{result.names[role]}.txt"
        p.parent.mkdir(parents=True, exist_ok=True)
        write_split_manifest(p, d.split, d.folds)
        paths[f"split_{role}"] = p
    for (task, slug, fold), params in sorted(result.models.items()):
        p = model_path(out, task, slug, fold)
        p.parent.mkdir(parents=True, exist_ok=True)
        save_model(p, params)
    summary = summarize_results(result)
    ev_csv, ev_txt = event_table_outputs(summary)
    dual_csv, dual_txt = dual_table_outputs(dual_table(result, summary))
    seg_csv, seg_txt = segment_table_outputs(summary)
    files = {
        "models.csv": models_csv(result), "per_clip.csv": per_clip_csv(result),
        "event_table.csv": ev_csv, "event_table.txt": ev_txt, "dual_table.csv": dual_csv, "dual_table.txt": dual_txt,
        "segment_table.csv": seg_csv, "segment_table.txt": seg_txt,
    }
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
        paths[name] = out / name
    return paths


def write_manifest(out: str | Path, result: ExperimentResult, digests: dict[str, str],
                   artifacts: dict[str, Path], extra: dict | None = None) -> Path:
    out = Path(out)
    manifest = {
        "config": result.config.to_lines(),
        "seed": result.config.seed,
        "corpora": {role: {"name": result.names[role], "sha256": digests[role],
                           "test_fraction_achieved": result.data[role].split.achieved_fraction}
                    for role in ("A", "B")},
        "timings_s": {k: round(v, 3) for k, v in result.timings.items()},
        "artifacts": {k: str(Path(v).relative_to(out)) for k, v in sorted(artifacts.items())},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
