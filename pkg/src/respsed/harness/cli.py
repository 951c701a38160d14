"""Command line entry point.

Exit codes: 0 success, 2 precondition/config error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .. import config as kv
from ..corpus import (
    KINDS,
    LUNG_LIKE,
    TRACHEAL_LIKE,
    Corpus,
    CorpusError,
    corpus_digest,
    labels_for_clip,
    load_corpus,
    load_recording,
    parse_labels,
    parse_recording_labels,
    save_corpus,
    synth_corpus,
    truncate_to_clips,
    write_labels,
    write_split_manifest,
)
from ..detector import (
    BaselineConfig,
    FoldData,
    ModelFormatError,
    ShapeError,
    TrainScenario,
    baseline_detect,
    forward,
    load_model,
    save_model,
    train,
)
from ..evaluation import (
    EventCounts,
    event_metrics,
    match_events,
    rasterize_truth,
    segment_confusion,
    segment_metrics,
)
from ..features import extract
from ..postprocess import postprocess, select_threshold
from .experiment import ExperimentConfig, ExperimentError, prepare, run_experiment
from .plots import emit_plot
from .reports import _csv_text, aligned, fmt, write_manifest, write_reports
from .summary import summarize_corpus, summary_tables

log = logging.getLogger("respsed")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class PreconditionError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    values = kv.read_kv(args.config) if args.config else {}
    cfg = ExperimentConfig.from_mapping(values)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    if args.tasks:
        cfg = replace(cfg, tasks=tuple(t.strip() for t in args.tasks.split(",") if t.strip()))
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corpus(path) -> Corpus:
    if not Path(path).is_dir():
        raise PreconditionError(f"corpus directory {path} does not exist")
    return load_corpus(path)


# --------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    """Manifest TSV columns: wav, labels (may be empty), participant, domain."""
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise PreconditionError(f"manifest {manifest} not found")
    entries = []
    with open(manifest, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            wav = manifest.parent / row["wav"]
            rec = load_recording(wav, row["participant"], row.get("domain") or "lung")
            rows = parse_recording_labels(manifest.parent / row["labels"]) if row.get("labels") else []
            for clip in truncate_to_clips(rec, f"{row['participant']}_{wav.stem}"):
                entries.append((clip, tuple(labels_for_clip(rows, clip.clip_index))))
    corpus = Corpus(tuple(entries), args.name or manifest.parent.name)
    save_corpus(corpus, _out(args))
    print(f"ingested {len(corpus)} clips from {len(corpus.participants())} participants")
    return EXIT_OK


def cmd_synth(args) -> int:
    base = LUNG_LIKE if args.preset == "lung" else TRACHEAL_LIKE
    cfg = replace(base, n_participants=args.participants, clips_per_participant=args.clips,
                  cas_probability=args.cas_probability if args.cas_probability is not None
                  else base.cas_probability)
    corpus = synth_corpus(cfg, args.seed or 0, name=args.name or f"synth_{args.preset}")
    save_corpus(corpus, _out(args))
    print(f"wrote {len(corpus)} synthetic clips to {args.out}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    summaries = [summarize_corpus(_corpus(p)) for p in args.corpus]
    csv_text, text = summary_tables(summaries)
    out = _out(args)
    (out / "summary.csv").write_text(csv_text, encoding="utf-8")
    (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(args.corpus)
    data = prepare("A", corpus, cfg)
    out = _out(args)
    write_split_manifest(out / "split.txt", data.split, data.folds)
    rows = []
    for task in cfg.tasks:
        fold_data = [{"A": FoldData(data.examples(task, fp.train), data.examples(task, fp.validation))}
                     for fp in data.folds]
        results = train(TrainScenario("full", ("A",)), fold_data, cfg.train, task=task)
        for fp, res, fd in zip(data.folds, results, fold_data):
            path = out / "models" / task / f"{fp.name}.model"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_model(path, res.params)
            val = [e for e in fd["A"].validation if e.n_labels > 0]
            thr = select_threshold([(forward(res.params, e.x).p, e.target) for e in val])
            rows.append([task, fp.name, str(path.relative_to(out)), fmt(thr), res.best_epoch, res.epochs_run])
    (out / "models.tsv").write_text(
        _csv_text(["task", "fold", "model", "threshold", "best_epoch", "epochs_run"], rows).replace(",", "\t"),
        encoding="utf-8")
    print(aligned(["task", "fold", "model", "threshold", "best_epoch", "epochs_run"], rows), end="")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(args.corpus)
    models = {}
    for spec in args.model or []:
        task, _, path = spec.partition("=")
        if task not in KINDS or not path:
            raise PreconditionError(f"--model expects TASK=PATH, got {spec!r}")
        models[task] = load_model(path)
    if not models and not args.baseline:
        raise PreconditionError("give --model TASK=PATH or --baseline")
    out = _out(args)
    tasks = list(models) if models else list(cfg.tasks)
    for clip, _ in corpus.clips:
        feats = extract(clip)
        events = []
        for task in tasks:
            p = forward(models[task], feats.features) if task in models else baseline_detect(
                feats.features, task, BaselineConfig())
            events += postprocess(p, args.threshold, feats.spec, task)
        write_labels(out / f"{clip.clip_id}.txt", events)
    print(f"wrote detections for {len(corpus)} clips to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(args.corpus)
    det_dir = Path(args.detections)
    out = _out(args)
    rows, pooled = [], {}
    for task in cfg.tasks:
        seg_total, ev_total = None, EventCounts()
        for clip, labels in corpus.clips:
            truth = [ev for ev in labels if ev.kind == task]
            if not truth:
                continue
            det_path = det_dir / f"{clip.clip_id}.txt"
            preds = [ev for ev in parse_labels(det_path) if ev.kind == task] if det_path.exists() else []
            seg = segment_confusion(rasterize_truth(preds, task), rasterize_truth(truth, task))
            ev = match_events(truth, preds)
            seg_total = seg if seg_total is None else seg_total + seg
            ev_total = ev_total + ev
            rows.append([task, clip.clip_id, seg.tp, seg.tn, seg.fp, seg.fn, ev.tp, ev.fp, ev.fn])
        if seg_total is not None:
            pooled[task] = (segment_metrics(seg_total), event_metrics(ev_total))
    (out / "per_clip.csv").write_text(_csv_text(
        ["task", "clip_id", "seg_tp", "seg_tn", "seg_fp", "seg_fn", "ev_tp", "ev_fp", "ev_fn"], rows),
        encoding="utf-8")
    header = ["task", "seg_acc", "seg_sen", "seg_spe", "seg_ppv", "seg_f1", "ev_ppv", "ev_sen", "ev_f1"]
    srows = [[t, fmt(s.accuracy, 3), fmt(s.sensitivity, 3), fmt(s.specificity, 3), fmt(s.ppv, 3),
              fmt(s.f1, 3), fmt(e.ppv, 3), fmt(e.sensitivity, 3), fmt(e.f1, 3)]
             for t, (s, e) in pooled.items()]
    (out / "summary.csv").write_text(_csv_text(header, srows), encoding="utf-8")
    print(aligned(header, srows), end="")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    if args.synthetic:
        n_p, n_c = args.participants, args.clips
        corpus_a = synth_corpus(replace(LUNG_LIKE, n_participants=n_p, clips_per_participant=n_c),
                                seed=cfg.seed * 2 + 1, name="SynthLung")
        corpus_b = synth_corpus(replace(TRACHEAL_LIKE, n_participants=n_p, clips_per_participant=n_c),
                                seed=cfg.seed * 2 + 2, name="SynthTracheal")
    else:
        if not (args.corpus_a and args.corpus_b):
            raise PreconditionError("give --corpus-a and --corpus-b, or --synthetic")
        corpus_a, corpus_b = _corpus(args.corpus_a), _corpus(args.corpus_b)
    out = _out(args)
    result = run_experiment(corpus_a, corpus_b, cfg)
    artifacts = write_reports(result, out)
    s_csv, s_txt = summary_tables([summarize_corpus(corpus_a), summarize_corpus(corpus_b)])
    for name, text in (("corpus_summary.csv", s_csv), ("corpus_summary.txt", s_txt)):
        (out / name).write_text(text, encoding="utf-8")
        artifacts[name] = out / name
    write_manifest(out, result, {"A": corpus_digest(corpus_a), "B": corpus_digest(corpus_b)}, artifacts)
    print((out / "event_table.txt").read_text(encoding="utf-8"))
    print((out / "dual_table.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    corpus = _corpus(args.corpus)
    out = _out(args)
    ids = args.clip or corpus.ids
    for cid in ids:
        try:
            clip, labels = corpus.get(cid)
        except KeyError:
            raise PreconditionError(f"clip {cid!r} not in corpus") from None
        dets = []
        if args.detections:
            det_path = Path(args.detections) / f"{cid}.txt"
            dets = parse_labels(det_path) if det_path.exists() else []
        emit_plot(out / f"{cid}.{args.format}", extract(clip).spec, labels, dets, title=cid)
    print(f"wrote {len(ids)} plot(s) to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--tasks", help="comma separated subset of I,E,C")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="respsed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="WAV + label files -> corpus bundle")
    p.add_argument("manifest", help="TSV with columns wav, labels, participant, domain")
    p.add_argument("--name")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus bundle")
    p.add_argument("--preset", choices=("lung", "tracheal"), default="lung")
    p.add_argument("--participants", type=int, default=6)
    p.add_argument("--clips", type=int, default=3)
    p.add_argument("--cas-probability", type=float)
    p.add_argument("--name")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("summarize", parents=[common], help="label statistics per corpus")
    p.add_argument("corpus", nargs="+")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("train", parents=[common], help="cross-validated full training on one corpus")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="write detected events per clip")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", action="append", help="TASK=PATH, repeatable")
    p.add_argument("--baseline", action="store_true", help="use the band-energy baseline")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", parents=[common], help="score detection files against labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--detections", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", parents=[common], help="run the full scenario matrix")
    p.add_argument("--corpus-a")
    p.add_argument("--corpus-b")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--participants", type=int, default=8)
    p.add_argument("--clips", type=int, default=3)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", parents=[common], help="spectrogram overlays")
    p.add_argument("--corpus", required=True)
    p.add_argument("--clip", action="append")
    p.add_argument("--detections")
    p.add_argument("--format", choices=("svg", "png"), default="svg")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (kv.ConfigError, PreconditionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, ModelFormatError, ShapeError, ExperimentError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
