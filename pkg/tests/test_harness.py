import csv
import io
import re
from dataclasses import replace

import numpy as np
import pytest

from respsed.corpus import (
    CLIP_SAMPLES,
    LUNG_LIKE,
    TRACHEAL_LIKE,
    Clip,
    Corpus,
    LabelEvent,
    save_corpus,
    synth_corpus,
    write_wav,
)
from respsed.detector import TrainConfig, init_model, save_model
from respsed.evaluation import weighted_dual_score
from respsed.features import spectrogram
from respsed.harness.cli import main
from respsed.harness.experiment import ExperimentConfig, ExperimentError, run_experiment, scenario_matrix
from respsed.harness.plots import emit_plot
from respsed.harness.reports import mean_sd, significance_marker, write_reports
from respsed.harness.summary import compare_durations, summarize_corpus, summary_tables
from respsed.postprocess import DetectedEvent

TINY_TRAIN = TrainConfig(batch_size=4, max_epochs=2, patience=2, learning_rate=0.01, fine_tune_epochs=1,
                         channels=4, hidden=3)
TINY = ExperimentConfig(tasks=("I",), k=2, repeats=1, test_fraction=0.25, train=TINY_TRAIN)


def _tiny_corpora():
    a = synth_corpus(replace(LUNG_LIKE, n_participants=4, clips_per_participant=2), seed=1, name="A_lung")
    b = synth_corpus(replace(TRACHEAL_LIKE, n_participants=4, clips_per_participant=2), seed=2, name="B_trach")
    return a, b


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    a, b = _tiny_corpora()
    result = run_experiment(a, b, TINY)
    out = tmp_path_factory.mktemp("run")
    write_reports(result, out)
    return result, out


def _read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))


def _num(text):
    return None if text == "NA" else float(text)


# ---------------------------------------------------------------- corpus summary

def _const_corpus(durations, kind="I", name="c"):
    clip = Clip(np.zeros(CLIP_SAMPLES, np.int16), "p", "lung", 0)
    labels = tuple(LabelEvent(kind, 2.0 * i, 2.0 * i + d) for i, d in enumerate(durations))
    return Corpus(((clip, labels),), name)


def test_summary_of_constant_durations():
    s = summarize_corpus(_const_corpus([1.0] * 4))
    assert s.kinds["I"].count == 4
    assert s.kinds["I"].mean_s == 1.0 and s.kinds["I"].sd_s == 0.0
    assert s.kinds["I"].total_min == pytest.approx(4 / 60)
    assert s.n_clips == 1 and s.total_min == 0.25
    assert s.kinds["C"].count == 0 and s.kinds["C"].mean_s is None


def test_summary_identical_corpora_p_one():
    a = summarize_corpus(_const_corpus([1.0, 1.5, 0.7]))
    b = summarize_corpus(_const_corpus([1.0, 1.5, 0.7], name="d"))
    p = compare_durations(a, b)
    assert p["I"] == pytest.approx(1.0)
    assert p["E"] is None
    csv_text, text = summary_tables([a, b])
    assert "1.07 ± 0.40" in text and "NA" in csv_text


# ---------------------------------------------------------------- scenario matrix

def test_matrix_layout():
    rows = scenario_matrix()
    main_rows = [r for r in rows if r.headline]
    assert len(main_rows) == 8
    assert sorted(r.control for r in main_rows).count("PC") == 2
    assert sorted(r.control for r in main_rows).count("NC") == 2
    assert sum(r.strategy.kind == "mixed" for r in main_rows) == 2
    assert sum(r.strategy.kind == "domain_adapt" for r in main_rows) == 2
    for r in main_rows:
        if r.control == "PC":
            assert r.strategy.sources == (r.test,)
        if r.strategy.kind == "domain_adapt":
            assert r.strategy.sources[-1] == r.test  # adapted toward the tested domain


def test_helpers():
    assert mean_sd([1.0, None, 3.0]) == (2.0, pytest.approx(np.sqrt(2)), 2)
    assert mean_sd([None]) == (None, None, 0)
    assert significance_marker(0.0005, False) == "†††"
    assert significance_marker(0.02, True) == "*"
    assert significance_marker(0.2, True) == ""


# ---------------------------------------------------------------- experiment

def test_experiment_row_counts(tiny_run):
    result, _ = tiny_run
    per_row = {}
    for r in result.results:
        per_row.setdefault((r.task, r.strategy, r.test), []).append(r)
    assert len(per_row) == 10
    assert all(len(v) == TINY.k * TINY.repeats for v in per_row.values())


def test_reports_recompute_from_model_rows(tiny_run):
    _, out = tiny_run
    models = _read_csv(out / "models.csv")
    events_t = _read_csv(out / "event_table.csv")
    seg_t = _read_csv(out / "segment_table.csv")
    assert len(events_t) == 8 and len(seg_t) == 10
    for row in events_t:
        group = [m for m in models if (m["task"], m["train"], m["test"]) == (row["task"], row["train"], row["test"])]
        assert len(group) == int(row["n_models"]) == 2
        for metric in ("ppv", "sen", "f1"):
            mean, sd, _ = mean_sd(_num(m[f"ev_{metric}"]) for m in group)
            assert _num(row[f"{metric}_mean"]) == mean
            assert _num(row[f"{metric}_sd"]) == sd
    for row in seg_t:
        group = [m for m in models if (m["task"], m["train"], m["test"]) == (row["task"], row["train"], row["test"])]
        for metric in ("acc", "sen", "spe", "ppv", "f1", "auc"):
            mean, sd, _ = mean_sd(_num(m[f"seg_{metric}"]) for m in group)
            assert _num(row[f"{metric}_mean"]) == mean and _num(row[f"{metric}_sd"]) == sd


def test_dual_table_consistent_with_per_test_means(tiny_run):
    result, out = tiny_run
    models = _read_csv(out / "models.csv")
    dual_t = _read_csv(out / "dual_table.csv")
    assert len(dual_t) == 5
    names = result.names
    for row in dual_t:
        n_a, n_b = int(row["n_a"]), int(row["n_b"])
        assert n_a == result.test_label_counts[("I", "A")] and n_b == result.test_label_counts[("I", "B")]
        for metric in ("ppv", "sen", "f1"):
            means = {}
            for test in ("A", "B"):
                vals = [_num(m[f"ev_{metric}"]) for m in models
                        if m["train"] == row["strategy"] and m["test"] == names[test]]
                means[test] = mean_sd(vals)[0]
            if None in means.values():
                assert row[metric] == "NA"
            else:
                assert _num(row[metric]) == weighted_dual_score(means["A"], n_a, means["B"], n_b)


def test_swapping_roles_transposes_rows(tiny_run):
    result, _ = tiny_run
    a, b = _tiny_corpora()
    swapped = run_experiment(b, a, TINY)
    role_swap = {"A": "B", "B": "A"}

    def key(res, r):
        names = res.names
        return (r.task, r.strategy.label(names), names[r.test], r.fold.name)

    original = {key(result, r): r for r in result.results}
    compared = 0
    for r in swapped.results:
        if r.strategy.kind == "mixed":
            continue  # pool order differs, so batches differ
        twin = original[key(swapped, r)]
        assert twin.test == role_swap[r.test]
        assert twin.report.events == r.report.events
        assert twin.report.segments == r.report.segments
        compared += 1
    assert compared == 8 * 2
    pc = {r.test for r in swapped.results if r.strategy.kind == "full"
          and r.strategy.sources == (r.test,)}
    assert pc == {"A", "B"}


def test_missing_task_labels_raise():
    a, b = _tiny_corpora()
    cfg = replace(TINY, tasks=("C",))
    no_cas = synth_corpus(replace(LUNG_LIKE, n_participants=4, clips_per_participant=2, cas_probability=0.0),
                          seed=3)
    with pytest.raises(ExperimentError, match="no clip with a C label"):
        run_experiment(no_cas, b, cfg)


# ---------------------------------------------------------------- plots

def _spec():
    return spectrogram(np.random.default_rng(0).standard_normal(CLIP_SAMPLES))


def _bar_extents(svg_text, gid):
    block = svg_text.split(f'<g id="{gid}">', 1)[1]
    xs = [float(v) for v in re.findall(r"[ML] ([0-9.]+) [0-9.]+", block.split("</g>", 1)[0])]
    return min(xs), max(xs)


def test_plot_bars_and_extents(tmp_path):
    labels = [LabelEvent("I", 1.0, 2.5), LabelEvent("E", 3.0, 4.2), LabelEvent("C", 6.0, 6.8)]
    dets = [DetectedEvent("I", 1.1, 2.4), DetectedEvent("C", 6.1, 7.0)]
    info = emit_plot(tmp_path / "p.svg", _spec(), labels, dets)
    assert len(info.bars) == 5
    svg = (tmp_path / "p.svg").read_text()
    px_per_s = info.axes_width / 15.0
    for bar in info.bars:
        x0, x1 = _bar_extents(svg, bar.gid)
        assert abs(x0 - (info.axes_x0 + bar.start_s * px_per_s)) < 0.5
        assert abs(x1 - (info.axes_x0 + bar.end_s * px_per_s)) < 0.5


def test_plot_without_events_and_determinism(tmp_path):
    spec = _spec()
    info = emit_plot(tmp_path / "a.svg", spec, [], [])
    emit_plot(tmp_path / "b.svg", spec, [], [])
    assert info.bars == ()
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    labels = [LabelEvent("I", 1.0, 2.0)]
    emit_plot(tmp_path / "c.png", spec, labels, [])
    emit_plot(tmp_path / "d.png", spec, labels, [])
    assert (tmp_path / "c.png").read_bytes() == (tmp_path / "d.png").read_bytes()


# ---------------------------------------------------------------- CLI

@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle") / "lung"
    save_corpus(synth_corpus(replace(LUNG_LIKE, n_participants=3, clips_per_participant=1), seed=5,
                             name="lung"), path)
    return path


def test_cli_summarize_detect_evaluate_plot(bundle, tmp_path, capsys):
    assert main(["summarize", str(bundle), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "summary.csv").exists()
    assert main(["detect", "--corpus", str(bundle), "--baseline", "--out", str(tmp_path / "d")]) == 0
    assert len(list((tmp_path / "d").glob("*.txt"))) == 3
    assert main(["evaluate", "--corpus", str(bundle), "--detections", str(tmp_path / "d"),
                 "--out", str(tmp_path / "e"), "--tasks", "I,E"]) == 0
    assert (tmp_path / "e" / "summary.csv").read_text().startswith("task,seg_acc")
    assert main(["plot", "--corpus", str(bundle), "--detections", str(tmp_path / "d"),
                 "--out", str(tmp_path / "p")]) == 0
    assert len(list((tmp_path / "p").glob("*.svg"))) == 3


def test_cli_ingest(tmp_path):
    rng = np.random.default_rng(0)
    write_wav(tmp_path / "r1.wav", rng.integers(-1000, 1000, 140000).astype(np.int16))
    (tmp_path / "r1.txt").write_text("I 1.0 2.0\nE 14.5 16.0\nC 20 21\n")
    (tmp_path / "manifest.tsv").write_text("wav\tlabels\tparticipant\tdomain\nr1.wav\tr1.txt\tP9\ttracheal\n")
    assert main(["ingest", str(tmp_path / "manifest.tsv"), "--out", str(tmp_path / "bundle")]) == 0
    index = (tmp_path / "bundle" / "index.tsv").read_text().splitlines()
    assert len(index) == 3  # header + two 15 s clips from 35 s
    second = sorted((tmp_path / "bundle" / "clips").glob("*.txt"))[1].read_text()
    assert second.startswith("E 0.0 1.0") and "C 5.0 6.0" in second


def test_cli_exit_codes(bundle, tmp_path, capsys):
    assert main(["summarize", str(tmp_path / "nope"), "--out", str(tmp_path / "x")]) == 2
    (tmp_path / "bad.cfg").write_text("learning_rat = 0.1\n")
    assert main(["train", "--corpus", str(bundle), "--config", str(tmp_path / "bad.cfg"),
                 "--out", str(tmp_path / "t")]) == 2
    assert main(["train", "--corpus", str(bundle), "--config", str(tmp_path / "missing.cfg"),
                 "--out", str(tmp_path / "t")]) == 2
    assert main(["detect", "--corpus", str(bundle), "--out", str(tmp_path / "d")]) == 2
    (tmp_path / "broken.model").write_bytes(b"RSDM\x01I")
    assert main(["detect", "--corpus", str(bundle), "--model", f"I={tmp_path / 'broken.model'}",
                 "--out", str(tmp_path / "d")]) == 3
    save_model(tmp_path / "narrow.model", init_model(0, in_dim=10, channels=2, hidden=2))
    assert main(["detect", "--corpus", str(bundle), "--model", f"I={tmp_path / 'narrow.model'}",
                 "--out", str(tmp_path / "d")]) == 3
    (tmp_path / "m.tsv").write_text("wav\tlabels\tparticipant\tdomain\nx.wav\t\tP\tlung\n")
    (tmp_path / "x.wav").write_bytes(b"garbage")
    assert main(["ingest", str(tmp_path / "m.tsv"), "--out", str(tmp_path / "i")]) == 3
    assert "error" in capsys.readouterr().err


def test_cli_train(bundle, tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("k = 2\nrepeats = 1\ntest_fraction = 0.3\nmax_epochs = 1\nbatch_size = 2\n"
                   "channels = 3\nhidden = 2\n")
    assert main(["train", "--corpus", str(bundle), "--config", str(cfg), "--tasks", "I",
                 "--out", str(tmp_path / "t")]) == 0
    assert len(list((tmp_path / "t" / "models" / "I").glob("*.model"))) == 2
