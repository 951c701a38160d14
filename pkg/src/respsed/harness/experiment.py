"""Scenario matrix runner: full, mixed-set and domain-adaptation training
evaluated on both test sets, with cross-validated model families."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .. import config as kv
from ..corpus import KINDS, Corpus, FoldPair, SplitSpec, make_folds, split_by_participant
from ..detector import Example, FoldData, ModelParams, TrainConfig, TrainScenario, train
from ..detector.model import forward_batch
from ..evaluation import (
    ClipEval,
    EvalReport,
    match_events,
    rasterize_truth,
    roc_auc,
    segment_confusion,
)
from ..features import ClipFeatures, extract
from ..postprocess import binarize, postprocess, select_threshold

log = logging.getLogger(__name__)


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    tasks: tuple[str, ...] = KINDS
    k: int = 5
    repeats: int = 3
    test_fraction: float = 0.2
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        bad = [t for t in self.tasks if t not in KINDS]
        if bad or not self.tasks:
            raise kv.ConfigError(f"tasks must be a non-empty subset of {KINDS}, got {self.tasks}")
        if self.k < 2 or self.repeats < 1:
            raise kv.ConfigError("need k >= 2 and repeats >= 1")
        if not 0 < self.test_fraction < 1:
            raise kv.ConfigError("test_fraction must lie in (0, 1)")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> ExperimentConfig:
        own = {f.name for f in fields(cls)} - {"train"}
        train_keys = {f.name for f in fields(TrainConfig)}
        unknown = set(values) - own - train_keys
        if unknown:
            raise kv.ConfigError(f"unknown config keys: {sorted(unknown)}")
        tcfg = kv.from_mapping(TrainConfig, {k: v for k, v in values.items() if k in train_keys})
        return kv.from_mapping(cls, {k: v for k, v in values.items() if k in own} | {"train": tcfg})

    def to_lines(self) -> list[str]:
        lines = [f"tasks = {','.join(self.tasks)}", f"k = {self.k}", f"repeats = {self.repeats}",
                 f"test_fraction = {self.test_fraction!r}", f"seed = {self.seed}"]
        return lines + kv.to_lines(self.train)


# --------------------------------------------------------------------------
# Scenario matrix


@dataclass(frozen=True)
class Strategy:
    """A trained model family: full on one set, mixed, or adapted src -> dst."""

    kind: str
    sources: tuple[str, ...]

    def label(self, names: Mapping[str, str]) -> str:
        if self.kind == "full":
            return names[self.sources[0]]
        if self.kind == "mixed":
            return "+".join(names[s] for s in self.sources)
        return f"{names[self.sources[0]]}->{names[self.sources[1]]}"

    def slug(self) -> str:
        return {"full": "full", "mixed": "mixed", "domain_adapt": "adapt"}[self.kind] + "_" + "_".join(self.sources)


STRATEGIES = (
    Strategy("full", ("A",)),
    Strategy("full", ("B",)),
    Strategy("mixed", ("A", "B")),
    Strategy("domain_adapt", ("B", "A")),
    Strategy("domain_adapt", ("A", "B")),
)


@dataclass(frozen=True)
class MatrixRow:
    control: str  # "PC", "NC" or ""
    strategy: Strategy
    test: str  # "A" or "B"
    headline: bool = True


def scenario_matrix() -> list[MatrixRow]:
    """Eight headline rows (per task) followed by the two off-target adaptation rows."""
    full_a, full_b, mixed, b_to_a, a_to_b = STRATEGIES
    return [
        MatrixRow("PC", full_a, "A"), MatrixRow("NC", full_b, "A"),
        MatrixRow("", mixed, "A"), MatrixRow("", b_to_a, "A"),
        MatrixRow("NC", full_a, "B"), MatrixRow("PC", full_b, "B"),
        MatrixRow("", mixed, "B"), MatrixRow("", a_to_b, "B"),
        MatrixRow("", b_to_a, "B", headline=False), MatrixRow("", a_to_b, "A", headline=False),
    ]


# --------------------------------------------------------------------------
# Data preparation


@dataclass
class PreparedCorpus:
    role: str
    corpus: Corpus
    split: SplitSpec
    folds: list[FoldPair]
    features: dict[str, ClipFeatures]
    labels: dict[str, tuple]

    def examples(self, task: str, ids) -> list[Example]:
        out = []
        for cid in ids:
            labels = self.labels[cid]
            out.append(Example(cid, self.features[cid].features.x,
                               rasterize_truth(labels, task).astype(np.float64),
                               sum(1 for ev in labels if ev.kind == task)))
        return out

    def eligible_ids(self, task: str, ids) -> list[str]:
        return [cid for cid in ids if any(ev.kind == task for ev in self.labels[cid])]


def prepare(role: str, corpus: Corpus, cfg: ExperimentConfig) -> PreparedCorpus:
    split = split_by_participant(corpus, cfg.test_fraction, cfg.seed)
    folds = make_folds(split, cfg.k, cfg.repeats, cfg.seed)
    feats = {clip.clip_id: extract(clip) for clip, _ in corpus.clips}
    labels = {clip.clip_id: labels for clip, labels in corpus.clips}
    return PreparedCorpus(role, corpus, split, folds, feats, labels)


# --------------------------------------------------------------------------
# Evaluation of one model


@dataclass
class ModelResult:
    task: str
    strategy: Strategy
    test: str
    fold: FoldPair
    report: EvalReport
    threshold: float

    def event_values(self) -> dict[str, float | None]:
        em = self.report.event_metrics()
        return {"ppv": em.ppv, "sen": em.sensitivity, "f1": em.f1}

    def segment_values(self) -> dict[str, float | None]:
        sm = self.report.segment_metrics()
        return {"acc": sm.accuracy, "sen": sm.sensitivity, "spe": sm.specificity,
                "ppv": sm.ppv, "f1": sm.f1, "auc": sm.auc}


def _probabilities(params: ModelParams, examples: list[Example], chunk: int = 64) -> np.ndarray:
    return np.concatenate([forward_batch(params, np.stack([e.x for e in examples[i:i + chunk]]))
                           for i in range(0, len(examples), chunk)])


def evaluate_model(params: ModelParams, threshold: float, data: PreparedCorpus, task: str,
                   ids: list[str]) -> EvalReport:
    examples = data.examples(task, ids)
    probs = _probabilities(params, examples)
    report = EvalReport(task=task, threshold=threshold)
    for ex, p in zip(examples, probs):
        pred = binarize(p, threshold)
        events = postprocess(p, threshold, data.features[ex.clip_id].spec, task)
        truth_events = [ev for ev in data.labels[ex.clip_id] if ev.kind == task]
        report.clips.append(ClipEval(ex.clip_id, segment_confusion(pred, ex.target),
                                     match_events(truth_events, events)))
    report.auc = roc_auc(probs.ravel(), np.concatenate([e.target for e in examples]))
    return report


# --------------------------------------------------------------------------
# Run


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    names: dict[str, str]
    data: dict[str, PreparedCorpus]
    results: list[ModelResult]
    models: dict[tuple[str, str, str], ModelParams]  # (task, strategy slug, fold name)
    test_label_counts: dict[tuple[str, str], int]  # (task, role)
    timings: dict[str, float] = field(default_factory=dict)


def run_experiment(corpus_a: Corpus, corpus_b: Corpus, cfg: ExperimentConfig,
                   tasks: tuple[str, ...] | None = None) -> ExperimentResult:
    """Train every strategy on every fold pair and evaluate on both test sets."""
    tasks = tasks or cfg.tasks
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    data = {"A": prepare("A", corpus_a, cfg), "B": prepare("B", corpus_b, cfg)}
    timings["features"] = time.perf_counter() - t0
    names = {"A": corpus_a.name, "B": corpus_b.name}
    if names["A"] == names["B"]:
        names = {"A": f"{corpus_a.name}_A", "B": f"{corpus_b.name}_B"}

    results: list[ModelResult] = []
    models: dict[tuple[str, str, str], ModelParams] = {}
    label_counts: dict[tuple[str, str], int] = {}
    n_folds = cfg.k * cfg.repeats
    for task in tasks:
        t_task = time.perf_counter()
        for role, d in data.items():
            if not d.eligible_ids(task, d.corpus.ids):
                raise ExperimentError(f"corpus {names[role]} has no clip with a {task} label")
            if not d.eligible_ids(task, d.split.test):
                raise ExperimentError(f"test set of {names[role]} has no clip with a {task} label")
            label_counts[(task, role)] = sum(
                1 for cid in d.split.test for ev in d.labels[cid] if ev.kind == task)

        fold_data = [
            {role: FoldData(d.examples(task, d.folds[i].train),
                            d.examples(task, d.folds[i].validation))
             for role, d in data.items()}
            for i in range(n_folds)
        ]
        trained: dict[Strategy, list[ModelParams]] = {}
        for strategy in STRATEGIES:
            scenario = TrainScenario(strategy.kind, strategy.sources)
            pre = trained[Strategy("full", (strategy.sources[0],))] if strategy.kind == "domain_adapt" else None
            log.info("task %s: training %s", task, strategy.label(names))
            runs = train(scenario, fold_data, cfg.train, task=task, pretrained=pre)
            trained[strategy] = [r.params for r in runs]
            for i, params in enumerate(trained[strategy]):
                models[(task, strategy.slug(), data["A"].folds[i].name)] = params

        thresholds = {}
        for strategy, params_list in trained.items():
            val_roles = strategy.sources if strategy.kind == "mixed" else strategy.sources[-1:]
            for i, params in enumerate(params_list):
                pairs = []
                for role in val_roles:
                    val = [e for e in fold_data[i][role].validation if e.n_labels > 0]
                    probs = _probabilities(params, val)
                    pairs += [(p, e.target) for p, e in zip(probs, val)]
                thresholds[(strategy, i)] = select_threshold(pairs)

        for row in scenario_matrix():
            d = data[row.test]
            test_ids = d.eligible_ids(task, d.split.test)
            for i, params in enumerate(trained[row.strategy]):
                thr = thresholds[(row.strategy, i)]
                report = evaluate_model(params, thr, d, task, test_ids)
                report.scenario = row.strategy.label(names)
                report.fold = data["A"].folds[i].name
                results.append(ModelResult(task, row.strategy, row.test, data["A"].folds[i], report, thr))
        timings[f"task_{task}"] = time.perf_counter() - t_task
    return ExperimentResult(cfg, names, data, results, models, label_counts, timings)


def model_path(root: Path, task: str, slug: str, fold: str) -> Path:
    return root / "models" / task / slug / f"{fold}.model"
