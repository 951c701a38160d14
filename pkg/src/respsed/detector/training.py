"""Mini-batch Adam training with early stopping, scenario dispatch and fine-tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..config import ConfigError
from .model import ModelParams, ShapeError, bce_from_logits, init_model, loss_and_grad, predict_logits

log = logging.getLogger(__name__)

SCENARIO_KINDS = ("full", "mixed", "domain_adapt")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 5000
    patience: int = 50
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    fine_tune_epochs: int = 50
    seed: int = 0
    channels: int = 64
    hidden: int = 32

    def __post_init__(self):
        for name in ("batch_size", "max_epochs", "patience", "channels", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.fine_tune_epochs < 0:
            raise ConfigError("fine_tune_epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class Example:
    """One clip prepared for a task: features, segment targets, label count."""

    clip_id: str
    x: np.ndarray
    target: np.ndarray
    n_labels: int


@dataclass(frozen=True)
class FoldData:
    train: Sequence[Example]
    validation: Sequence[Example]


@dataclass(frozen=True)
class TrainScenario:
    kind: str
    sources: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "full" and len(self.sources) != 1:
            raise ConfigError("full training takes exactly one source dataset")
        if self.kind == "mixed" and len(self.sources) < 2:
            raise ConfigError("mixed training needs at least 2 source datasets")
        if self.kind == "domain_adapt" and len(self.sources) != 2:
            raise ConfigError("domain adaptation takes (pretrain dataset, fine-tune dataset)")


@dataclass
class TrainResult:
    params: ModelParams
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    epochs_run: int = 0


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            out[name] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


class EarlyStopping:
    """Stops after ``patience`` epochs without a strict improvement (min delta 0)."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch's loss; return True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def _stack(examples: Sequence[Example]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([e.x for e in examples]), np.stack([e.target for e in examples])


def dataset_loss(params: ModelParams, examples: Sequence[Example], chunk: int = 64) -> float:
    total, count = 0.0, 0
    for i in range(0, len(examples), chunk):
        x, y = _stack(examples[i:i + chunk])
        logits = predict_logits(params, x)
        total += bce_from_logits(logits, y) * y.size
        count += y.size
    return total / count


def eligible(examples: Sequence[Example]) -> list[Example]:
    """Clips carrying at least one label of the task."""
    return [e for e in examples if e.n_labels > 0]


def train_model(train_set: Sequence[Example], val_set: Sequence[Example], cfg: TrainConfig,
                init: ModelParams | None = None, max_epochs: int | None = None,
                seed=None, task: str = "I") -> TrainResult:
    """Adam on shuffled mini-batches; returns the best-validation parameters."""
    train_set, val_set = eligible(train_set), eligible(val_set)
    if not train_set:
        raise ValueError(f"empty training pool after the >=1-label filter (task {task})")
    if not val_set:
        raise ValueError(f"empty validation pool after the >=1-label filter (task {task})")
    seed = cfg.seed if seed is None else seed
    in_dim = train_set[0].x.shape[1]
    if init is None:
        params = init_model(seed, in_dim, cfg.channels, cfg.hidden, task)
    else:
        if init.in_dim != in_dim:
            raise ShapeError(f"model expects width {init.in_dim}, data has {in_dim}")
        params = init
    epochs = cfg.max_epochs if max_epochs is None else max_epochs
    result = TrainResult(params)
    if epochs == 0:
        return result
    rng = np.random.default_rng(seed)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    stopper = EarlyStopping(cfg.patience)
    result.initial_train_loss = dataset_loss(params, train_set)
    result.initial_val_loss = dataset_loss(params, val_set)
    best = params
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_set))
        batch_losses = []
        for i in range(0, len(order), cfg.batch_size):
            x, y = _stack([train_set[j] for j in order[i:i + cfg.batch_size]])
            loss, grads = loss_and_grad(params, x, y)
            params = params.replace(opt.step(params.tensors, grads))
            batch_losses.append(loss * y.size)
        result.train_loss.append(sum(batch_losses) / (len(train_set) * train_set[0].target.size))
        val = dataset_loss(params, val_set)
        result.val_loss.append(val)
        stop = stopper.update(epoch, val)
        if stopper.best_epoch == epoch:
            best = params
        result.epochs_run = epoch
        log.debug("epoch %d train %.5f val %.5f", epoch, result.train_loss[-1], val)
        if stop:
            break
    result.params = best
    result.best_epoch = stopper.best_epoch
    return result


def fine_tune(pretrained: ModelParams, train_set: Sequence[Example], val_set: Sequence[Example],
              cfg: TrainConfig, seed=None) -> TrainResult:
    """Continue training every weight for ``cfg.fine_tune_epochs`` epochs."""
    return train_model(train_set, val_set, cfg, init=pretrained, max_epochs=cfg.fine_tune_epochs,
                       seed=seed, task=pretrained.task)


def train(scenario: TrainScenario, folds: Sequence[Mapping[str, FoldData]], cfg: TrainConfig,
          task: str = "I", pretrained: Sequence[ModelParams] | None = None) -> list[TrainResult]:
    """One trained model per fold pair.

    ``folds[i]`` maps dataset name -> FoldData for fold pair ``i``. Mixed
    training concatenates the sources' pools fold by fold; domain adaptation
    fine-tunes ``pretrained[i]`` on the second source's fold ``i``.
    """
    results = []
    for i, fold in enumerate(folds):
        seed = [cfg.seed, i]
        if scenario.kind == "domain_adapt":
            if pretrained is None or len(pretrained) != len(folds):
                raise ValueError("domain adaptation needs one pretrained model per fold")
            data = fold[scenario.sources[1]]
            results.append(fine_tune(pretrained[i], data.train, data.validation, cfg, seed=seed))
            continue
        train_set = [e for s in scenario.sources for e in fold[s].train]
        val_set = [e for s in scenario.sources for e in fold[s].validation]
        results.append(train_model(train_set, val_set, cfg, seed=seed, task=task))
    return results
