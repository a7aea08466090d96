"""Training protocol: class-weighted label-smoothed cross-entropy, decoupled
weight decay (AdamW), plateau LR halving, early stopping, and the
cross-validation loop. Everything is deterministic given (data order, seed).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import DataError, FoldAssignment
from .fusion import (
    FusionOutput,
    HybridHeadConfig,
    Model,
    ModelConfigId,
    build_model,
)


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    weight_decay: float = 1e-2
    dropout_rate: float = 0.5
    label_smoothing: float = 0.1
    suppression_exponent: float = 0.3
    lr_factor: float = 0.5
    lr_patience: int = 5
    stop_patience: int = 10
    min_delta: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    seed: int = 42

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be positive, weight_decay and batch_size non-negative")
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.suppression_exponent < 0:
            raise ValueError("suppression_exponent must be >= 0")
        if self.lr_patience < 1 or self.stop_patience < 1:
            raise ValueError("patience values must be >= 1")


def load_train_config(path: str | Path) -> TrainConfig:
    """Read a JSON or YAML key-value document mirroring TrainConfig fields."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return TrainConfig(**data)


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray  # (K,) positive reals, min exactly 1.0


def compute_class_weights(counts, beta: float) -> ClassWeights:
    """W_c = (N_max / N_c) ** beta; the most frequent class gets exactly 1.0."""
    if isinstance(counts, dict):
        counts = [counts[c] for c in sorted(counts)]
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise DataError(f"class counts must all be positive, got {counts.tolist()}")
    weights = (counts.max() / counts) ** beta
    return ClassWeights(weights=weights)


def smoothed_weighted_ce(
    logits: Tensor | np.ndarray,
    target_class,
    weights: ClassWeights,
    epsilon: float,
) -> Tensor:
    """Class-weighted cross-entropy against the smoothed target distribution
    q[target] = 1 - eps + eps/K, q[other] = eps/K; mean-reduced over the batch."""
    t = logits if isinstance(logits, Tensor) else Tensor(logits)
    if t.ndim == 1:
        t = t.reshape(1, -1)
    if not np.all(np.isfinite(t.data)):
        raise ValueError("non-finite logits")
    targets = np.atleast_1d(np.asarray(target_class, dtype=np.int64))
    n, k = t.shape
    q = np.full((n, k), epsilon / k)
    q[np.arange(n), targets] = 1.0 - epsilon + epsilon / k
    w = weights.weights[targets]  # (n,)
    logp = ad.log_softmax(t, axis=-1)
    per_sample = (Tensor(q) * logp).sum(axis=-1) * Tensor(-w)
    return per_sample.mean()


# ---- scheduler and early stopping -------------------------------------------


@dataclass
class SchedulerState:
    current_lr: float
    best_metric: float = -np.inf
    epochs_since_improvement: int = 0


@dataclass
class StopState:
    best_metric: float = -np.inf
    epochs_since_improvement: int = 0
    stop_flag: bool = False
    best_epoch: int = 0
    epoch: int = 0


def scheduler_step(state: SchedulerState, val_metric: float, cfg: TrainConfig) -> SchedulerState:
    """Halve the LR after lr_patience+1 consecutive non-improving epochs."""
    if val_metric > state.best_metric + cfg.min_delta:
        return SchedulerState(current_lr=state.current_lr, best_metric=val_metric, epochs_since_improvement=0)
    stale = state.epochs_since_improvement + 1
    if stale > cfg.lr_patience:
        return SchedulerState(
            current_lr=state.current_lr * cfg.lr_factor,
            best_metric=state.best_metric,
            epochs_since_improvement=0,
        )
    return SchedulerState(current_lr=state.current_lr, best_metric=state.best_metric, epochs_since_improvement=stale)


def early_stop_step(state: StopState, val_metric: float, cfg: TrainConfig) -> StopState:
    """Set stop_flag after stop_patience+1 consecutive non-improving epochs."""
    epoch = state.epoch + 1
    if val_metric > state.best_metric + cfg.min_delta:
        return StopState(best_metric=val_metric, epochs_since_improvement=0, stop_flag=False, best_epoch=epoch, epoch=epoch)
    stale = state.epochs_since_improvement + 1
    return StopState(
        best_metric=state.best_metric,
        epochs_since_improvement=stale,
        stop_flag=stale > cfg.stop_patience,
        best_epoch=state.best_epoch,
        epoch=epoch,
    )


# ---- optimizer -----------------------------------------------------------------


class AdamW:
    """Adaptive moments with decoupled weight decay. Decay applies only to
    weight matrices, never to biases, norm scales, or type embeddings."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    @staticmethod
    def _decays(name: str) -> bool:
        return name.split(".")[-1].startswith("w")

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            if self.weight_decay > 0 and self._decays(name):
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


# ---- data container ----------------------------------------------------------


@dataclass
class EmbeddedDataset:
    """Pre-encoded modality matrices for a set of samples."""

    ids: list[str]
    labels: np.ndarray  # (N,) int
    img: np.ndarray | None = None  # (N, 512)
    txt: np.ndarray | None = None  # (N, 1024)

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices) -> "EmbeddedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddedDataset(
            ids=[self.ids[i] for i in idx],
            labels=self.labels[idx],
            img=None if self.img is None else self.img[idx],
            txt=None if self.txt is None else self.txt[idx],
        )

    def split_by_fold(self, folds: FoldAssignment, val_fold: int) -> tuple["EmbeddedDataset", "EmbeddedDataset"]:
        val_idx = [i for i, sid in enumerate(self.ids) if folds.assignment[sid] == val_fold]
        train_idx = [i for i, sid in enumerate(self.ids) if folds.assignment[sid] != val_fold]
        return self.subset(train_idx), self.subset(val_idx)


# ---- training loop --------------------------------------------------------------


@dataclass
class TrainRecord:
    losses: list[float] = field(default_factory=list)
    val_macro_f1: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "val_macro_f1", "lr"])
            for i, (loss, f1, lr) in enumerate(zip(self.losses, self.val_macro_f1, self.lrs), start=1):
                writer.writerow([i, repr(loss), repr(f1), repr(lr)])


class HeadPredictor:
    """Eval-mode probability predictor around one trained head model."""

    def __init__(self, model: Model):
        self.model = model

    def predict_proba(self, data: EmbeddedDataset) -> np.ndarray:
        out = self.model.forward(data.img, data.txt, training=False)
        return ad.softmax(out.logits, axis=-1).data

    def forward(self, data: EmbeddedDataset) -> FusionOutput:
        return self.model.forward(data.img, data.txt, training=False)


def _macro_f1(preds: np.ndarray, labels: np.ndarray, k: int) -> float:
    from .evalreport import confusion, metrics_from_confusion

    return metrics_from_confusion(confusion(preds, labels, k)).f1_macro


def train_fold(
    model_cfg: ModelConfigId,
    train: EmbeddedDataset,
    val: EmbeddedDataset,
    cfg: TrainConfig,
    head_cfg: HybridHeadConfig | None = None,
) -> tuple[TrainRecord, Model]:
    """Train one head configuration on one fold and return the best-epoch model."""
    if len(train) == 0 or len(val) == 0:
        raise DataError("train and validation sets must be non-empty")
    num_classes = int(max(train.labels.max(), val.labels.max())) + 1
    if head_cfg is None:
        head_cfg = HybridHeadConfig(num_classes=num_classes, dropout_rate=cfg.dropout_rate)
    model = build_model(model_cfg, head_cfg, seed=cfg.seed)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    counts = np.bincount(train.labels, minlength=head_cfg.num_classes)
    class_weights = compute_class_weights(counts, cfg.suppression_exponent)

    rng = np.random.default_rng(cfg.seed)
    sched = SchedulerState(current_lr=cfg.learning_rate)
    stop = StopState()
    record = TrainRecord()
    best_params: dict[str, np.ndarray] = {n: p.data.copy() for n, p in params.items()}

    n = len(train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = train.subset(idx)
            out = model.forward(batch.img, batch.txt, training=True, rng=rng)
            if not np.all(np.isfinite(out.logits.data)):
                raise TrainingDivergence(epoch)
            loss = smoothed_weighted_ce(out.logits, batch.labels, class_weights, cfg.label_smoothing)
            if not np.isfinite(loss.data):
                raise TrainingDivergence(epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.data))

        probs = HeadPredictor(model).predict_proba(val)
        val_f1 = _macro_f1(probs.argmax(axis=-1), val.labels, head_cfg.num_classes)

        record.losses.append(float(np.mean(epoch_losses)))
        record.val_macro_f1.append(val_f1)
        record.lrs.append(sched.current_lr)

        prev_best = stop.best_metric
        stop = early_stop_step(stop, val_f1, cfg)
        if stop.best_metric > prev_best:
            best_params = {n_: p.data.copy() for n_, p in params.items()}
        sched = scheduler_step(sched, val_f1, cfg)
        opt.lr = sched.current_lr
        if stop.stop_flag:
            break

    record.stopped_epoch = stop.epoch
    record.best_epoch = stop.best_epoch
    for name, p in params.items():
        p.data = best_params[name]
    return record, model


def run_cv(
    model_cfg: ModelConfigId,
    data: EmbeddedDataset,
    folds: FoldAssignment,
    cfg: TrainConfig,
    head_cfg: HybridHeadConfig | None = None,
    train_fn=None,
):
    """Train/evaluate across all folds: fold i validates on fold i, trains on
    the rest. Returns per-fold (TrainRecord, MetricsReport, predictor, val set)."""
    from .evalreport import confusion, metrics_from_confusion

    results = []
    for fold in range(folds.k):
        train, val = data.split_by_fold(folds, fold)
        if train_fn is not None:
            record, predictor = train_fn(train, val, cfg)
        else:
            record, model = train_fold(model_cfg, train, val, cfg, head_cfg)
            predictor = HeadPredictor(model)
        probs = predictor.predict_proba(val)
        k = probs.shape[-1]
        report = metrics_from_confusion(confusion(probs.argmax(axis=-1), val.labels, k))
        results.append((record, report, predictor, val))
    return results
