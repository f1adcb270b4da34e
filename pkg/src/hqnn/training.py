"""Training loop, Adam optimizer, evaluation, and the multi-seed harness.

Protocol: Adam (beta1 0.9, beta2 0.999, eps 1e-8), initial lr 1e-4 with
exponential per-epoch decay gamma 0.9, batch size 16, max 25 epochs, early
stopping on validation accuracy with patience 7 (strict improvement), best
weights restored at the end.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import DatasetManifest, batch_iter
from .errors import ContractError, DataError, DivergenceError
from .metrics import MetricsReport, TTestResult, compute_metrics, paired_ttest
from .model import HQNNModel
from .rng import STREAM_SHUFFLE, make_rng
from .tensor import Tensor, zero_grads


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    gamma: float = 0.9
    batch_size: int = 16
    max_epochs: int = 25
    patience: int = 7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42

    def validate(self) -> None:
        for name in ("lr0", "gamma", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.patience > self.max_epochs:
            raise ContractError("patience must not exceed max_epochs")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    wall_time: float


@dataclass
class RunHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc,lr"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch},{e.train_loss:.12g},{e.train_acc:.12g},"
                f"{e.val_loss:.12g},{e.val_acc:.12g},{e.lr:.12g}"
            )
        return "\n".join(lines) + "\n"


def lr_at(epoch: int, lr0: float = 1e-4, gamma: float = 0.9) -> float:
    """Exponential schedule lr0 * gamma^epoch, applied at epoch boundaries."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return lr0 * gamma**epoch


class Adam:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params: list[Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ContractError(f"gradient shape {g.shape} != param {p.data.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, st: dict) -> None:
        self.t = st["t"]
        self.m = [np.asarray(a, dtype=np.float64) for a in st["m"]]
        self.v = [np.asarray(a, dtype=np.float64) for a in st["v"]]


class EarlyStopper:
    """Stops after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.stale = 0

    def update(self, metric: float) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if metric > self.best:
            self.best = metric
            self.stale = 0
            return True, False
        self.stale += 1
        return False, self.stale >= self.patience


def evaluate(model: HQNNModel, manifest: DatasetManifest, split: str,
             batch_size: int = 16, cache: dict | None = None) -> MetricsReport:
    """Eval-mode metrics over a split; scores are softmax malignant probs."""
    labels_all: list[np.ndarray] = []
    preds_all: list[np.ndarray] = []
    scores_all: list[np.ndarray] = []
    losses: list[float] = []
    counts: list[int] = []
    for pixels, labels in batch_iter(manifest, split, batch_size, cache=cache):
        logits = model.forward(pixels, mode="eval")
        loss = T.cross_entropy(logits, labels)
        probs = T.softmax(logits, axis=1).data
        labels_all.append(labels)
        preds_all.append(np.argmax(logits.data, axis=1))
        scores_all.append(probs[:, 1])
        losses.append(loss.item())
        counts.append(len(labels))
    labels = np.concatenate(labels_all)
    mean_loss = float(np.average(losses, weights=counts))
    return compute_metrics(labels, np.concatenate(preds_all),
                           np.concatenate(scores_all), loss=mean_loss)


def train(model: HQNNModel, manifest: DatasetManifest, config: TrainConfig,
          cache: dict | None = None, log=None):
    """Full training run; returns (RunHistory, Adam) with best weights restored.

    Single-sample train batches are skipped (batchnorm needs batch >= 2);
    shuffling makes a different sample sit in the remainder each epoch.
    """
    config.validate()
    if not manifest.split_indices("train") or not manifest.split_indices("val"):
        raise DataError("training requires non-empty train and val splits")
    if cache is None:
        cache = {}
    optimizer = Adam(model.parameters(), config.beta1, config.beta2, config.eps)
    shuffle_rng = make_rng(config.seed, STREAM_SHUFFLE)
    stopper = EarlyStopper(config.patience)
    history = RunHistory()
    best_snapshot = model.snapshot()
    params = model.parameters()
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, config.lr0, config.gamma)
        losses: list[float] = []
        correct = 0
        seen = 0
        batches = batch_iter(manifest, "train", config.batch_size, shuffle=True,
                             rng=shuffle_rng, augment_train=True,
                             aug_seed=config.seed, epoch=epoch, cache=cache)
        for batch_idx, (pixels, labels) in enumerate(batches):
            if len(labels) < 2:
                continue
            logits = model.forward(pixels, mode="train")
            loss = T.cross_entropy(logits, labels)
            if not np.isfinite(loss.item()):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} batch {batch_idx}"
                )
            zero_grads(params)
            loss.backward()
            optimizer.step(lr)
            losses.append(loss.item() * len(labels))
            correct += int((np.argmax(logits.data, axis=1) == labels).sum())
            seen += len(labels)
        val = evaluate(model, manifest, "val", config.batch_size, cache=cache)
        improved, should_stop = stopper.update(val.accuracy)
        if improved:
            best_snapshot = model.snapshot()
            history.best_epoch = epoch
        stats = EpochStats(
            epoch=epoch,
            train_loss=float(np.sum(losses) / seen) if seen else float("nan"),
            train_acc=correct / seen if seen else float("nan"),
            val_loss=val.loss,
            val_acc=val.accuracy,
            lr=lr,
            wall_time=time.perf_counter() - t0,
        )
        history.epochs.append(stats)
        if log is not None:
            log(
                f"epoch {epoch:2d}  lr {lr:.3e}  train loss {stats.train_loss:.4f} "
                f"acc {stats.train_acc:.3f}  val loss {stats.val_loss:.4f} "
                f"acc {stats.val_acc:.3f}"
            )
        if should_stop:
            history.stop_reason = "early_stopping"
            break
    else:
        history.stop_reason = "max_epochs"
    model.restore(best_snapshot)
    return history, optimizer


def export_features(model: HQNNModel, manifest: DatasetManifest, split: str,
                    path, batch_size: int = 16, cache: dict | None = None) -> None:
    """CSV of per-sample gated features and circuit expectations, in manifest order."""
    indices = manifest.split_indices(split)
    if not indices:
        raise DataError(f"split {split!r} is empty")
    qd = model.config.quantum_input_dim
    nq = model.config.n_qubits
    header = (
        ["id", "label"]
        + [f"g{i}" for i in range(qd)]
        + [f"q{i}" for i in range(nq)]
    )
    rows = [",".join(header)]
    cursor = 0
    for pixels, labels in batch_iter(manifest, split, batch_size, cache=cache):
        capture: dict = {}
        model.forward(pixels, mode="eval", capture=capture)
        for b in range(len(labels)):
            rec = manifest.records[indices[cursor]]
            vals = [rec.path, str(rec.label)]
            vals += [f"{v:.12g}" for v in capture["gated"][b]]
            vals += [f"{v:.12g}" for v in capture["qexp"][b]]
            rows.append(",".join(vals))
            cursor += 1
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


@dataclass
class ExperimentReport:
    seeds: list[int]
    acc_a: list[float]
    acc_b: list[float]
    label_a: str
    label_b: str
    ttest: TTestResult

    def to_text(self) -> str:
        lines = [f"seed,config,val_accuracy"]
        for s, acc in zip(self.seeds, self.acc_a):
            lines.append(f"{s},{self.label_a},{acc:.12g}")
        for s, acc in zip(self.seeds, self.acc_b):
            lines.append(f"{s},{self.label_b},{acc:.12g}")
        lines.append(f"mean.{self.label_a} = {np.mean(self.acc_a):.12g}")
        lines.append(f"mean.{self.label_b} = {np.mean(self.acc_b):.12g}")
        lines.append(f"t = {self.ttest.t:.12g}")
        lines.append(f"p = {self.ttest.p:.12g}")
        lines.append(f"df = {self.ttest.df}")
        lines.append(f"degenerate = {self.ttest.degenerate}")
        return "\n".join(lines) + "\n"


def multi_seed_experiment(manifest: DatasetManifest, config_a, config_b,
                          train_config: TrainConfig, seeds,
                          label_a: str = "a", label_b: str = "b",
                          log=None) -> ExperimentReport:
    """Train both model configs under each seed and compare val accuracy."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ContractError(f"need >= 2 seeds, got {len(seeds)}")
    cache: dict = {}
    accs: dict[str, list[float]] = {label_a: [], label_b: []}
    for seed in seeds:
        for label, mcfg in ((label_a, config_a), (label_b, config_b)):
            tcfg = TrainConfig(**{**train_config.__dict__, "seed": seed})
            model = HQNNModel(mcfg, seed=seed)
            history, _ = train(model, manifest, tcfg, cache=cache)
            best = max(e.val_acc for e in history.epochs)
            accs[label].append(best)
            if log is not None:
                log(f"seed {seed} {label}: best val acc {best:.4f} "
                    f"({len(history.epochs)} epochs, {history.stop_reason})")
    result = paired_ttest(accs[label_a], accs[label_b])
    return ExperimentReport(seeds, accs[label_a], accs[label_b],
                            label_a, label_b, result)
