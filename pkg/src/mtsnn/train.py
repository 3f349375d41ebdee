"""Training loop: SGD with momentum, step learning-rate decay, losses on
the mean output across time steps, metric logging and checkpointing.

The loop is deterministic given (config, seed): one numpy generator
drives shuffling and augmentation, and its state travels inside the
checkpoint so a resumed run continues bit-exactly.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import LabeledImages, augment_batch
from .model import Model, StepOutputs
from .tensor import Tensor

METRIC_FIELDS = ("epoch", "split", "loss", "accuracy", "lr", "seconds")


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries epoch/batch/lr."""


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    # (epoch, multiplier) pairs; the multiplier applies from that epoch on
    schedule: tuple[tuple[int, float], ...] = ((100, 0.1),)
    loss: str = "softmax_ce"
    augment: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"TrainConfig: lr must be positive, got {self.lr}")
        if self.loss not in ("softmax_ce", "mse"):
            raise ValueError(f"TrainConfig: unknown loss {self.loss!r}")
        self.schedule = tuple((int(e), float(m)) for e, m in self.schedule)


@dataclass
class RunMetrics:
    run_id: str
    seed: int
    rows: list = field(default_factory=list)  # dicts with METRIC_FIELDS
    peak_test_accuracy: float = 0.0

    def append(self, epoch, split, loss, accuracy, lr, seconds):
        self.rows.append({"epoch": epoch, "split": split, "loss": loss,
                          "accuracy": accuracy, "lr": lr, "seconds": seconds})
        if split == "test":
            self.peak_test_accuracy = max(self.peak_test_accuracy, accuracy)

    def final_test_accuracy(self) -> float:
        accs = [r["accuracy"] for r in self.rows if r["split"] == "test"]
        return accs[-1] if accs else 0.0


def write_metrics_csv(path: str, metrics: RunMetrics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in metrics.rows:
            writer.writerow({**row,
                             "loss": f"{row['loss']:.8f}",
                             "accuracy": f"{row['accuracy']:.6f}",
                             "lr": f"{row['lr']:.6g}",
                             "seconds": f"{row['seconds']:.3f}"})


def read_metrics_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class SGD:
    """Classical momentum: v <- momentum * v + g; p <- p - lr * v."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p.data) for name, p in params}

    def step(self, grads: dict[Tensor, Tensor]) -> None:
        missing = [name for name, p in self.params if p not in grads]
        if missing:
            raise KeyError(f"sgd_step: no gradient for parameters {missing}")
        for name, p in self.params:
            v = self.momentum * self.velocity[name] + grads[p].data
            self.velocity[name] = v
            p.data = p.data - self.lr * v


def sgd_step(params: list[tuple[str, Tensor]], grads: dict[Tensor, Tensor],
             opt: SGD) -> None:
    opt.step(grads)


def lr_at(base_lr: float, schedule, epoch: int) -> float:
    """Piecewise-constant learning rate: each (boundary, multiplier) pair
    applies from its boundary epoch onward."""
    lr = base_lr
    for boundary, mult in schedule:
        if epoch >= boundary:
            lr *= mult
    return lr


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_fn(outputs: StepOutputs, labels: np.ndarray, kind: str) -> Tensor:
    """Classification loss on the mean output across time steps."""
    labels = np.asarray(labels, dtype=np.int64)
    mean_out = outputs.mean
    if labels.ndim != 1 or labels.shape[0] != mean_out.shape[0]:
        raise T.ShapeError(f"loss: labels shape {labels.shape} does not match "
                           f"outputs {mean_out.shape}")
    if kind == "softmax_ce":
        picked = T.pick(T.log_softmax(mean_out), labels)
        return T.neg(T.tmean(picked))
    if kind == "mse":
        onehot = np.zeros(mean_out.shape, dtype=mean_out.dtype)
        onehot[np.arange(len(labels)), labels] = 1.0
        diff = mean_out - Tensor(onehot)
        return T.tmean(T.mul(diff, diff))
    raise ValueError(f"loss: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# evaluation and fitting
# ---------------------------------------------------------------------------


def evaluate(model: Model, data: LabeledImages, batch_size: int = 256,
             loss_kind: str = "softmax_ce") -> tuple[float, float]:
    """Mean loss and accuracy over a split, eval-mode batch norm."""
    total_loss = 0.0
    correct = 0
    n = len(data)
    for start in range(0, n, batch_size):
        images = data.images[start:start + batch_size]
        labels = data.labels[start:start + batch_size]
        out = model.forward(images, training=False)
        loss = loss_fn(out, labels, loss_kind)
        total_loss += loss.item() * len(labels)
        correct += int((out.mean.data.argmax(axis=1) == labels).sum())
    return total_loss / max(n, 1), correct / max(n, 1)


def _gather_state(model: Model, opt: SGD) -> dict[str, np.ndarray]:
    arrays = {f"param/{name}": p.data for name, p in model.parameters()}
    arrays.update({f"buffer/{name}": buf for name, buf in model.buffers()})
    arrays.update({f"velocity/{name}": v for name, v in opt.velocity.items()})
    return arrays


def _restore_state(model: Model, opt: SGD, arrays: dict[str, np.ndarray]) -> None:
    for name, p in model.parameters():
        p.data = arrays[f"param/{name}"].astype(p.data.dtype)
    buffers = {name: arrays[f"buffer/{name}"] for name, _ in model.buffers()}
    model.load_buffers(buffers)
    for name in opt.velocity:
        opt.velocity[name] = arrays[f"velocity/{name}"].copy()


def fit(model: Model, train_data: LabeledImages, test_data: LabeledImages,
        cfg: TrainConfig, seed: int, run_dir: str | None = None,
        resume_from: str | None = None, run_id: str = "run",
        log=None) -> RunMetrics:
    """Full training loop; returns metrics and writes per-epoch artifacts.

    When `run_dir` is given, metrics.csv and checkpoint.ckpt are kept up
    to date after every epoch.  `resume_from` restores parameters,
    optimizer velocity, batch-norm buffers, rng state and metric history,
    then continues where the checkpoint stopped.
    """
    opt = SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    rng = np.random.default_rng(seed)
    metrics = RunMetrics(run_id=run_id, seed=seed)
    start_epoch = 0

    if resume_from:
        arrays, meta, rng_state = load_checkpoint(resume_from)
        _restore_state(model, opt, arrays)
        rng.bit_generator.state = rng_state
        start_epoch = int(meta["epoch"]) + 1
        metrics.rows = list(meta.get("metric_rows", []))
        metrics.peak_test_accuracy = float(meta.get("peak_test_accuracy", 0.0))

    n = len(train_data)
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(cfg.lr, cfg.schedule, epoch)
        opt.lr = lr
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for bstart in range(0, n, cfg.batch_size):
            idx = order[bstart:bstart + cfg.batch_size]
            images = train_data.images[idx]
            labels = train_data.labels[idx]
            if cfg.augment:
                images = augment_batch(images, rng)
            out = model.forward(images, training=True)
            loss = loss_fn(out, labels, cfg.loss)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bstart // cfg.batch_size}, "
                    f"lr {lr:g}")
            grads = T.backward(loss)
            opt.step(grads)
            epoch_loss += loss_val * len(labels)
            correct += int((out.mean.data.argmax(axis=1) == labels).sum())
        train_secs = time.perf_counter() - t0
        metrics.append(epoch, "train", epoch_loss / n, correct / n, lr, train_secs)

        t1 = time.perf_counter()
        test_loss, test_acc = evaluate(model, test_data, cfg.batch_size, cfg.loss)
        metrics.append(epoch, "test", test_loss, test_acc, lr, time.perf_counter() - t1)
        if log:
            log(f"epoch {epoch:3d}  lr {lr:g}  train acc {correct / n:.4f}  "
                f"test acc {test_acc:.4f}  ({train_secs:.1f}s)")

        if run_dir:
            os.makedirs(run_dir, exist_ok=True)
            write_metrics_csv(os.path.join(run_dir, "metrics.csv"), metrics)
            save_checkpoint(
                os.path.join(run_dir, "checkpoint.ckpt"),
                _gather_state(model, opt),
                meta={"epoch": epoch, "seed": seed, "run_id": run_id,
                      "metric_rows": metrics.rows,
                      "peak_test_accuracy": metrics.peak_test_accuracy},
                rng_state=rng.bit_generator.state)
    return metrics
