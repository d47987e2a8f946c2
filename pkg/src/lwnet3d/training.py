"""Negative log-likelihood loss, SGD with momentum, and the epoch loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .models import ModelGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    """Momentum SGD hyperparameters with L2 weight decay.

    ``lr_drop_epoch`` may exceed ``epochs``, in which case the rate is never
    reduced during the run.
    """

    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 20
    epochs: int = 60
    lr_drop_epoch: int = 50
    lr_drop_factor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_drop_epoch < 1:
            raise ValueError("batch_size and lr_drop_epoch must be >= 1, epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(epoch: int, cfg: OptimizerConfig) -> float:
    """Learning rate used during 1-based ``epoch``."""
    if not 1 <= epoch <= max(cfg.epochs, 1):
        raise ValueError(f"epoch {epoch} outside [1, {cfg.epochs}]")
    if epoch < cfg.lr_drop_epoch:
        return cfg.learning_rate
    return cfg.learning_rate * cfg.lr_drop_factor


def l2_penalty(params: Iterable[np.ndarray]) -> float:
    return float(sum(np.sum(np.square(p, dtype=np.float64)) for p in params))


def nll_loss(log_probs, labels, weight_decay: float = 0.0, params: Iterable[np.ndarray] = ()):
    """Batch-mean negative log-likelihood plus ``weight_decay * sum(theta**2)``.

    Returns ``(loss, grad_log_probs)``. Only the data term is differentiated
    here; the regularizer's gradient is applied as weight decay by
    :func:`sgd_step`.
    """
    log_probs = np.asarray(log_probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = log_probs.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    picked = log_probs[np.arange(n), labels]
    data = -float(np.mean(picked, dtype=np.float64))
    grad = np.zeros_like(log_probs)
    grad[np.arange(n), labels] = -1.0 / n
    reg = weight_decay * l2_penalty(params) if weight_decay else 0.0
    return data + reg, grad


class VelocityState(dict):
    """Momentum buffers keyed by parameter name, created lazily as zeros."""

    def buffer(self, name: str, like: np.ndarray) -> np.ndarray:
        v = self.get(name)
        if v is None:
            v = self[name] = np.zeros_like(like)
        elif v.shape != like.shape:
            raise ValueError(f"velocity for {name} has shape {v.shape}, expected {like.shape}")
        return v


def sgd_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    velocity: VelocityState,
    cfg: OptimizerConfig,
    lr: float | None = None,
) -> Mapping[str, np.ndarray]:
    """In-place update ``g = grad + wd*theta; v = mu*v + g; theta -= lr*v``."""
    lr = cfg.learning_rate if lr is None else lr
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        v = velocity.buffer(name, theta)
        if cfg.weight_decay:
            g = g + theta.dtype.type(cfg.weight_decay) * theta
        v *= theta.dtype.type(cfg.momentum)
        v += g
        theta -= theta.dtype.type(lr) * v
    return params


@dataclass
class TrainRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_oa: float
    seconds: float = field(default=0.0, compare=False)

    def row(self) -> list:
        return [self.epoch, f"{self.train_loss:.8g}", f"{self.val_loss:.8g}",
                f"{self.val_oa:.8g}", f"{self.seconds:.3f}"]


def write_records(records: Iterable[TrainRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_oa", "seconds"])
        for r in records:
            w.writerow(r.row())


def read_records(path) -> list[TrainRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TrainRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]),
                    float(r["val_oa"]), float(r["seconds"]))
        for r in rows
    ]


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches covering ``range(n)`` once.

    A trailing batch of one sample is folded into the previous batch, since
    batch statistics cannot be formed from a single sample.
    """
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def train_step(model: ModelGraph, x, y, velocity: VelocityState, cfg: OptimizerConfig,
               lr: float) -> float:
    model.train()
    model.zero_grad()
    log_probs = model.forward(x)
    named = dict(model.named_parameters())
    loss, grad = nll_loss(log_probs, y, cfg.weight_decay, (p.data for p in named.values()))
    model.backward(grad)
    sgd_step(
        {k: p.data for k, p in named.items()},
        {k: p.grad for k, p in named.items()},
        velocity,
        cfg,
        lr,
    )
    return loss


def validate(model: ModelGraph, x, y) -> tuple[float, float]:
    """Mean NLL and overall accuracy in eval mode; NaN for an empty set."""
    if len(y) == 0:
        return float("nan"), float("nan")
    lp = model.predict(x)
    loss, _ = nll_loss(lp, y)
    return loss, float(np.mean(lp.argmax(axis=1) == y))


def train(model: ModelGraph, train_set, val_set, cfg: OptimizerConfig,
          callback=None) -> tuple[ModelGraph, list[TrainRecord]]:
    """Train ``model`` in place for ``cfg.epochs`` epochs.

    ``train_set`` and ``val_set`` are ``(samples, labels)`` pairs with
    samples shaped (N, 1, L, S, S).
    """
    x_tr, y_tr = train_set
    y_tr = np.asarray(y_tr, dtype=np.int64)
    if len(y_tr) == 0:
        raise ValueError("empty training set")
    x_va, y_va = val_set if val_set is not None else (x_tr[:0], y_tr[:0])
    y_va = np.asarray(y_va, dtype=np.int64)
    for labels in (y_tr, y_va):
        if len(labels) and labels.max() >= model.num_classes:
            raise ValueError(f"label {labels.max()} exceeds model class count {model.num_classes}")
    rng = np.random.default_rng(cfg.seed)
    velocity = VelocityState()
    records = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at(epoch, cfg)
        total, seen = 0.0, 0
        for idx in batches(len(y_tr), cfg.batch_size, rng):
            loss = train_step(model, x_tr[idx], y_tr[idx], velocity, cfg, lr)
            total += loss * len(idx)
            seen += len(idx)
        val_loss, val_oa = validate(model, x_va, y_va)
        rec = TrainRecord(epoch, total / seen, val_loss, val_oa, time.perf_counter() - t0)
        records.append(rec)
        log.info("epoch %d lr %.4g train %.4f val %.4f oa %.4f", epoch, lr,
                 rec.train_loss, val_loss, val_oa)
        if callback is not None:
            callback(rec)
    model.eval()
    return model, records
