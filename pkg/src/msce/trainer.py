"""Mini-batch SGD with exponential learning-rate decay and early stopping,
plus the R-AED localization metric."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from msce import net
from msce.loss import LossConfig
from msce.synth import Sample, class_of, stack

log = logging.getLogger(__name__)

# Sample distances are summed in index order, so R-AED is reproducible bit for bit.
RAED_OFFSET = 0.1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 8
    lr0: float = 0.01
    decay_steps: int = 400
    decay_rate: float = 0.9
    max_epochs: int = 1000
    patience: int = 100
    seed: int = 0
    val_fraction: float = 0.2
    monitor: str = "val"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError(f"need 1 <= patience <= max_epochs, got {self.patience}, {self.max_epochs}")
        if not 0 < self.val_fraction < 1:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.monitor not in ("val", "train"):
            raise ValueError(f"monitor must be 'val' or 'train', got {self.monitor!r}")
        if self.decay_steps <= 0 or not 0 < self.decay_rate <= 1 or self.lr0 < 0:
            raise ValueError("invalid learning-rate schedule")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{**d, "loss": LossConfig.from_dict(d["loss"])})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_raed: float
    lr: float


@dataclass
class RunRecord:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    test_raed: float | None = None
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "epochs": [asdict(e) for e in self.epochs],
            "test_raed": self.test_raed,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(epochs=[EpochRecord(**e) for e in d["epochs"]], best_epoch=d["best_epoch"],
                   test_raed=d["test_raed"], wall_time=d["wall_time"])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_loss", "val_raed", "lr"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.val_raed), repr(e.lr)])


def lr_at(step: int, cfg: TrainConfig) -> float:
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step % cfg.decay_steps == 0:
        # exact powers at whole decay periods
        return cfg.lr0 * cfg.decay_rate ** (step // cfg.decay_steps)
    return cfg.lr0 * cfg.decay_rate ** (step / cfg.decay_steps)


def distances(preds, gts) -> np.ndarray:
    p = np.asarray(preds, dtype=np.float64)
    q = np.asarray(gts, dtype=np.float64)
    if p.ndim != 2 or p.shape[-1] != 2 or p.shape != q.shape:
        raise ValueError(f"need matching (N, 2) coordinate arrays, got {p.shape} and {q.shape}")
    if len(p) == 0:
        raise ValueError("R-AED of an empty prediction set")
    return np.sqrt(((p - q) ** 2).sum(axis=1))


def r_aed(preds, gts) -> float:
    """Reciprocal of the mean Euclidean distance plus 0.1, in normalized coordinates."""
    d = distances(preds, gts)
    total = 0.0
    for di in d:
        total += float(di)
    return 1.0 / (total / len(d) + RAED_OFFSET)


def _targets(labels: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    return class_of(labels[:, 0], size), class_of(labels[:, 1], size)


def batch_loss(params, config: net.NetConfig, loss: LossConfig, images, labels, with_grad=True):
    """Mean over the batch of (x-axis loss + y-axis loss)."""
    feat, cache = net.forward(params, config, images)
    out = net.head(feat, config.pool, config.reduce, config.scales)
    tx, ty = _targets(labels, config.input_size)
    lx, gx = loss(out.x, tx)
    ly, gy = loss(out.y, ty)
    per_sample = lx + ly
    value = float(per_sample.mean())
    if not with_grad:
        return value, out, None
    n = len(per_sample)
    up = net.HeadOutput([g / n for g in gx], [g / n for g in gy])
    return value, out, net.backward(params, cache, up)


def _eval_chunks(params, config, loss, images, labels, chunk=32):
    """Dataset-mean loss and predictions, in fixed chunk order."""
    total = 0.0
    preds = []
    for i in range(0, len(images), chunk):
        value, out, _ = batch_loss(params, config, loss, images[i:i + chunk], labels[i:i + chunk],
                                   with_grad=False)
        total += value * len(images[i:i + chunk])
        px, py = net.predict(out)
        preds.append(np.stack([px, py], axis=-1))
    return total / len(images), np.concatenate(preds)


def evaluate(params, config: net.NetConfig, dataset: list[Sample]) -> tuple[float, np.ndarray]:
    """R-AED and per-sample distances of the model on ``dataset``."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    images, labels = stack(dataset)
    preds = predict_dataset(params, config, images)
    return r_aed(preds, labels), distances(preds, labels)


def predict_dataset(params, config: net.NetConfig, images, chunk=32) -> np.ndarray:
    preds = []
    for i in range(0, len(images), chunk):
        feat, _ = net.forward(params, config, images[i:i + chunk])
        px, py = net.predict(net.head(feat, config.pool, config.reduce, config.scales))
        preds.append(np.stack([px, py], axis=-1))
    return np.concatenate(preds)


def split(n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, val) index split.

    A single-sample dataset cannot be split; it is returned as its own
    validation set.
    """
    if n == 1:
        return np.arange(1), np.arange(1)
    n_val = min(max(1, int(round(n * cfg.val_fraction))), n - 1)
    perm = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2**31])).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(dataset: list[Sample], net_config: net.NetConfig, cfg: TrainConfig,
          test: list[Sample] | None = None, params=None):
    """Fit a fresh network (seeded by ``cfg.seed``) and return ``(params, RunRecord)``.

    Early stopping watches the monitored loss and rolls the parameters back
    to the best epoch before returning.
    """
    if net_config.scales != cfg.loss.scales:
        raise ValueError(f"head has {net_config.scales} scales but the loss expects {cfg.loss.scales}")
    t_start = time.perf_counter()
    images, labels = stack(dataset)
    tr_idx, val_idx = split(len(dataset), cfg)
    if len(tr_idx) < cfg.batch_size:
        raise ValueError(f"{len(tr_idx)} training samples is fewer than batch size {cfg.batch_size}")
    x_tr, y_tr = images[tr_idx], labels[tr_idx]
    x_val, y_val = images[val_idx], labels[val_idx]

    params = net.init(net_config, cfg.seed) if params is None else {k: v.copy() for k, v in params.items()}
    record = RunRecord()
    best_loss, best_params, stale = math.inf, params, 0
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(len(tr_idx))
        seen, running = 0, 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            value, _, grads = batch_loss(params, net_config, cfg.loss, x_tr[idx], y_tr[idx])
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at step {step} (epoch {epoch})")
            lr = lr_at(step, cfg)
            params = {k: v - lr * grads[k] for k, v in params.items()}
            step += 1
            seen += len(idx)
            running += value * len(idx)
        train_loss = running / seen
        val_loss, val_preds = _eval_chunks(params, net_config, cfg.loss, x_val, y_val)
        record.epochs.append(EpochRecord(epoch, train_loss, val_loss, r_aed(val_preds, y_val),
                                         lr_at(step, cfg)))
        monitored = val_loss if cfg.monitor == "val" else train_loss
        if monitored < best_loss:
            best_loss, best_params, stale = monitored, params, 0
            record.best_epoch = epoch
        else:
            stale += 1
        log.info("epoch %d train %.4f val %.4f raed %.3f", epoch, train_loss, val_loss,
                 record.epochs[-1].val_raed)
        if stale >= cfg.patience:
            break
    params = best_params
    if test:
        record.test_raed = evaluate(params, net_config, test)[0]
    record.wall_time = time.perf_counter() - t_start
    return params, record
