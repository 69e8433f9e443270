"""Coordinate-as-class losses: softmax cross entropy, its multiscale sum, and
the sigmoid/MSE baseline. Every loss returns ``(loss, grad)`` with the
gradient taken with respect to the logits.

Logits may carry leading batch axes; classes always live on the last axis
and the loss comes back with the leading shape (a 0-d value for a single
vector).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from msce.tensor import PoolKind, ShapeError, as_tensor, pool1d


class LossKind(str, enum.Enum):
    MSE_SIGMOID = "mse"
    SCE = "sce"
    MSCE = "msce"


@dataclass(frozen=True)
class LossConfig:
    kind: LossKind = LossKind.MSCE
    scales: int = 1
    weights: tuple[float, ...] | None = None
    pool: PoolKind = PoolKind.MAX

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "pool", PoolKind(self.pool))
        if self.scales < 1:
            raise ValueError(f"scales must be >= 1, got {self.scales}")
        if self.kind is not LossKind.MSCE and self.scales != 1:
            raise ValueError(f"{self.kind.value} loss uses a single scale, got scales={self.scales}")
        weights = (1.0,) * self.scales if self.weights is None else tuple(float(w) for w in self.weights)
        if len(weights) != self.scales:
            raise ValueError(f"need {self.scales} weights, got {len(weights)}")
        if any(not w > 0 for w in weights):
            raise ValueError(f"weights must be positive, got {weights}")
        object.__setattr__(self, "weights", weights)

    def __call__(self, branches, t):
        """Evaluate on a list of branch logits, finest first."""
        if self.kind is LossKind.MSCE:
            return msce(branches, t, self.weights)
        if len(branches) != 1:
            raise ShapeError(f"{self.kind.value} expects one branch, got {len(branches)}")
        fn = sce if self.kind is LossKind.SCE else mse_sigmoid
        loss, grad = fn(branches[0], t)
        return loss, [grad]

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "scales": self.scales,
                "weights": list(self.weights), "pool": self.pool.value}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(kind=d["kind"], scales=d["scales"], weights=tuple(d["weights"]), pool=d["pool"])


@dataclass(frozen=True)
class ScaleTarget:
    """Ground-truth class at every scale; scale m halves the class count."""
    base: int
    num_classes: int
    scales: int = 1
    classes: tuple[int, ...] = field(init=False, default=())

    def __post_init__(self):
        c, t, m = self.num_classes, self.base, self.scales
        if not 0 <= t < c:
            raise ValueError(f"class {t} out of range [0, {c})")
        if m < 1 or c % (1 << (m - 1)):
            raise ShapeError(f"2^(M-1) = {1 << (m - 1)} must divide C = {c}")
        object.__setattr__(self, "classes", tuple(t >> k for k in range(m)))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(self.num_classes >> k for k in range(self.scales))


def _check_targets(s: np.ndarray, t) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError(f"class index must be integer, got {t.dtype}")
    if t.shape != s.shape[:-1]:
        raise ShapeError(f"target shape {t.shape} != logit batch shape {s.shape[:-1]}")
    c = s.shape[-1]
    if np.any((t < 0) | (t >= c)):
        raise ValueError(f"class index out of range [0, {c})")
    return t


def softmax(s) -> np.ndarray:
    s = as_tensor(s)
    if s.ndim == 0 or s.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector")
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(s) -> np.ndarray:
    s = as_tensor(s)
    if s.ndim == 0 or s.shape[-1] == 0:
        raise ShapeError("log_softmax of an empty vector")
    z = s - s.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sce(s, t):
    s = as_tensor(s)
    t = _check_targets(s, t)
    logp = log_softmax(s)
    ti = t[..., None]
    loss = -np.take_along_axis(logp, ti, axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, ti, np.take_along_axis(grad, ti, axis=-1) - 1.0, axis=-1)
    return loss[()], grad


def msce(branches, t, weights=None):
    """Weighted sum of SCE over scales.

    ``branches[m]`` holds the logits of scale m (finest first) and must have
    ``C >> m`` classes, where C is the length of the finest branch. ``t`` is
    the finest-scale class (int or integer array); coarse classes are
    ``t >> m``, which is what max-pooling a one-hot target produces.
    """
    branches = [as_tensor(b) for b in branches]
    if not branches:
        raise ShapeError("msce needs at least one branch")
    m_count = len(branches)
    weights = (1.0,) * m_count if weights is None else tuple(weights)
    if len(weights) != m_count:
        raise ShapeError(f"{len(weights)} weights for {m_count} branches")
    c = branches[0].shape[-1]
    if c % (1 << (m_count - 1)):
        raise ShapeError(f"2^(M-1) = {1 << (m_count - 1)} must divide C = {c}")
    if isinstance(t, ScaleTarget):
        if t.num_classes != c or t.scales != m_count:
            raise ShapeError(f"target built for C={t.num_classes}, M={t.scales}; branches have C={c}, M={m_count}")
        t = t.base
    t = np.asarray(t)
    total = 0.0
    grads = []
    for m, (b, lam) in enumerate(zip(branches, weights)):
        if b.shape[-1] != c >> m or b.shape[:-1] != branches[0].shape[:-1]:
            raise ShapeError(f"branch {m} has shape {b.shape}, expected (..., {c >> m})")
        loss, grad = sce(b, t >> m)
        total = total + lam * loss
        grads.append(lam * grad)
    return total, grads


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def mse_sigmoid(s, t):
    s = as_tensor(s)
    t = _check_targets(s, t)
    c = s.shape[-1]
    p = _sigmoid(s)
    target = np.zeros_like(s)
    np.put_along_axis(target, t[..., None], 1.0, axis=-1)
    r = p - target
    loss = (r * r).sum(axis=-1) / c
    grad = (2.0 / c) * r * p * (1.0 - p)
    return loss[()], grad


def landscape(cfg: LossConfig, num_classes: int = 256, gt: int = 70, amplitude: float = 10.0) -> np.ndarray:
    """Normalized loss for every candidate predicted coordinate.

    MSE scores the coordinate error directly. SCE and MSCE score the logit
    vector ``amplitude * one_hot(k)``; MSCE branches come from repeated
    ``pool1d`` with ``cfg.pool``. Each curve is divided by its maximum.
    """
    if not 0 <= gt < num_classes:
        raise ValueError(f"gt {gt} out of range [0, {num_classes})")
    if not amplitude > 0:
        raise ValueError(f"amplitude must be positive, got {amplitude}")
    k = np.arange(num_classes)
    if cfg.kind is LossKind.MSE_SIGMOID:
        curve = (k - gt).astype(np.float64) ** 2
    else:
        if cfg.kind is LossKind.MSCE and (num_classes & (num_classes - 1)):
            raise ShapeError(f"MSCE landscape needs a power-of-two class count, got {num_classes}")
        logits = amplitude * np.eye(num_classes)
        branches = [logits]
        for _ in range(cfg.scales - 1):
            branches.append(pool1d(branches[-1], cfg.pool))
        targets = np.full(num_classes, gt)
        curve, _ = cfg(branches, targets)
    return curve / curve.max()


def shared_scales(k: int, gt: int, scales: int) -> int:
    """Number of scales at which candidate k lands in the ground-truth bucket."""
    return sum((k >> m) == (gt >> m) for m in range(scales))
