"""Structural kernels for the localization head.

Tensors are plain float64 numpy arrays. Every kernel acts on the trailing
axes and treats any leading axes as batch dimensions, so the same code
serves single feature maps and mini-batches.
"""
from __future__ import annotations

import enum

import numpy as np


class ShapeError(ValueError):
    pass


class PoolKind(str, enum.Enum):
    MAX = "max"
    AVERAGE = "average"


class ReduceKind(str, enum.Enum):
    SUM = "sum"
    MEAN = "mean"


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _pool_windows(x: np.ndarray) -> np.ndarray:
    """(..., H, W) -> (..., H/2, W/2, 4), window entries in row-major order."""
    *lead, h, w = x.shape
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ShapeError(f"pool2d needs even spatial dims >= 2, got {h}x{w}")
    win = x.reshape(*lead, h // 2, 2, w // 2, 2)
    win = np.moveaxis(win, -3, -2)
    return win.reshape(*lead, h // 2, w // 2, 4)


def pool2d(x, kind: PoolKind) -> np.ndarray:
    """Non-overlapping 2x2 stride-2 pooling over the last two axes."""
    win = _pool_windows(as_tensor(x))
    if PoolKind(kind) is PoolKind.MAX:
        return win.max(axis=-1)
    return win.mean(axis=-1)


def pool2d_backward(x, kind: PoolKind, upstream) -> np.ndarray:
    x = as_tensor(x)
    upstream = as_tensor(upstream)
    win = _pool_windows(x)
    if upstream.shape != win.shape[:-1]:
        raise ShapeError(f"upstream shape {upstream.shape} != pooled shape {win.shape[:-1]}")
    if PoolKind(kind) is PoolKind.MAX:
        # argmax returns the first index on ties
        idx = win.argmax(axis=-1)
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], upstream[..., None], axis=-1)
    else:
        gwin = np.repeat(upstream[..., None] / 4.0, 4, axis=-1)
    *lead, h2, w2, _ = gwin.shape
    g = gwin.reshape(*lead, h2, w2, 2, 2)
    g = np.moveaxis(g, -2, -3)
    return g.reshape(x.shape)


def pool1d(v, kind: PoolKind) -> np.ndarray:
    """Non-overlapping window-2 stride-2 pooling over the last axis."""
    v = as_tensor(v)
    c = v.shape[-1]
    if c < 2 or c % 2:
        raise ShapeError(f"pool1d needs an even length >= 2, got {c}")
    win = v.reshape(*v.shape[:-1], c // 2, 2)
    if PoolKind(kind) is PoolKind.MAX:
        return win.max(axis=-1)
    return win.mean(axis=-1)


def pool1d_backward(v, kind: PoolKind, upstream) -> np.ndarray:
    v = as_tensor(v)
    upstream = as_tensor(upstream)
    c = v.shape[-1]
    if c < 2 or c % 2 or upstream.shape != v.shape[:-1] + (c // 2,):
        raise ShapeError(f"pool1d_backward shape mismatch: {v.shape} vs {upstream.shape}")
    win = v.reshape(*v.shape[:-1], c // 2, 2)
    if PoolKind(kind) is PoolKind.MAX:
        idx = win.argmax(axis=-1)
        g = np.zeros_like(win)
        np.put_along_axis(g, idx[..., None], upstream[..., None], axis=-1)
    else:
        g = np.repeat(upstream[..., None] / 2.0, 2, axis=-1)
    return g.reshape(v.shape)


def reduce_axes(x, kind: ReduceKind) -> tuple[np.ndarray, np.ndarray]:
    """Collapse (..., H, W) to per-axis logits.

    Returns ``(xlogits, ylogits)`` where ``xlogits`` has length W (one entry
    per column) and ``ylogits`` has length H (one entry per row).
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ShapeError(f"reduce_axes needs a non-empty (..., H, W) tensor, got {x.shape}")
    if ReduceKind(kind) is ReduceKind.SUM:
        return x.sum(axis=-2), x.sum(axis=-1)
    return x.mean(axis=-2), x.mean(axis=-1)


def reduce_axes_backward(kind: ReduceKind, upstream_x, upstream_y) -> np.ndarray:
    gx = as_tensor(upstream_x)
    gy = as_tensor(upstream_y)
    if gx.shape[:-1] != gy.shape[:-1]:
        raise ShapeError(f"batch dims differ: {gx.shape} vs {gy.shape}")
    h, w = gy.shape[-1], gx.shape[-1]
    if ReduceKind(kind) is ReduceKind.MEAN:
        gx = gx / h
        gy = gy / w
    return gx[..., None, :] + gy[..., :, None]
