"""Tiny U-Net localizer and the multiscale per-axis head.

Parameters live in an ordered ``dict`` of float64 arrays; conv weights are
stored as ``(3, 3, C_in, C_out)``.
"""
from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from msce import io
from msce.tensor import (PoolKind, ReduceKind, ShapeError, pool2d, pool2d_backward,
                         reduce_axes, reduce_axes_backward)

CHECKPOINT_MAGIC = b"MSCK1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    input_size: int = 64
    in_channels: int = 1
    widths: tuple[int, ...] = (8, 16, 32)
    pool: PoolKind = PoolKind.MAX
    reduce: ReduceKind = ReduceKind.SUM
    scales: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "pool", PoolKind(self.pool))
        object.__setattr__(self, "reduce", ReduceKind(self.reduce))
        s = self.input_size
        if s < 1 or s & (s - 1):
            raise ValueError(f"input_size must be a power of two, got {s}")
        if self.in_channels < 1 or not self.widths or min(self.widths) < 1:
            raise ValueError(f"invalid channel layout {self.in_channels} -> {self.widths}")
        if s % (1 << (self.depth - 1)):
            raise ValueError(f"input_size {s} not divisible by 2^(depth-1) = {1 << (self.depth - 1)}")
        if self.scales < 1 or s % (1 << (self.scales - 1)):
            raise ValueError(f"2^(M-1) must divide input_size; got M={self.scales}, S={s}")

    @property
    def depth(self) -> int:
        return len(self.widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(widths=list(self.widths), pool=self.pool.value, reduce=self.reduce.value)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**{**d, "widths": tuple(d["widths"])})

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        c_in = self.in_channels
        for lvl, w in enumerate(self.widths):
            shapes[f"enc{lvl}.conv1.weight"] = (3, 3, c_in, w)
            shapes[f"enc{lvl}.conv1.bias"] = (w,)
            shapes[f"enc{lvl}.conv2.weight"] = (3, 3, w, w)
            shapes[f"enc{lvl}.conv2.bias"] = (w,)
            c_in = w
        for lvl in reversed(range(self.depth - 1)):
            w = self.widths[lvl]
            shapes[f"dec{lvl}.conv1.weight"] = (3, 3, c_in + w, w)
            shapes[f"dec{lvl}.conv1.bias"] = (w,)
            shapes[f"dec{lvl}.conv2.weight"] = (3, 3, w, w)
            shapes[f"dec{lvl}.conv2.bias"] = (w,)
            c_in = w
        shapes["out.weight"] = (c_in, 1)
        shapes["out.bias"] = (1,)
        return shapes


Params = dict  # name -> float64 array, in NetConfig.param_shapes() order


def init(config: NetConfig, seed: int) -> Params:
    """He-normal weights, zero biases, drawn in parameter order from PCG64."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return params


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


# -- convolution kernels ------------------------------------------------------
#
# Activations are stored channels-first as (C, P): each image is zero padded
# by one pixel and all padded images are flattened into one axis of length
# P = n * (H + 2) * (W + 2). A 3x3 tap is then a constant offset along P, so
# a convolution is one (9*C_out, C_in) @ (C_in, P) matmul plus nine
# contiguous shifted adds. Writing zeros back onto the padding ring keeps
# every activation ready to be the next layer's padded input.

@functools.lru_cache(maxsize=None)
def _geometry(n: int, h: int, w: int):
    wp = w + 2
    offsets = tuple((di - 1) * wp + (dj - 1) for di in range(3) for dj in range(3))
    mask = np.zeros((n, h + 2, w + 2))
    mask[:, 1:-1, 1:-1] = 1.0
    mask = mask.reshape(-1)
    mask.flags.writeable = False
    return offsets, mask


def _pad(x: np.ndarray) -> np.ndarray:
    """(C, n, H, W) -> padded flat (C, P)."""
    c, n, h, w = x.shape
    out = np.zeros((c, n, h + 2, w + 2))
    out[:, :, 1:-1, 1:-1] = x
    return out.reshape(c, -1)


def _interior(x: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    """padded flat (C, P) -> (C, n, H, W) view."""
    return x.reshape(x.shape[0], n, h + 2, w + 2)[:, :, 1:-1, 1:-1]


def _wmat(w: np.ndarray) -> np.ndarray:
    """(3, 3, C_in, C_out) -> (9 * C_out, C_in), tap-major."""
    return w.transpose(0, 1, 3, 2).reshape(-1, w.shape[2])


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray, geo) -> np.ndarray:
    offsets, mask = geo
    p = x.shape[1]
    o = w.shape[-1]
    wm = _wmat(w)
    z = np.multiply.outer(wm[:, 0], x[0]) if x.shape[0] == 1 else wm @ x
    z = z.reshape(9, o, p)
    out = np.empty((o, p))
    out[:] = b[:, None]
    for k, off in enumerate(offsets):
        lo, hi = max(0, -off), min(p, p - off)
        out[:, lo:hi] += z[k, :, lo + off:hi + off]
    out *= mask
    return out


def _conv3x3_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray, geo):
    offsets, mask = geo
    o, p = g.shape
    dz = np.zeros((9, o, p))
    for k, off in enumerate(offsets):
        lo, hi = max(0, -off), min(p, p - off)
        dz[k, :, lo + off:hi + off] = g[:, lo:hi]
    dz = dz.reshape(9 * o, p)
    wm = _wmat(w)
    dx = (wm.T @ dz) * mask
    dw = (dz @ x.T).reshape(3, 3, o, -1).transpose(0, 1, 3, 2)
    return dx, dw, g.sum(axis=1)


# -- backbone -----------------------------------------------------------------

@dataclass
class Cache:
    config: NetConfig
    batch: int
    featmap: np.ndarray
    convs: list = field(default_factory=list)      # (name, padded input, relu output)
    pools: list = field(default_factory=list)      # pool inputs, one per encoder level but the last
    final_input: np.ndarray | None = None


def _as_batch(config: NetConfig, image) -> tuple[np.ndarray, bool]:
    x = np.asarray(image, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    s, c = config.input_size, config.in_channels
    if x.ndim != 4 or x.shape[1:] != (c, s, s):
        raise ShapeError(f"expected image shape ({c}, {s}, {s}) with optional batch axis, got {np.shape(image)}")
    return x, single


def forward(params: Params, config: NetConfig, image):
    """Backbone pass: ``(C_in, S, S)`` or ``(B, C_in, S, S)`` -> ``(S, S)`` or ``(B, S, S)``."""
    x, single = _as_batch(config, image)
    n, size = x.shape[0], config.input_size
    cache = Cache(config=config, batch=n, featmap=None)

    def conv_relu(h, name, res):
        out = _conv3x3(h, params[name + ".weight"], params[name + ".bias"], _geometry(n, res, res))
        np.maximum(out, 0.0, out=out)
        cache.convs.append((name, h, out))
        return out

    h = _pad(x.transpose(1, 0, 2, 3))
    skips = []
    for lvl in range(config.depth):
        res = size >> lvl
        h = conv_relu(h, f"enc{lvl}.conv1", res)
        h = conv_relu(h, f"enc{lvl}.conv2", res)
        if lvl < config.depth - 1:
            skips.append(h)
            inner = _interior(h, n, res, res)
            cache.pools.append(inner)
            h = _pad(pool2d(inner, PoolKind.MAX))
    for lvl in reversed(range(config.depth - 1)):
        res = size >> lvl
        up = _interior(h, n, res // 2, res // 2).repeat(2, axis=2).repeat(2, axis=3)
        h = np.concatenate([_pad(up), skips[lvl]], axis=0)
        h = conv_relu(h, f"dec{lvl}.conv1", res)
        h = conv_relu(h, f"dec{lvl}.conv2", res)
    cache.final_input = h
    feat = params["out.weight"][:, 0] @ h + params["out.bias"][0]
    feat = np.ascontiguousarray(_interior(feat[None], n, size, size)[0])
    cache.featmap = feat
    return (feat[0] if single else feat), cache


def backbone_backward(params: Params, cache: Cache, dfeat: np.ndarray) -> Params:
    config, n, size = cache.config, cache.batch, cache.config.input_size
    dfeat = np.asarray(dfeat, dtype=np.float64).reshape(cache.featmap.shape)
    grads = {}
    h = cache.final_input
    dflat = _pad(dfeat[None])[0]
    grads["out.bias"] = np.array([dfeat.sum()])
    grads["out.weight"] = (h @ dflat)[:, None]
    dh = np.multiply.outer(params["out.weight"][:, 0], dflat)

    convs = list(cache.convs)

    def conv_relu_back(dh, name, res):
        cname, x, out = convs.pop()
        assert cname == name, (cname, name)
        dh = dh * (out > 0)
        dx, grads[name + ".weight"], grads[name + ".bias"] = _conv3x3_backward(
            dh, x, params[name + ".weight"], _geometry(n, res, res))
        return dx

    dskips = [None] * (config.depth - 1)
    for lvl in range(config.depth - 1):
        res = size >> lvl
        dh = conv_relu_back(dh, f"dec{lvl}.conv2", res)
        dh = conv_relu_back(dh, f"dec{lvl}.conv1", res)
        c_up = dh.shape[0] - config.widths[lvl]
        dskips[lvl] = dh[c_up:]
        dup = _interior(dh[:c_up], n, res, res)
        c = dup.shape[0]
        dup = dup.reshape(c, n, res // 2, 2, res // 2, 2).sum(axis=(3, 5))
        dh = _pad(dup)
    for lvl in reversed(range(config.depth)):
        res = size >> lvl
        if lvl < config.depth - 1:
            dpool = _interior(dh, n, res // 2, res // 2)
            dh = _pad(pool2d_backward(cache.pools[lvl], PoolKind.MAX, dpool)) + dskips[lvl]
        dh = conv_relu_back(dh, f"enc{lvl}.conv2", res)
        dh = conv_relu_back(dh, f"enc{lvl}.conv1", res)
    return {name: grads[name] for name in params}


# -- head ---------------------------------------------------------------------

@dataclass
class HeadOutput:
    """Per-axis logit branches, finest first; branch m has length S >> m."""
    x: list
    y: list


def head(featmap, pool: PoolKind, reduce: ReduceKind, scales: int) -> HeadOutput:
    fm = np.asarray(featmap, dtype=np.float64)
    s = fm.shape[-1]
    if fm.ndim < 2 or fm.shape[-2] != s or scales < 1 or s % (1 << (scales - 1)):
        raise ShapeError(f"head needs a square map with 2^(M-1) | S; got {fm.shape}, M={scales}")
    xs, ys = [], []
    for m in range(scales):
        if m:
            fm = pool2d(fm, pool)
        x, y = reduce_axes(fm, reduce)
        xs.append(x)
        ys.append(y)
    return HeadOutput(xs, ys)


def head_backward(featmap, pool: PoolKind, reduce: ReduceKind, upstream: HeadOutput) -> np.ndarray:
    fm = np.asarray(featmap, dtype=np.float64)
    scales = len(upstream.x)
    if len(upstream.y) != scales:
        raise ShapeError("x and y branch counts differ")
    maps = [fm]
    for _ in range(scales - 1):
        maps.append(pool2d(maps[-1], pool))
    g = np.zeros_like(maps[-1])
    for m in reversed(range(scales)):
        g = g + reduce_axes_backward(reduce, upstream.x[m], upstream.y[m])
        if m:
            g = pool2d_backward(maps[m - 1], pool, g)
    return g


def backward(params: Params, cache: Cache, upstream) -> Params:
    """Parameter gradients from head-shaped upstream gradients (or a featmap gradient)."""
    if isinstance(upstream, HeadOutput):
        cfg = cache.config
        upstream = head_backward(cache.featmap, cfg.pool, cfg.reduce, upstream)
    return backbone_backward(params, cache, upstream)


def predict(out: HeadOutput):
    """Finest-branch argmax per axis, mapped to pixel centres in [0, 1]."""
    xl, yl = np.asarray(out.x[0]), np.asarray(out.y[0])
    s_x, s_y = xl.shape[-1], yl.shape[-1]
    return (xl.argmax(axis=-1) + 0.5) / s_x, (yl.argmax(axis=-1) + 0.5) / s_y


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, config: NetConfig, params: Params, seed: int) -> None:
    shapes = config.param_shapes()
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "seed": int(seed),
        "params": [{"name": k, "shape": list(shapes[k])} for k in shapes],
    }
    chunks = [CHECKPOINT_MAGIC, io.json_block(header)]
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name}: shape {params[name].shape} != {shape}")
        chunks.append(io.f64_bytes(params[name]))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[NetConfig, Params, int]:
    r = io.Reader(Path(path).read_bytes(), f"checkpoint {path}")
    r.magic(CHECKPOINT_MAGIC)
    header = r.json()
    if header.get("version") != CHECKPOINT_VERSION:
        raise io.FormatError(f"unsupported checkpoint version {header.get('version')!r}")
    config = NetConfig.from_dict(header["config"])
    expected = config.param_shapes()
    listed = {p["name"]: tuple(p["shape"]) for p in header["params"]}
    if listed != expected:
        raise io.SizeMismatchError("checkpoint parameter table does not match its config")
    params = {}
    for name, shape in expected.items():
        params[name] = r.f64(int(np.prod(shape))).reshape(shape)
    r.finish()
    return config, params, header["seed"]
