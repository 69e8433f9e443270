"""Central finite-difference checks for every analytic gradient in the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from msce import loss as L
from msce import net
from msce.tensor import (PoolKind, ReduceKind, pool1d, pool1d_backward, pool2d, pool2d_backward,
                         reduce_axes, reduce_axes_backward)

STEP = 1e-6
KERNEL_TOL = 1e-5
NETWORK_TOL = 1e-4


def rel_error(analytic, numeric) -> float:
    """Largest absolute deviation, relative to the larger gradient's max-norm."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def numeric_grad(f, x: np.ndarray, index=None, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (entries listed in ``index``, else all)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    index = range(flat.size) if index is None else index
    out = []
    for i in index:
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        out.append((fp - fm) / (2 * h))
    return np.array(out)


@dataclass
class Result:
    component: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error < self.tolerance


def _linear_probe(fwd, bwd, x, rng):
    """Check ``bwd`` against d/dx <r, fwd(x)> for a random cotangent r."""
    r = rng.standard_normal(np.shape(fwd(x)))
    return bwd(x, r), numeric_grad(lambda z: float((r * fwd(z)).sum()), x)


def _kernel_cases(rng):
    c = 16
    t = int(rng.integers(c))
    s = rng.standard_normal(c) * 2
    yield "sce", L.sce(s, t)[1], numeric_grad(lambda z: float(L.sce(z, t)[0]), s)
    yield "mse_sigmoid", L.mse_sigmoid(s, t)[1], numeric_grad(lambda z: float(L.mse_sigmoid(z, t)[0]), s)

    lam = tuple(rng.uniform(0.5, 2.0, size=3))
    branches = [rng.standard_normal(c >> m) * 2 for m in range(3)]
    grads = L.msce(branches, t, lam)[1]
    numeric = []
    for m in range(3):
        def f(z, m=m):
            bs = list(branches)
            bs[m] = z
            return float(L.msce(bs, t, lam)[0])
        numeric.append(numeric_grad(f, branches[m]))
    yield "msce", np.concatenate(grads), np.concatenate(numeric)

    for kind in PoolKind:
        v = rng.standard_normal(8)
        yield (f"pool1d.{kind.value}",
               *_linear_probe(lambda z: pool1d(z, kind), lambda z, r: pool1d_backward(z, kind, r), v, rng))
        x = rng.standard_normal((4, 6))
        yield (f"pool2d.{kind.value}",
               *_linear_probe(lambda z: pool2d(z, kind), lambda z, r: pool2d_backward(z, kind, r), x, rng))
    for kind in ReduceKind:
        x = rng.standard_normal((3, 5))
        rx, ry = rng.standard_normal(5), rng.standard_normal(3)

        def f(z, kind=kind):
            gx, gy = reduce_axes(z, kind)
            return float(rx @ gx + ry @ gy)
        yield f"reduce_axes.{kind.value}", reduce_axes_backward(kind, rx, ry), numeric_grad(f, x)

    pool, red = list(PoolKind)[rng.integers(2)], list(ReduceKind)[rng.integers(2)]
    fm = rng.standard_normal((8, 8))
    up = net.HeadOutput([rng.standard_normal(8 >> m) for m in range(3)],
                        [rng.standard_normal(8 >> m) for m in range(3)])

    def f(z):
        out = net.head(z, pool, red, 3)
        return float(sum(a @ b for a, b in zip(out.x + out.y, up.x + up.y)))
    yield "head", net.head_backward(fm, pool, red, up), numeric_grad(f, fm)


def network_case(rng, size: int = 8, widths=(4, 8), per_tensor: int = 6):
    """End-to-end MSCE loss gradient on a random net and batch.

    Returns ``(analytic, numeric)`` over a random subset of entries of every
    parameter tensor, plus one random-direction directional derivative.
    """
    from msce.trainer import batch_loss

    scales = min(3, size.bit_length())
    pool, red = list(PoolKind)[rng.integers(2)], list(ReduceKind)[rng.integers(2)]
    config = net.NetConfig(input_size=size, widths=widths, pool=pool, reduce=red, scales=scales)
    params = net.init(config, int(rng.integers(2**31)))
    for k in params:
        if k.endswith(".bias"):
            params[k] = rng.normal(0.0, 0.1, size=params[k].shape)
    images = rng.uniform(0, 1, size=(2, 1, size, size))
    labels = rng.uniform(0, 1, size=(2, 2))
    cfg = L.LossConfig(L.LossKind.MSCE, scales)
    _, _, grads = batch_loss(params, config, cfg, images, labels)

    analytic, numeric = [], []
    for name, value in params.items():
        idx = rng.choice(value.size, size=min(per_tensor, value.size), replace=False)

        def f(z, name=name):
            return batch_loss({**params, name: z}, config, cfg, images, labels, with_grad=False)[0]
        analytic.append(grads[name].reshape(-1)[idx])
        numeric.append(numeric_grad(f, value, idx))

    direction = {k: rng.standard_normal(v.shape) for k, v in params.items()}

    def along(eps):
        moved = {k: params[k] + eps * direction[k] for k in params}
        return batch_loss(moved, config, cfg, images, labels, with_grad=False)[0]
    jvp_analytic = sum(float((grads[k] * direction[k]).sum()) for k in params)
    jvp_numeric = (along(STEP) - along(-STEP)) / (2 * STEP)
    analytic.append([jvp_analytic])
    numeric.append([jvp_numeric])
    return np.concatenate(analytic), np.concatenate(numeric)


def run(seed: int = 0, seeds: int = 20, size: int = 8, perturb: str | None = None) -> list[Result]:
    """Worst error per component over ``seeds`` consecutive seeds.

    ``perturb`` names a component whose analytic gradient is scaled by 1.01
    before comparison; used to prove the harness can fail.
    """
    worst: dict[str, float] = {}
    for sd in range(seed, seed + seeds):
        rng = np.random.default_rng(np.random.SeedSequence([sd, 7]))
        cases = list(_kernel_cases(rng))
        cases.append(("network", *network_case(rng, size=size)))
        for name, a, n in cases:
            if name == perturb:
                a = np.asarray(a) * 1.01
            worst[name] = max(worst.get(name, 0.0), rel_error(a, n))
    return [Result(name, err, NETWORK_TOL if name == "network" else KERNEL_TOL)
            for name, err in worst.items()]
