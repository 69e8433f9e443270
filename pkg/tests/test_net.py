import numpy as np
import pytest

from msce import io, net
from msce.loss import LossConfig, LossKind
from msce.tensor import PoolKind, ReduceKind, ShapeError
from msce.trainer import batch_loss

from conftest import max_rel

SMALL = net.NetConfig(input_size=8, widths=(4, 8), scales=3)


def naive_conv(x, w, b):
    """x: (C, H, W), w: (3, 3, C, O) -> (O, H, W), zero padding 1."""
    c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((w.shape[-1], h, wd))
    for o in range(w.shape[-1]):
        for i in range(h):
            for j in range(wd):
                out[o, i, j] = b[o] + np.sum(xp[:, i:i + 3, j:j + 3] * w[:, :, :, o].transpose(2, 0, 1))
    return out


def naive_forward(params, cfg, image):
    relu = lambda z: np.maximum(z, 0)
    h = image
    skips = []
    for lvl in range(cfg.depth):
        for k in (1, 2):
            name = f"enc{lvl}.conv{k}"
            h = relu(naive_conv(h, params[name + ".weight"], params[name + ".bias"]))
        if lvl < cfg.depth - 1:
            skips.append(h)
            c, hh, ww = h.shape
            h = h.reshape(c, hh // 2, 2, ww // 2, 2).max(axis=(2, 4))
    for lvl in reversed(range(cfg.depth - 1)):
        h = np.concatenate([h.repeat(2, 1).repeat(2, 2), skips[lvl]])
        for k in (1, 2):
            name = f"dec{lvl}.conv{k}"
            h = relu(naive_conv(h, params[name + ".weight"], params[name + ".bias"]))
    return np.tensordot(params["out.weight"][:, 0], h, axes=1) + params["out.bias"][0]


def random_params(cfg, seed):
    rng = np.random.default_rng(seed)
    p = net.init(cfg, seed)
    return {k: (rng.normal(0, 0.1, v.shape) if k.endswith(".bias") else v) for k, v in p.items()}


def test_init_deterministic_and_seeded():
    a, b, c = net.init(SMALL, 0), net.init(SMALL, 0), net.init(SMALL, 1)
    assert list(a) == list(SMALL.param_shapes())
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()
        assert a[k].shape == SMALL.param_shapes()[k]
    assert any(not np.array_equal(a[k], c[k]) for k in a if k.endswith("weight"))
    assert all(not a[k].any() for k in a if k.endswith("bias"))


def test_init_std_follows_fan_in():
    cfg = net.NetConfig(input_size=8, widths=(256,))
    w = net.init(cfg, 0)["enc0.conv1.weight"]
    assert w.shape == (3, 3, 1, 256)
    # fan_in = 9 for a 3x3 conv on one channel
    assert w.std() == pytest.approx(np.sqrt(2 / 9), rel=0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        net.NetConfig(input_size=48)
    with pytest.raises(ValueError):
        net.NetConfig(input_size=8, widths=(2, 2, 2, 2, 2))
    with pytest.raises(ValueError):
        net.NetConfig(input_size=8, scales=5)
    assert net.NetConfig.from_dict(SMALL.to_dict()) == SMALL


@pytest.mark.parametrize("cfg", [SMALL, net.NetConfig(input_size=16, widths=(2, 3, 4)),
                                 net.NetConfig(input_size=4, widths=(3,)),
                                 net.NetConfig(input_size=8, in_channels=2, widths=(2, 2))])
def test_forward_matches_naive_reference(cfg):
    rng = np.random.default_rng(0)
    params = random_params(cfg, 1)
    images = rng.uniform(size=(3, cfg.in_channels, cfg.input_size, cfg.input_size))
    feat, _ = net.forward(params, cfg, images)
    assert feat.shape == (3, cfg.input_size, cfg.input_size)
    for i in range(3):
        np.testing.assert_allclose(feat[i], naive_forward(params, cfg, images[i]), rtol=1e-12, atol=1e-12)
    single, _ = net.forward(params, cfg, images[0])
    assert single.shape == (cfg.input_size, cfg.input_size)


def test_forward_zero_in_zero_out_and_shape_errors():
    params = {k: np.zeros_like(v) for k, v in net.init(SMALL, 0).items()}
    feat, _ = net.forward(params, SMALL, np.zeros((1, 8, 8)))
    assert feat.shape == (8, 8) and not feat.any()
    with pytest.raises(ShapeError):
        net.forward(params, SMALL, np.zeros((1, 4, 4)))


def test_forward_deterministic():
    p = random_params(SMALL, 2)
    img = np.random.default_rng(0).uniform(size=(2, 1, 8, 8))
    assert net.forward(p, SMALL, img)[0].tobytes() == net.forward(p, SMALL, img)[0].tobytes()


def test_head_example():
    fm = np.array([[1, 2, 0, 0], [3, 4, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
    out = net.head(fm, PoolKind.MAX, ReduceKind.SUM, 2)
    assert out.x[0].tolist() == [4, 6, 0, 0]
    assert out.y[0].tolist() == [3, 7, 0, 0]
    assert out.x[1].tolist() == [4, 0]
    assert out.y[1].tolist() == [4, 0]
    one = net.head(fm, PoolKind.MAX, ReduceKind.MEAN, 1)
    assert len(one.x) == 1 and one.x[0].tolist() == [1, 1.5, 0, 0]
    const = net.head(np.full((8, 8), 2.0), PoolKind.AVERAGE, ReduceKind.SUM, 4)
    for b in const.x + const.y:
        assert np.all(b == b[0])
    with pytest.raises(ShapeError):
        net.head(np.zeros((12, 12)), PoolKind.MAX, ReduceKind.SUM, 4)


def test_head_branch_lengths_and_sum_invariant():
    fm = np.random.default_rng(0).standard_normal((64, 64))
    out = net.head(fm, PoolKind.MAX, ReduceKind.SUM, 7)
    assert [len(b) for b in out.x] == [64 >> m for m in range(7)]
    assert [len(b) for b in out.y] == [64 >> m for m in range(7)]
    total = fm.sum()
    assert out.x[0].sum() == pytest.approx(total, rel=1e-9)
    assert out.y[0].sum() == pytest.approx(total, rel=1e-9)


def test_predict():
    x = np.zeros(64)
    x[31] = 1
    px, py = net.predict(net.HeadOutput([x], [np.zeros(64)]))
    assert px == 31.5 / 64
    assert py == 0.5 / 64
    rng = np.random.default_rng(5)
    logits = rng.standard_normal((10, 16))
    px, _ = net.predict(net.HeadOutput([logits], [logits]))
    for row, p in zip(logits, px):
        best = max(range(16), key=lambda i: (row[i], -i))
        assert p == (best + 0.5) / 16


def test_zero_upstream_gives_zero_gradients():
    p = random_params(SMALL, 0)
    _, cache = net.forward(p, SMALL, np.random.default_rng(0).uniform(size=(2, 1, 8, 8)))
    up = net.HeadOutput([np.zeros((2, 8 >> m)) for m in range(3)], [np.zeros((2, 8 >> m)) for m in range(3)])
    grads = net.backward(p, cache, up)
    assert all(not g.any() for g in grads.values())


def test_batch_gradient_is_sum_of_sample_gradients():
    p = random_params(SMALL, 4)
    rng = np.random.default_rng(1)
    imgs = rng.uniform(size=(3, 1, 8, 8))
    up = net.HeadOutput([rng.standard_normal((3, 8 >> m)) for m in range(3)],
                        [rng.standard_normal((3, 8 >> m)) for m in range(3)])
    _, cache = net.forward(p, SMALL, imgs)
    batch = net.backward(p, cache, up)
    total = {k: np.zeros_like(v) for k, v in p.items()}
    for i in range(3):
        _, c = net.forward(p, SMALL, imgs[i:i + 1])
        g = net.backward(p, c, net.HeadOutput([b[i:i + 1] for b in up.x], [b[i:i + 1] for b in up.y]))
        for k in total:
            total[k] += g[k]
    for k in p:
        np.testing.assert_allclose(batch[k], total[k], rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("head", [("max", "sum"), ("average", "mean")])
def test_end_to_end_gradient_matches_finite_differences(seed, head):
    cfg = net.NetConfig(input_size=8, widths=(4, 8), pool=head[0], reduce=head[1], scales=3)
    loss = LossConfig(LossKind.MSCE, 3)
    rng = np.random.default_rng(seed)
    p = random_params(cfg, seed)
    imgs = rng.uniform(size=(2, 1, 8, 8))
    labels = rng.uniform(size=(2, 2))
    _, _, grads = batch_loss(p, cfg, loss, imgs, labels)
    h = 1e-6
    analytic, numeric = [], []
    for name, value in p.items():
        idx = rng.choice(value.size, size=min(4, value.size), replace=False)
        num = []
        for i in idx:
            plus, minus = value.copy(), value.copy()
            plus.flat[i] += h
            minus.flat[i] -= h
            fp = batch_loss({**p, name: plus}, cfg, loss, imgs, labels, with_grad=False)[0]
            fm = batch_loss({**p, name: minus}, cfg, loss, imgs, labels, with_grad=False)[0]
            num.append((fp - fm) / (2 * h))
        analytic.extend(grads[name].flat[idx])
        numeric.extend(num)
    # normwise: out.bias has an exactly zero gradient (softmax shift invariance)
    assert max_rel(analytic, numeric) < 1e-4


def test_directional_derivative_matches(tiny_data):
    cfg = net.NetConfig(input_size=8, widths=(4, 8), scales=1)
    loss = LossConfig(LossKind.SCE)
    p = random_params(cfg, 9)
    imgs = np.stack([s.image for s in tiny_data[:4]])
    labels = np.array([[s.label.gx, s.label.gy] for s in tiny_data[:4]])
    _, _, grads = batch_loss(p, cfg, loss, imgs, labels)
    rng = np.random.default_rng(0)
    v = {k: rng.standard_normal(x.shape) for k, x in p.items()}
    f = lambda e: batch_loss({k: p[k] + e * v[k] for k in p}, cfg, loss, imgs, labels, with_grad=False)[0]
    numeric = (f(1e-6) - f(-1e-6)) / 2e-6
    analytic = sum(float((grads[k] * v[k]).sum()) for k in p)
    assert analytic == pytest.approx(numeric, rel=1e-5)


# -- checkpoint ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    p = random_params(SMALL, 3)
    path = tmp_path / "ck.msck"
    net.save_checkpoint(path, SMALL, p, 3)
    cfg, q, seed = net.load_checkpoint(path)
    assert cfg == SMALL and seed == 3 and list(q) == list(p)
    for k in p:
        assert q[k].tobytes() == p[k].tobytes()
    net.save_checkpoint(tmp_path / "again.msck", cfg, q, seed)
    assert (tmp_path / "again.msck").read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "ck.msck"
    net.save_checkpoint(path, SMALL, net.init(SMALL, 0), 0)
    raw = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(io.BadMagicError):
        net.load_checkpoint(tmp_path / "magic")
    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(io.TruncationError):
        net.load_checkpoint(tmp_path / "short")
    (tmp_path / "long").write_bytes(raw + b"\0" * 8)
    with pytest.raises(io.SizeMismatchError):
        net.load_checkpoint(tmp_path / "long")
