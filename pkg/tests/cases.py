"""Random gradient-check instances for every primitive and loss."""

import numpy as np

from radartrl import tensor as T
from radartrl.heads_losses import focal_loss, regression_loss, make_gt_heatmap
from radartrl.geometry import OrientedBox


def _probe(out, seed):
    """Reduce an output to a scalar with fixed random weights."""
    return (out * np.random.default_rng(seed).standard_normal(out.shape)).sum()


def _case(rng, kind):
    r = lambda *s: rng.standard_normal(s)
    w = int(rng.integers(1 << 30))
    if kind == "matmul":
        return (lambda a, b: _probe(T.matmul(a, b), w)), [r(3, 4), r(4, 2)]
    if kind == "matmul_batched":
        return (lambda a, b: _probe(T.matmul(a, b), w)), [r(2, 3, 4), r(4, 5)]
    if kind == "conv2d":
        return (lambda x, k, b: _probe(T.conv2d(x, k, b, stride=1, padding=1), w)), [r(2, 3, 5, 5), r(4, 3, 3, 3), r(4)]
    if kind == "conv2d_stride2":
        return (lambda x, k: _probe(T.conv2d(x, k, stride=2, padding=1), w)), [r(1, 2, 6, 6), r(3, 2, 3, 3)]
    if kind == "conv2d_1x1":
        return (lambda x, k: _probe(T.conv2d(x, k, stride=2, padding=0), w)), [r(2, 3, 4, 4), r(2, 3, 1, 1)]
    if kind == "bilinear_upsample":
        return (lambda x: _probe(T.bilinear_upsample(x, (6, 4)), w)), [r(2, 2, 3, 2)]
    if kind == "softmax":
        return (lambda x: _probe(T.softmax(x), w)), [r(3, 5)]
    if kind == "sigmoid":
        return (lambda x: _probe(T.sigmoid(x), w)), [r(4, 3)]
    if kind == "relu":
        return (lambda x: _probe(T.relu(x), w)), [r(4, 3)]
    if kind == "layer_norm":
        return (lambda x, g, b: _probe(T.layer_norm(x, g, b), w)), [r(3, 6), r(6), r(6)]
    if kind == "batch_norm":
        rm, rv = np.zeros(3), np.ones(3)
        return (lambda x, g, b: _probe(T.batch_norm(x, g, b, rm, rv, training=True), w)), [r(2, 3, 3, 2), r(3), r(3)]
    if kind == "batch_norm_eval":
        rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
        return (lambda x, g, b: _probe(T.batch_norm(x, g, b, rm, rv, training=False), w)), [r(2, 3, 2, 2), r(3), r(3)]
    if kind == "add":
        return (lambda a, b: _probe(T.add(a, b), w)), [r(3, 4), r(4)]
    if kind == "sub":
        return (lambda a, b: _probe(T.sub(a, b), w)), [r(3, 1), r(3, 4)]
    if kind == "mul":
        return (lambda a, b: _probe(T.mul(a, b), w)), [r(2, 3, 4), r(3, 1)]
    if kind == "div":
        return (lambda a, b: _probe(T.div(a, b), w)), [r(3, 4), rng.uniform(0.5, 2.0, (3, 4))]
    if kind == "exp":
        return (lambda a: _probe(T.exp(a), w)), [r(3, 3)]
    if kind == "log":
        return (lambda a: _probe(T.log(a), w)), [rng.uniform(0.2, 3.0, (3, 3))]
    if kind == "power":
        return (lambda a: _probe(T.power(a, 3), w)), [r(3, 3)]
    if kind == "clip":
        return (lambda a: _probe(T.clip(a, -0.5, 0.5), w)), [r(4, 4)]
    if kind == "concat":
        return (lambda a, b: _probe(T.concat([a, b], axis=1), w)), [r(2, 3), r(2, 2)]
    if kind == "slice":
        return (lambda a: _probe(a[:, 1:3], w)), [r(3, 4)]
    if kind == "slice_fancy":
        idx = np.array([0, 2, 2, 1])
        return (lambda a: _probe(a[idx], w)), [r(3, 4)]
    if kind == "reshape":
        return (lambda a: _probe(T.reshape(a, (6, 2)), w)), [r(3, 4)]
    if kind == "transpose":
        return (lambda a: _probe(T.transpose(a, (1, 2, 0)), w)), [r(2, 3, 4)]
    if kind == "sum":
        return (lambda a: _probe(T.sum_(a, axis=1), w)), [r(3, 4)]
    if kind == "mean":
        return (lambda a: T.mean(a) * 3.0), [r(3, 4)]
    if kind == "row_norm":
        return (lambda a: _probe(T.row_norm(a), w)), [r(5, 2)]
    if kind == "smooth_l1":
        return (lambda a: _probe(T.smooth_l1(a), w)), [r(4, 4) * 1.5]
    if kind == "gather_at":
        coords = np.stack([rng.integers(0, 5, 3), rng.integers(0, 4, 3)], axis=1)
        return (lambda f: _probe(T.gather_at(f, coords), w)), [r(3, 4, 5)]
    if kind == "scatter_at":
        flat = rng.choice(20, 3, replace=False)
        coords = np.stack([flat % 5, flat // 5], axis=1)
        return (lambda f, rows: _probe(T.scatter_at(f, coords, rows), w)), [r(3, 4, 5), r(3, 3)]
    raise KeyError(kind)


PRIMITIVE_KINDS = (
    "matmul", "matmul_batched", "conv2d", "conv2d_stride2", "conv2d_1x1", "bilinear_upsample",
    "softmax", "sigmoid", "relu", "layer_norm", "batch_norm", "batch_norm_eval", "add", "sub",
    "mul", "div", "exp", "log", "power", "clip", "concat", "slice", "slice_fancy", "reshape",
    "transpose", "sum", "mean", "row_norm", "smooth_l1", "gather_at", "scatter_at",
)


def primitive_case(kind, seed):
    return _case(np.random.default_rng(seed), kind)


def composite_case(seed):
    """Five inputs threaded through conv, norm, upsampling, attention-style matmuls."""
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)
    rm, rv = np.zeros(3), np.ones(3)
    coords = np.array([[0, 1], [2, 3]])
    probe = np.random.default_rng(seed + 1).standard_normal((2, 3))

    def fn(x, k, g, q, v):
        y = T.conv2d(x, k, stride=1, padding=1)
        y = T.relu(T.batch_norm(y, g, g * 0.5, rm, rv, training=True))
        y = T.bilinear_upsample(y, (4, 4))
        rows = T.gather_at(y[0], coords)                     # 2×3
        att = T.softmax(T.matmul(rows, q))                   # 2×3
        mixed = T.layer_norm(T.matmul(att, v) + rows, g, g * 0.0 + 0.1)
        z = T.scatter_at(y[0], coords, T.sigmoid(mixed))
        out = T.concat([T.reshape(z, (3, 16)), T.exp(T.slice_(mixed, (slice(None), slice(0, 1))).transpose())[:, :1]
                        * np.ones((1, 16))], axis=0)
        return (out.sum(axis=1)[:2] * probe[0, :2]).sum() + T.smooth_l1(mixed * 2.0).sum() * 0.1 \
            + T.row_norm(mixed).sum() - T.log(att + 1.0).mean()

    return fn, [r(1, 2, 2, 2), r(3, 2, 3, 3), rng.uniform(0.5, 1.5, 3), r(3, 3), r(3, 3)]


# ---------------------------------------------------------------- losses

LOSS_KINDS = ("focal", "box", "orient", "offset", "track")


def loss_case(kind, seed):
    rng = np.random.default_rng(seed)
    if kind == "focal":
        boxes = [OrientedBox(rng.uniform(4, 28), rng.uniform(4, 28), 5.0, 10.0, 0.0) for _ in range(2)]
        target = make_gt_heatmap(boxes, (8, 8), 4)[None]
        logits = rng.standard_normal((1, 8, 8))
        return (lambda x: focal_loss(T.sigmoid(x), target)), [logits]
    m = 4
    scale = {"box": 6.0, "orient": 1.0, "offset": 0.5, "track": 1.0}[kind]
    targets = rng.standard_normal((m, 2)) * scale
    if kind == "orient":
        a = rng.uniform(0, 2 * np.pi, m)
        targets = np.stack([np.sin(a), np.cos(a)], axis=1)
    feats = rng.standard_normal((3, 5, 5))
    cells = np.stack([rng.choice(5, m, replace=False), rng.integers(0, 5, m)], axis=1)

    def fn(z, wmat, b):
        rows = T.gather_at(z, cells)
        return regression_loss(T.matmul(rows, wmat) + b, targets)

    return fn, [feats, rng.standard_normal((3, 2)), rng.standard_normal(2) * scale]
