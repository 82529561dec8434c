"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive builds its output eagerly and, when any input requires a
gradient, records a closure mapping the output gradient to input gradients.
``backprop`` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor", "Graph", "ShapeError", "tensor", "apply_primitive", "backprop",
    "matmul", "conv2d", "bilinear_upsample", "softmax", "sigmoid", "relu",
    "layer_norm", "batch_norm", "add", "sub", "mul", "div", "neg", "exp", "log",
    "clip", "concat", "slice_", "reshape", "transpose", "sum_", "mean",
    "row_norm", "smooth_l1", "gather_at", "scatter_at", "no_grad",
]


class ShapeError(ValueError):
    """Raised when a primitive receives inputs of incompatible extents."""

    def __init__(self, kind, message):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that suppresses graph recording (inference passes)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backprop(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kind, f"cannot broadcast extents {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward, "div")


def neg(a):
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def power(a, p):
    """Elementwise ``a ** p`` for a constant exponent."""
    a = _as_tensor(a)
    out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def clip(a, lo, hi):
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def sigmoid(a):
    a = _as_tensor(a)
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def smooth_l1(a):
    """Elementwise Huber-style penalty: 0.5x² below 1, |x|-0.5 above."""
    a = _as_tensor(a)
    x = a.data
    small = np.abs(x) < 1.0
    out = np.where(small, 0.5 * x * x, np.abs(x) - 0.5)
    return _make(out, (a,), lambda g: (g * np.where(small, x, np.sign(x)),), "smooth_l1")


def row_norm(a):
    """Euclidean norm over the last axis; gradient defined as 0 at the origin."""
    a = _as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=-1))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (a.data * scale[..., None],)

    return _make(n, (a,), backward, "row_norm")


# ---------------------------------------------------------------- reductions and layout

def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = _as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", "no inputs")
    ref = list(tensors[0].shape)
    ax = axis % len(ref)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(o != r for i, (o, r) in enumerate(zip(other, ref)) if i != ax):
            raise ShapeError("concat", f"extents {tuple(ref)} and {tuple(other)} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def slice_(a, index):
    a = _as_tensor(a)
    out = a.data[index]

    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), backward, "slice")


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer)) for p in parts)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", f"inner extents disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", f"batch extents disagree: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward, "matmul")


def softmax(a):
    """Softmax over the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


# ---------------------------------------------------------------- convolution family

def _windows(xp, kh, kw, stride, ho, wo):
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :ho, :wo]


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of an N×C×H×W (or C×H×W) input with an O×C×kh×kw kernel."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d", f"expected 4-d input and kernel, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError("conv2d", f"input has {c} channels but kernel expects {ci}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError("conv2d", f"bias extents {bias.shape} != ({o},)")
        parents.append(bias)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo].transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        cols = _windows(xp, kh, kw, stride, ho, wo).transpose(0, 2, 3, 1, 4, 5).reshape(-1, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    gcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    res = _make(np.ascontiguousarray(out), parents, backward, "conv2d")
    return reshape(res, res.shape[1:]) if unbatched else res


def _interp_matrix(n_in, n_out):
    """Half-pixel-centred linear interpolation weights, n_out × n_in."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def bilinear_upsample(x, size):
    """Resize the two trailing axes of x to ``size`` = (H_out, W_out)."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("bilinear_upsample", f"need at least 2 axes, got {x.shape}")
    h, w = x.shape[-2:]
    ho, wo = size
    if ho < 1 or wo < 1:
        raise ShapeError("bilinear_upsample", f"invalid target size {size}")
    my, mx = _interp_matrix(h, ho), _interp_matrix(w, wo)
    out = np.matmul(np.matmul(my, x.data), mx.T)

    def backward(g):
        return (np.matmul(np.matmul(my.T, g), mx),)

    return _make(out, (x,), backward, "bilinear_upsample")


# ---------------------------------------------------------------- normalisation

def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", f"affine extents {gamma.shape}/{beta.shape} != ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(out, (x, gamma, beta), backward, "layer_norm")


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.9, eps=1e-5):
    """Per-channel normalisation of an N×C×H×W tensor.

    In training mode batch statistics are used and the running buffers are
    updated in place as ``running = momentum * running + (1 - momentum) * batch``.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError("batch_norm", f"expected N×C×H×W input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batch_norm", f"affine extents {gamma.shape}/{beta.shape} != ({c},)")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.data.size // c
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var * count / max(count - 1, 1)
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            gx = inv[None, :, None, None] * (
                gxhat - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(out, (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------- coordinate gather / scatter

def _coord_index(kind, featmap_shape, coords):
    """Validate integer (x, y) coords; return (batch, y, x) index arrays and K."""
    coords = np.asarray(coords)
    if coords.size and not np.issubdtype(coords.dtype, np.integer):
        rounded = np.rint(coords)
        if not np.array_equal(rounded, coords):
            raise ShapeError(kind, "coordinates must be integers")
        coords = rounded
    coords = coords.astype(np.int64)
    batched = len(featmap_shape) == 4
    if batched:
        n, _, h, w = featmap_shape
        if coords.ndim != 3 or coords.shape[0] != n or coords.shape[2] != 2:
            raise ShapeError(kind, f"coords extents {coords.shape} do not fit featmap {featmap_shape}")
    elif len(featmap_shape) == 3:
        _, h, w = featmap_shape
        coords = coords.reshape(-1, 2)[None]
    else:
        raise ShapeError(kind, f"featmap must be C×h×w or N×C×h×w, got {featmap_shape}")
    xs, ys = coords[..., 0], coords[..., 1]
    if np.any(xs < 0) or np.any(xs >= w) or np.any(ys < 0) or np.any(ys >= h):
        raise ShapeError(kind, f"coordinate outside the {h}x{w} grid")
    k = coords.shape[1]
    bs = np.repeat(np.arange(coords.shape[0]), k).reshape(-1, k)
    return bs, ys, xs, batched


def gather_at(featmap, coords):
    """Feature vectors at (x, y) coordinates: K×C (or N×K×C when batched)."""
    featmap = _as_tensor(featmap)
    bs, ys, xs, batched = _coord_index("gather_at", featmap.shape, coords)
    fm = featmap.data if batched else featmap.data[None]
    rows = fm[bs, :, ys, xs]  # N×K×C

    def backward(g):
        full = np.zeros(fm.shape)
        gg = g if batched else g[None]
        np.add.at(full, (bs, slice(None), ys, xs), gg)
        return (full if batched else full[0],)

    return _make(rows if batched else rows[0], (featmap,), backward, "gather_at")


def scatter_at(featmap, coords, rows):
    """Copy of featmap with the vectors at coords replaced by ``rows``."""
    featmap, rows = _as_tensor(featmap), _as_tensor(rows)
    bs, ys, xs, batched = _coord_index("scatter_at", featmap.shape, coords)
    h, w = featmap.shape[-2:]
    flat = ys * w + xs
    for b in range(flat.shape[0]):
        if len(np.unique(flat[b])) != flat.shape[1]:
            raise ShapeError("scatter_at", "duplicate coordinates make the write ambiguous")
    c = featmap.shape[-3]
    expect = (flat.shape[0], flat.shape[1], c) if batched else (flat.shape[1], c)
    if rows.shape != expect:
        raise ShapeError("scatter_at", f"rows extents {rows.shape} != {expect}")
    fm = featmap.data.copy()
    view = fm if batched else fm[None]
    view[bs, :, ys, xs] = rows.data if batched else rows.data[None]

    def backward(g):
        gfull = g.copy()
        gv = gfull if batched else gfull[None]
        grows = (g if batched else g[None])[bs, :, ys, xs]
        gv[bs, :, ys, xs] = 0.0
        return gfull, (grows if batched else grows[0])

    return _make(fm, (featmap, rows), backward, "scatter_at")


# ---------------------------------------------------------------- dispatch and backprop

_PRIMITIVES = {
    "matmul": matmul, "conv2d": conv2d, "bilinear_upsample": bilinear_upsample,
    "softmax": softmax, "sigmoid": sigmoid, "relu": relu, "layer_norm": layer_norm,
    "batch_norm": batch_norm, "add": add, "sub": sub, "mul": mul, "div": div,
    "neg": neg, "exp": exp, "log": log, "power": power, "clip": clip,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis), "slice": slice_,
    "reshape": reshape, "transpose": transpose, "sum": sum_, "mean": mean,
    "row_norm": row_norm, "smooth_l1": smooth_l1, "gather_at": gather_at,
    "scatter_at": scatter_at,
}


def apply_primitive(kind, inputs, **attrs):
    """Apply a primitive by name, e.g. ``apply_primitive("conv2d", [x, w], stride=2)``."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive kind {kind!r}") from None
    return fn(*inputs, **attrs)


class Graph:
    """Topologically ordered record of the primitive applications behind a tensor."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def records(self):
        """(op, input ids, output id) for every interior node."""
        return [(t.op, tuple(id(p) for p in t._parents), id(t)) for t in self.nodes if t._parents]

    def __len__(self):
        return len(self.nodes)


def backprop(loss, graph=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ShapeError("backprop", f"loss must be scalar, got extents {loss.shape}")
    graph = graph or Graph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(graph.nodes):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if not t._parents:
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            continue
        for p, gp in zip(t._parents, t._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = gp
    return graph
