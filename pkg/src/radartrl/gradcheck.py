"""Central finite-difference oracle for checking analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backprop


def numerical_gradient(fn, arrays, h=1e-5):
    """d fn / d arrays[i] by central differences; ``fn`` maps ndarrays to a float."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(*arrays)
            flat[i] = orig - h
            down = fn(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradient(fn, arrays):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    backprop(out)
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def relative_error(a, b, floor=1e-8):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def gradcheck(fn, arrays, h=1e-5):
    """Largest relative error between analytic and numerical gradients.

    ``fn`` takes Tensors and returns a scalar Tensor; it is called with raw
    arrays wrapped in non-grad Tensors for the numerical side.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ana = analytic_gradient(fn, arrays)
    num = numerical_gradient(lambda *xs: float(fn(*[Tensor(x) for x in xs]).data), arrays, h)
    return max(relative_error(a, n) for a, n in zip(ana, num))
