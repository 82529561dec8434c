"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 5e-4
    wd: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def arrays(self, prefix="optim."):
        out = {f"{prefix}step": np.array([float(self.step)])}
        for name in self.m:
            out[f"{prefix}m.{name}"] = self.m[name]
            out[f"{prefix}v.{name}"] = self.v[name]
        return out

    def load_arrays(self, arrays, prefix="optim."):
        if f"{prefix}step" not in arrays:
            return
        self.step = int(arrays[f"{prefix}step"][0])
        for key, arr in arrays.items():
            if key.startswith(f"{prefix}m."):
                self.m[key[len(prefix) + 2:]] = arr.copy()
            elif key.startswith(f"{prefix}v."):
                self.v[key[len(prefix) + 2:]] = arr.copy()


def adam_step(params, grads, state):
    """Update ``params`` (name -> ndarray) in place from ``grads`` and advance ``state``.

    Weight decay is decoupled: each parameter is first shrunk by ``lr * wd``,
    then moved by the bias-corrected moment ratio.  Missing gradients count
    as zero.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient extents {g.shape} != parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if state.wd:
            p -= state.lr * state.wd * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Convenience wrapper binding a parameter dict (name -> Tensor) to an AdamState."""

    def __init__(self, named_params, lr=5e-4, wd=1e-2, **kw):
        self.params = named_params
        self.state = AdamState(lr=lr, wd=wd, **kw)

    def step(self):
        arrays = {k: t.data for k, t in self.params.items()}
        grads = {k: t.grad for k, t in self.params.items() if t.grad is not None}
        adam_step(arrays, grads, self.state)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None
