"""Layer building blocks and the parameter checkpoint format."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"RTRLCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class Module:
    """Container that discovers parameters, buffers and submodules by attribute."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
        for name, child in self._children():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix=""):
        out = {}
        for name in getattr(self, "_buffer_names", ()):
            out[prefix + name] = getattr(self, name)
        for name, child in self._children():
            out.update(child.named_buffers(f"{prefix}{name}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def state_dict(self, prefix=""):
        state = {k: v.data for k, v in self.named_parameters(prefix).items()}
        state.update(self.named_buffers(prefix))
        return state

    def load_state_dict(self, state, prefix=""):
        targets = {k: v.data for k, v in self.named_parameters(prefix).items()}
        targets.update(self.named_buffers(prefix))
        for name, arr in targets.items():
            if name not in state:
                raise CheckpointError(f"checkpoint lacks parameter {name}")
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise CheckpointError(
                    f"parameter {name}: checkpoint extents {src.shape} != model extents {arr.shape}")
            arr[...] = src

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


def he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, scale=None):
        std = np.sqrt(1.0 / n_in) if scale is None else scale
        self.weight = Tensor(rng.standard_normal((n_in, n_out)) * std, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def forward(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=True, init_bias=0.0):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = Tensor(he_normal(rng, (c_out, c_in, k, k), c_in * k * k), requires_grad=True)
        self.bias = Tensor(np.full(c_out, init_bias), requires_grad=True) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, c, momentum=0.9, eps=1e-5):
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=self.training, momentum=self.momentum, eps=self.eps)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class ConvBNReLU(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1):
        self.conv = Conv2d(c_in, c_out, k, rng, stride=stride, bias=False)
        self.bn = BatchNorm2d(c_out)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))


# ---------------------------------------------------------------- checkpoint file

def save_checkpoint(path, arrays):
    """Write named float64 arrays.

    Layout (little endian): magic ``RTRLCKPT``, u32 version, u32 count, then per
    entry u32 name length, utf-8 name, u32 rank, u64 extents, raw float64 data.
    """
    path = Path(path)
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name in sorted(arrays):
        arr = np.array(arrays[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path):
    path = Path(path)
    buf = path.read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated while reading {what} at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"rank of {name}"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, f"extents of {name}"))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * n, f"data of {name}"), dtype="<f8")
        out[name] = data.reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after {count} entries")
    return out
