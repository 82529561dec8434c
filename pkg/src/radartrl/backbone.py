"""U-shaped residual encoder for channel-concatenated frame pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Module


@dataclass(frozen=True)
class BackboneConfig:
    widths: tuple = (16, 32, 64, 128)
    stride: int = 4          # output down-sampling ratio s
    out_channels: int = 64   # C

    def validate(self):
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ValueError(f"need four positive stage widths, got {self.widths}")
        s = self.stride
        if s < 2 or s & (s - 1):
            raise ValueError(f"down-sampling ratio must be a power of two >= 2, got {s}")
        if self.out_channels < 1:
            raise ValueError("out_channels must be positive")
        return self

    @property
    def deepest_stride(self):
        return self.stride * 8

    def check_input(self, height, width):
        d = self.deepest_stride
        if height % d or width % d:
            raise ValueError(
                f"input {height}x{width} not divisible by {d} (ratio {self.stride} times 8)")


class ResidualBlock(Module):
    """Two 3x3 convolutions with a projected shortcut; halves the resolution."""

    def __init__(self, c_in, c_out, rng, stride=2):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, bias=False)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, bias=False)
        self.bn2 = BatchNorm2d(c_out)
        self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride, padding=0, bias=False)
        self.bn_proj = BatchNorm2d(c_out)

    def forward(self, x):
        y = T.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return T.relu(y + self.bn_proj(self.proj(x)))


class SkipUp(Module):
    """Upsample deep features to the shallow size, conv-BN-ReLU, concatenate."""

    def __init__(self, c_deep, c_out, rng):
        self.fuse = ConvBNReLU(c_deep, c_out, 3, rng)

    def forward(self, deep, shallow):
        up = T.bilinear_upsample(deep, shallow.shape[-2:])
        return T.concat([self.fuse(up), shallow], axis=1)


class Backbone(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg.validate()
        w0, w1, w2, w3 = cfg.widths
        self.stem = ConvBNReLU(2, w0, 3, rng, stride=cfg.stride // 2)
        self.stages = [
            ResidualBlock(w0, w0, rng),
            ResidualBlock(w0, w1, rng),
            ResidualBlock(w1, w2, rng),
            ResidualBlock(w2, w3, rng),
        ]
        self.ups = [
            SkipUp(w3, w2, rng),
            SkipUp(2 * w2, w1, rng),
            SkipUp(2 * w1, w0, rng),
        ]
        self.head = Conv2d(2 * w0, cfg.out_channels, 3, rng, bias=True)

    def forward(self, x):
        """Map N×2×H×W (or 2×H×W) pairs to N×C×(H/s)×(W/s) features."""
        unbatched = x.ndim == 3
        if unbatched:
            x = T.reshape(x, (1,) + tuple(x.shape))
        if x.ndim != 4 or x.shape[1] != 2:
            raise ValueError(f"expected 2-channel frame-pair input, got extents {x.shape}")
        self.cfg.check_input(*x.shape[-2:])
        feats = []
        y = self.stem(x)
        for stage in self.stages:
            y = stage(y)
            feats.append(y)
        y = feats[3]
        for up, shallow in zip(self.ups, (feats[2], feats[1], feats[0])):
            y = up(y, shallow)
        z = T.relu(self.head(y))
        return T.reshape(z, z.shape[1:]) if unbatched else z


def pair_input(current, previous):
    """Stack two H×W grids into the 2×H×W input; channel 0 is the detected frame."""
    return np.stack([np.asarray(current, dtype=np.float64), np.asarray(previous, dtype=np.float64)])
