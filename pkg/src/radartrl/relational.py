"""Top-K candidate selection and masked cross-frame attention.

The attention input stacks K candidate feature vectors from the detected
frame on top of K from its partner frame.  The additive mask forbids
attention between two different candidates of the same frame, leaving
cross-frame pairs and each candidate's attention to itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor

HEATMAP_PRIOR_BIAS = -math.log((1 - 0.1) / 0.1)


@dataclass(frozen=True)
class RelationalConfig:
    k: int = 8
    d_pos: int = 64
    layers: int = 2
    heads: int = 4
    mask_value: float = -1e10
    ff_hidden: int = 128

    def validate(self, channels):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if self.layers < 0:
            raise ValueError(f"layer count must be >= 0, got {self.layers}")
        if self.heads < 1 or (channels + self.d_pos) % self.heads or channels % self.heads:
            raise ValueError(
                f"{self.heads} heads must divide both C+D_pos={channels + self.d_pos} and C={channels}")
        if self.mask_value >= 0:
            raise ValueError("mask value must be negative")
        return self


class HeatmapHead(Module):
    """conv3x3 -> ReLU -> conv1x1 -> sigmoid, producing N×1×h×w scores."""

    def __init__(self, c_in, hidden, rng):
        self.conv1 = Conv2d(c_in, hidden, 3, rng)
        self.conv2 = Conv2d(hidden, 1, 1, rng, padding=0, init_bias=HEATMAP_PRIOR_BIAS)
        self.conv2.weight.data *= 0.1

    def forward(self, z):
        return T.sigmoid(self.conv2(T.relu(self.conv1(z))))


def select_topk(scores, k):
    """(x, y) coordinates of the k largest scores; ties go to the earlier row-major cell.

    ``scores`` may be h×w, 1×h×w, or batched N×1×h×w (returns N×k×2).
    """
    s = np.asarray(scores.data if isinstance(scores, Tensor) else scores)
    if s.ndim == 4:
        return np.stack([select_topk(m, k) for m in s])
    if s.ndim == 3:
        s = s[0]
    h, w = s.shape
    if k > h * w:
        raise ValueError(f"K={k} exceeds the {h * w} grid cells")
    order = np.argsort(-s.reshape(-1), kind="stable")[:k]
    return np.stack([order % w, order // w], axis=1)


def build_mask(k, mask_value=-1e10):
    """mask_value · (blockdiag(1_KxK, 1_KxK) − I_2K)."""
    block = np.zeros((2 * k, 2 * k))
    block[:k, :k] = 1.0
    block[k:, k:] = 1.0
    return mask_value * (block - np.eye(2 * k))


class PositionalEncoding(Module):
    """Learned affine map of normalised (x, y) grid coordinates."""

    def __init__(self, d_pos, rng):
        self.proj = Linear(2, d_pos, rng)

    @staticmethod
    def normalize(coords, grid_hw):
        h, w = grid_hw
        coords = np.asarray(coords, dtype=np.float64)
        return np.stack([coords[..., 0] / max(w - 1, 1), coords[..., 1] / max(h - 1, 1)], axis=-1)

    def forward(self, coords, grid_hw):
        return self.proj(Tensor(self.normalize(coords, grid_hw)))


def positional_encoding(coords, grid_hw, params):
    return params(coords, grid_hw)


class TemporalAttentionLayer(Module):
    """Masked multi-head attention plus a feed-forward block, post-norm residual."""

    def __init__(self, channels, cfg, rng):
        self.channels = channels
        self.heads = cfg.heads
        wide = channels + cfg.d_pos
        self.query = Linear(wide, wide, rng)
        self.key = Linear(wide, wide, rng)
        self.value = Linear(channels, channels, rng)
        self.out = Linear(channels, channels, rng)
        self.norm1 = LayerNorm(channels)
        self.ff1 = Linear(channels, cfg.ff_hidden, rng, scale=math.sqrt(2.0 / channels))
        self.ff2 = Linear(cfg.ff_hidden, channels, rng)
        self.norm2 = LayerNorm(channels)
        self.last_attention = None

    def _split(self, x):
        n, r, d = x.shape
        return T.transpose(T.reshape(x, (n, r, self.heads, d // self.heads)), (0, 2, 1, 3))

    def attention(self, feats, pos_enc, mask):
        """Attention weights (N×heads×2K×2K) and the projected attention output."""
        with_pos = T.concat([feats, pos_enc], axis=-1)
        q = self._split(self.query(with_pos))
        k = self._split(self.key(with_pos))
        v = self._split(self.value(feats))
        dq = q.shape[-1]
        logits = (T.matmul(q, T.transpose(k, (0, 1, 3, 2))) + mask) * (1.0 / math.sqrt(dq))
        weights = T.softmax(logits)
        ctx = T.transpose(T.matmul(weights, v), (0, 2, 1, 3))
        n, r = feats.shape[:2]
        return weights, self.out(T.reshape(ctx, (n, r, self.channels)))

    def forward(self, feats, pos_enc, mask):
        unbatched = feats.ndim == 2
        if unbatched:
            feats = T.reshape(feats, (1,) + feats.shape)
            pos_enc = T.reshape(pos_enc, (1,) + pos_enc.shape)
        weights, attended = self.attention(feats, pos_enc, mask)
        self.last_attention = weights.data
        h = self.norm1(feats + attended)
        out = self.norm2(h + self.ff2(T.relu(self.ff1(h))))
        return T.reshape(out, out.shape[1:]) if unbatched else out


class RelationalBlock(Module):
    def __init__(self, channels, cfg, rng, head_hidden=32):
        self.cfg = cfg.validate(channels)
        self.pre_heatmap = HeatmapHead(channels, head_hidden, rng)
        self.pos = PositionalEncoding(cfg.d_pos, rng)
        self.layers = [TemporalAttentionLayer(channels, cfg, rng) for _ in range(cfg.layers)]
        self.mask = build_mask(cfg.k, cfg.mask_value)

    def forward(self, z_c, z_p):
        """Refine top-K candidates of both frames; returns (z_c', z_p', info).

        ``info`` carries the pre-heatmaps and selected coordinates.
        """
        n = z_c.shape[0]
        pre = self.pre_heatmap(T.concat([z_c, z_p], axis=0))
        info = {"pre_heatmap": pre}
        if not self.layers:
            info["coords_c"] = info["coords_p"] = None
            return z_c, z_p, info
        k = self.cfg.k
        grid = z_c.shape[-2:]
        coords = select_topk(pre.data, k)
        coords_c, coords_p = coords[:n], coords[n:]
        info["coords_c"], info["coords_p"] = coords_c, coords_p
        h = T.concat([T.gather_at(z_c, coords_c), T.gather_at(z_p, coords_p)], axis=1)
        pos = self.pos(np.concatenate([coords_c, coords_p], axis=1), grid)
        for layer in self.layers:
            h = layer(h, pos, self.mask)
        z_c = T.scatter_at(z_c, coords_c, h[:, :k])
        z_p = T.scatter_at(z_p, coords_p, h[:, k:])
        return z_c, z_p, info


def relational_block(z_c, z_p, params):
    return params(z_c, z_p)
