"""Detector assembly: shared backbone, optional relational block, prediction heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig
from .nn import Linear, Module, load_checkpoint, save_checkpoint
from .relational import HeatmapHead, RelationalBlock, RelationalConfig
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    relational: RelationalConfig = field(default_factory=RelationalConfig)
    use_trl: bool = True
    tracking: bool = False
    head_hidden: int = 32
    box_prior: tuple = (5.5, 12.0)   # typical (w, l) in pixels; initial box-head output

    def validate(self):
        self.backbone.validate()
        self.relational.validate(self.backbone.out_channels)
        if self.head_hidden < 1:
            raise ValueError("head_hidden must be positive")
        return self


class VectorHead(Module):
    """Linear map C -> 2 applied to feature vectors: out = scale · (W z + b)."""

    def __init__(self, channels, rng, scale=1.0, prior=(0.0, 0.0)):
        self.lin = Linear(channels, 2, rng, scale=0.01)
        self.lin.bias.data[:] = np.asarray(prior, dtype=np.float64) / scale
        self.scale = scale

    def forward(self, rows):
        return self.lin(rows) * self.scale

    def dense(self, z):
        """Evaluate at every cell of an N×C×h×w map -> N×2×h×w."""
        n, c, h, w = z.shape
        rows = T.reshape(T.transpose(z, (0, 2, 3, 1)), (n * h * w, c))
        out = self.forward(rows)
        return T.transpose(T.reshape(out, (n, h, w, 2)), (0, 3, 1, 2))


class Detector(Module):
    def __init__(self, cfg, seed=0):
        self.cfg = cfg.validate()
        rng = np.random.default_rng(seed)
        c = cfg.backbone.out_channels
        s = cfg.backbone.stride
        self.backbone = Backbone(cfg.backbone, rng)
        self.relational = RelationalBlock(c, cfg.relational, rng, cfg.head_hidden)
        self.heatmap = HeatmapHead(c, cfg.head_hidden, rng)
        self.box = VectorHead(c, rng, scale=float(s), prior=cfg.box_prior)
        self.orient = VectorHead(c, rng)
        self.offset = VectorHead(c, rng)
        self.track = VectorHead(c, rng) if cfg.tracking else None
        if not cfg.use_trl:
            # ablation keeps the pre-heatmap head (and its loss) but skips attention
            self.relational.layers = []

    @property
    def stride(self):
        return self.cfg.backbone.stride

    def forward(self, current, previous):
        """Run both concatenation orders of a batch of frame pairs.

        ``current`` and ``previous`` are N×H×W arrays.  Returns a dict with
        refined maps ``z`` (2N×C×h×w, current-order rows first), ``heatmap``
        (2N×1×h×w), ``pre_heatmap`` and the candidate coordinates.
        """
        cur = np.asarray(current, dtype=np.float64)
        prev = np.asarray(previous, dtype=np.float64)
        if cur.ndim == 2:
            cur, prev = cur[None], prev[None]
        x = Tensor(np.concatenate([np.stack([cur, prev], axis=1),
                                   np.stack([prev, cur], axis=1)], axis=0))
        n = cur.shape[0]
        z = self.backbone(x)
        z_c, z_p, info = self.relational(z[:n], z[n:])
        z = T.concat([z_c, z_p], axis=0)
        return {
            "z": z,
            "heatmap": self.heatmap(z),
            "pre_heatmap": info["pre_heatmap"],
            "coords_c": info["coords_c"],
            "coords_p": info["coords_p"],
            "n": n,
        }

    def dense_outputs(self, current, previous):
        """Inference maps for the detected (current) frames only, as numpy arrays."""
        with T.no_grad():
            out = self.forward(current, previous)
            n = out["n"]
            z = out["z"][:n]
            maps = {
                "heatmap": out["heatmap"].data[:n, 0],
                "box": self.box.dense(z).data,
                "orient": self.orient.dense(z).data,
                "offset": self.offset.dense(z).data,
            }
            if self.track is not None:
                maps["track"] = self.track.dense(z).data
        return maps

    # ------------------------------------------------------------ checkpoints

    def arrays(self):
        return self.state_dict()

    def save(self, path, extra=None):
        arrays = dict(self.state_dict())
        if extra:
            arrays.update(extra)
        save_checkpoint(path, arrays)

    def load(self, path):
        arrays = load_checkpoint(path)
        self.load_state_dict(arrays)
        return arrays
