"""Flat ``key=value`` run configuration shared by every command."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import BackboneConfig
from .decode_track import DecodeConfig
from .heads_losses import LossWeights
from .model import ModelConfig
from .relational import RelationalConfig
from .scene_sim import SceneConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # simulation
    sequences: int = 30
    frames: int = 20
    height: int = 64
    width: int = 64
    objects_min: int = 4
    objects_max: int = 7
    speed_min: float = 0.5
    speed_max: float = 2.0
    blur_sigma: float = 0.6
    speckle: float = 0.35
    range_gain: float = 0.04
    clutter: float = 0.0
    fade_prob: float = 0.0
    # model
    widths: tuple = (16, 32, 64, 128)
    stride: int = 4
    channels: int = 64
    head_hidden: int = 32
    k: int = 8
    d_pos: int = 64
    layers: int = 2
    heads: int = 4
    ff_hidden: int = 128
    mask_value: float = -1e10
    use_trl: bool = True
    tracking: bool = False
    # optimisation
    epochs: int = 5
    batch_size: int = 8
    lr: float = 5e-4
    wd: float = 1e-2
    gap: int = 3
    track_gap: int = 1
    train_fraction: float = 0.8
    max_steps: int = 0          # 0 = no cap
    w_hm: float = 1.0
    w_pre: float = 1.0
    w_box: float = 0.1
    w_orient: float = 1.0
    w_offset: float = 1.0
    w_track: float = 1.0
    # decoding
    threshold: float = 0.3
    map_threshold: float = 0.05   # low cut-off so the AP sweep sees the full PR curve
    nms_thresh: float = 0.1
    track_k: float = 8.0
    birth: float = 0.3
    oracle_motion: bool = True    # --oracle tracking feeds true motion as the tracking offset
    # paths
    data: str = "data"
    checkpoint: str = ""          # empty = <out>/model.ckpt
    out: str = "out"

    # ------------------------------------------------------------ text format

    @classmethod
    def from_text(cls, text, origin="<config>"):
        cfg = cls()
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw!r}")
            values[key.strip()] = value.strip()
        return cfg.updated(values, origin)

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_text(path.read_text(), str(path))

    def updated(self, values, origin="<override>"):
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"{origin}: unknown config key {key!r}")
            default = getattr(RunConfig, key, None)
            changes[key] = _parse(key, value, default, origin)
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    # ------------------------------------------------------------ module configs

    def scene_config(self):
        return SceneConfig(
            height=self.height, width=self.width,
            n_objects=(self.objects_min, self.objects_max),
            speed=(self.speed_min, self.speed_max),
            blur_sigma=self.blur_sigma, speckle=self.speckle, range_gain=self.range_gain,
            clutter=self.clutter, fade_prob=self.fade_prob,
            n_frames=self.frames, seed=self.seed,
        )

    def model_config(self):
        return ModelConfig(
            backbone=BackboneConfig(tuple(self.widths), self.stride, self.channels),
            relational=RelationalConfig(self.k, self.d_pos, self.layers, self.heads,
                                        self.mask_value, self.ff_hidden),
            use_trl=self.use_trl, tracking=self.tracking, head_hidden=self.head_hidden,
        )

    def decode_config(self):
        return DecodeConfig(self.threshold, self.nms_thresh, self.track_k, self.birth, self.track_gap)

    def map_decode_config(self):
        return DecodeConfig(self.map_threshold, self.nms_thresh, self.track_k, self.birth, self.track_gap)

    def checkpoint_path(self):
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "model.ckpt"

    def loss_weights(self):
        return LossWeights(self.w_hm, self.w_pre, self.w_box, self.w_orient, self.w_offset, self.w_track)

    def validate(self):
        """Check every module's constraints; raises ConfigError on the first violation."""
        try:
            self.scene_config().validate()
            mc = self.model_config().validate()
            mc.backbone.check_input(self.height, self.width)
            grid = (self.height // self.stride) * (self.width // self.stride)
            if self.k > grid:
                raise ValueError(f"K={self.k} exceeds the {grid} feature-grid cells")
            self.decode_config().validate()
            self.loss_weights().validate()
            if self.sequences < 0 or self.frames < 0:
                raise ValueError("sequence and frame counts must be >= 0")
            if self.epochs < 0 or self.batch_size < 1 or self.max_steps < 0:
                raise ValueError("epochs >= 0, batch_size >= 1 and max_steps >= 0 required")
            if self.gap < 1 or self.track_gap < 1:
                raise ValueError("frame gaps must be >= 1")
            if not 0 < self.train_fraction <= 1:
                raise ValueError("train_fraction must lie in (0, 1]")
            if not 0 <= self.map_threshold <= 1:
                raise ValueError("map_threshold must lie in [0, 1]")
            if self.lr <= 0 or self.wd < 0:
                raise ValueError("lr must be > 0 and wd >= 0")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        return self


def _parse(key, value, default, origin):
    try:
        if isinstance(default, bool):
            low = str(value).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            items = value if isinstance(value, (tuple, list)) else str(value).split(",")
            return tuple(int(x) for x in items)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: bad value for {key}: {exc}") from None
