"""Synthetic bird-eye-view radar sequences and their on-disk format.

Objects are oriented rectangles that keep their width and length for the
whole sequence.  Rendering blurs each object with a Gaussian whose width grows
with distance from the image centre (the ego position), then applies
multiplicative speckle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import OrientedBox, points_in_box


class DatasetError(ValueError):
    """Malformed dataset file; the message names the file and position."""


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    n_objects: tuple = (4, 7)          # inclusive range
    speed: tuple = (0.5, 2.0)          # pixels per frame
    turn_rate: tuple = (-3.0, 3.0)     # degrees per frame
    obj_width: tuple = (4.0, 7.0)
    obj_length: tuple = (9.0, 15.0)
    reflectivity: tuple = (0.5, 1.0)
    blur_sigma: float = 0.6
    speckle: float = 0.35
    range_gain: float = 0.04
    clutter: float = 0.0               # additive background noise level
    fade_prob: float = 0.0             # per-frame chance an object's echo fades
    fade_factor: float = 0.35
    n_frames: int = 20
    min_separation: float = 14.0
    seed: int = 0

    def validate(self):
        if self.height < 32 or self.width < 32:
            raise ValueError(f"image must be at least 32x32, got {self.height}x{self.width}")
        for name in ("n_objects", "speed", "turn_rate", "obj_width", "obj_length", "reflectivity"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: ({lo}, {hi})")
        if self.n_objects[0] < 0:
            raise ValueError("n_objects must be non-negative")
        if self.obj_width[0] <= 0 or self.obj_length[0] <= 0:
            raise ValueError("object extents must be positive")
        if not (0 < self.reflectivity[0] and self.reflectivity[1] <= 1):
            raise ValueError("reflectivity must lie in (0, 1]")
        if self.n_frames < 0 or self.blur_sigma < 0 or self.speckle < 0 or self.range_gain < 0:
            raise ValueError("frame count, blur, speckle and range gain must be non-negative")
        if not 0 <= self.fade_prob <= 1:
            raise ValueError("fade_prob must lie in [0, 1]")
        return self


@dataclass
class ObjectState:
    track_id: int
    box: OrientedBox
    velocity: tuple
    turn_rate: float
    reflectivity: float

    def step(self):
        """Advance one frame: rotate heading and velocity by the turn rate, then move."""
        vx, vy = self.velocity
        if self.turn_rate:
            r = math.radians(self.turn_rate)
            c, s = math.cos(r), math.sin(r)
            vx, vy = c * vx - s * vy, s * vx + c * vy
        b = self.box
        box = OrientedBox(b.cx + vx, b.cy + vy, b.w, b.l, b.theta + self.turn_rate)
        return replace(self, box=box, velocity=(vx, vy))


@dataclass
class RadarFrame:
    intensity: np.ndarray
    annotations: list = field(default_factory=list)   # [(track_id, OrientedBox)]
    index: int = 0
    sequence_id: str = "seq0000"

    def __eq__(self, other):
        if not isinstance(other, RadarFrame):
            return NotImplemented
        return (self.index == other.index and self.sequence_id == other.sequence_id
                and self.annotations == other.annotations
                and self.intensity.shape == other.intensity.shape
                and np.array_equal(self.intensity, other.intensity))

    @property
    def boxes(self):
        return [b for _, b in self.annotations]


def _inside(box, cfg):
    return 0 <= box.cx < cfg.width and 0 <= box.cy < cfg.height


def spawn_objects(cfg, rng):
    lo, hi = cfg.n_objects
    count = int(rng.integers(lo, hi + 1))
    margin = 6.0
    objects = []
    attempts = 0
    while len(objects) < count and attempts < 500:
        attempts += 1
        cx = rng.uniform(margin, cfg.width - margin)
        cy = rng.uniform(margin, cfg.height - margin)
        if any(math.hypot(cx - o.box.cx, cy - o.box.cy) < cfg.min_separation for o in objects):
            continue
        theta = rng.uniform(0.0, 360.0)
        w = rng.uniform(*cfg.obj_width)
        l = max(rng.uniform(*cfg.obj_length), w)
        speed = rng.uniform(*cfg.speed)
        t = math.radians(theta)
        objects.append(ObjectState(
            track_id=len(objects) + 1,
            box=OrientedBox(cx, cy, w, l, theta),
            velocity=(speed * math.cos(t), speed * math.sin(t)),
            turn_rate=float(rng.uniform(*cfg.turn_rate)),
            reflectivity=float(rng.uniform(*cfg.reflectivity)),
        ))
    return objects


def render_frame(objects, cfg, rng):
    """Intensity grid in [0, 1] for the given object states."""
    h, w = cfg.height, cfg.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w))
    ego_x, ego_y = (w - 1) / 2.0, (h - 1) / 2.0
    for obj in objects:
        refl = obj.reflectivity
        if cfg.fade_prob and rng.random() < cfg.fade_prob:
            refl *= cfg.fade_factor
        layer = points_in_box(obj.box, xs, ys) * refl
        sigma = cfg.blur_sigma + cfg.range_gain * math.hypot(obj.box.cx - ego_x, obj.box.cy - ego_y)
        if sigma > 0:
            layer = gaussian_filter(layer, sigma, mode="constant")
        img = np.maximum(img, layer)
    if cfg.speckle:
        img = img * np.maximum(0.0, 1.0 + cfg.speckle * rng.standard_normal((h, w)))
    if cfg.clutter:
        img = img + cfg.clutter * np.abs(rng.standard_normal((h, w)))
    return np.clip(img, 0.0, 1.0)


def simulate_sequence(cfg, seed=None, sequence_id="seq0000", objects=None):
    """Render ``cfg.n_frames`` frames; deterministic in (cfg, seed)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    live = spawn_objects(cfg, rng) if objects is None else list(objects)
    frames = []
    for t in range(cfg.n_frames):
        live = [o for o in live if _inside(o.box, cfg)]
        img = render_frame(live, cfg, rng)
        anns = [(o.track_id, o.box) for o in live]
        frames.append(RadarFrame(img, anns, t, sequence_id))
        live = [o.step() for o in live]
    return frames


def simulate_dataset(cfg, n_sequences, seed):
    """``n_sequences`` independent sequences, each seeded from one parent seed."""
    children = np.random.SeedSequence(seed).spawn(n_sequences)
    out = []
    for i, child in enumerate(children):
        s = int(child.generate_state(1)[0])
        out.append(simulate_sequence(cfg, seed=s, sequence_id=f"seq{i:04d}"))
    return out


# ---------------------------------------------------------------- on-disk format
#
# <dir>/manifest.txt                 sequence_id height width frames
# <dir>/frame_0000.bin               raw little-endian float64, row-major H*W
# <dir>/frame_0000.txt               "track_id cx cy w l theta" per line

def save_sequence(frames, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seq_id = frames[0].sequence_id if frames else directory.name
    h, w = frames[0].intensity.shape if frames else (0, 0)
    lines = [f"sequence_id={seq_id}", f"height={h}", f"width={w}", f"frames={len(frames)}"]
    lines += [f"frame={f.index}" for f in frames]
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
    for f in frames:
        (directory / f"frame_{f.index:04d}.bin").write_bytes(
            np.ascontiguousarray(f.intensity, dtype="<f8").tobytes())
        ann = "".join(
            f"{tid} {b.cx!r} {b.cy!r} {b.w!r} {b.l!r} {b.theta!r}\n" for tid, b in f.annotations)
        (directory / f"frame_{f.index:04d}.txt").write_text(ann)


def _read_manifest(path):
    if not path.exists():
        raise DatasetError(f"{path}: missing manifest")
    meta, frames = {}, []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"{path}:{lineno}: expected key=value, got {line!r}")
        if key == "frame":
            try:
                frames.append(int(value))
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: bad frame index {value!r}") from None
        else:
            meta[key.strip()] = value.strip()
    for key in ("sequence_id", "height", "width", "frames"):
        if key not in meta:
            raise DatasetError(f"{path}: manifest lacks {key}")
    try:
        h, w, n = int(meta["height"]), int(meta["width"]), int(meta["frames"])
    except ValueError as exc:
        raise DatasetError(f"{path}: non-integer extent ({exc})") from None
    if n != len(frames):
        raise DatasetError(f"{path}: frames={n} but {len(frames)} frame lines listed")
    return meta["sequence_id"], h, w, frames


def _read_annotations(path):
    anns = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DatasetError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            tid = int(parts[0])
            cx, cy, bw, bl, th = (float(p) for p in parts[1:])
            anns.append((tid, OrientedBox(cx, cy, bw, bl, th)))
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return anns


def load_sequence(directory):
    directory = Path(directory)
    seq_id, h, w, indices = _read_manifest(directory / "manifest.txt")
    frames = []
    for idx in indices:
        grid_path = directory / f"frame_{idx:04d}.bin"
        if not grid_path.exists():
            raise DatasetError(f"{grid_path}: missing intensity file")
        raw = grid_path.read_bytes()
        if len(raw) != 8 * h * w:
            raise DatasetError(
                f"{grid_path}: expected {8 * h * w} bytes, file ends at offset {len(raw)}")
        grid = np.frombuffer(raw, dtype="<f8").reshape(h, w).astype(np.float64)
        ann_path = directory / f"frame_{idx:04d}.txt"
        if not ann_path.exists():
            raise DatasetError(f"{ann_path}: missing annotation file")
        frames.append(RadarFrame(grid, _read_annotations(ann_path), idx, seq_id))
    return frames


def save_dataset(sequences, directory, seed=None):
    """Write each sequence to its own subdirectory plus a top-level index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for frames in sequences:
        name = frames[0].sequence_id if frames else f"seq{len(names):04d}"
        save_sequence(frames, directory / name)
        names.append(name)
    lines = [f"sequences={len(names)}"]
    if seed is not None:
        lines.append(f"seed={seed}")
    lines += [f"sequence={n}" for n in names]
    (directory / "dataset.txt").write_text("\n".join(lines) + "\n")


def load_dataset(directory):
    directory = Path(directory)
    index = directory / "dataset.txt"
    if not index.exists():
        raise DatasetError(f"{index}: missing dataset index")
    names = []
    for lineno, line in enumerate(index.read_text().splitlines(), 1):
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"{index}:{lineno}: expected key=value, got {line!r}")
        if key == "sequence":
            names.append(value)
    return [load_sequence(directory / n) for n in names]
