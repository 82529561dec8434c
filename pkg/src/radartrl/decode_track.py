"""Heatmap decoding into oriented boxes and greedy centre-distance tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from .geometry import OrientedBox, oriented_nms
from .heads_losses import decode_angle

MIN_EXTENT = 1e-3


@dataclass(frozen=True)
class DecodeConfig:
    threshold: float = 0.3
    nms_thresh: float = 0.1
    k: float = 8.0        # association distance gate, pixels
    birth: float = 0.3    # confidence needed to start a track
    gap: int = 1          # frame gap used when tracking

    def validate(self):
        if not 0 <= self.threshold <= 1 or not 0 <= self.birth <= 1:
            raise ValueError("threshold and birth must lie in [0, 1]")
        if not 0 <= self.nms_thresh <= 1:
            raise ValueError("nms_thresh must lie in [0, 1]")
        if self.k < 0:
            raise ValueError("distance gate k must be >= 0")
        if self.gap < 1:
            raise ValueError("frame gap must be >= 1")
        return self


@dataclass(frozen=True)
class Detection:
    box: OrientedBox
    confidence: float
    offset: tuple = (0.0, 0.0)   # predicted displacement since the previous frame, pixels

    @property
    def center(self):
        return (self.box.cx, self.box.cy)


def find_peaks(heatmap, threshold):
    """Cells that are 3x3 local maxima and at least ``threshold``; (x, y, value) list."""
    hm = np.asarray(heatmap, dtype=np.float64)
    local = maximum_filter(hm, size=3, mode="constant", cval=-np.inf)
    ys, xs = np.nonzero((hm == local) & (hm >= threshold))
    return [(int(x), int(y), float(hm[y, x])) for y, x in zip(ys, xs)]


def decode_detections(maps, threshold=0.3, nms_thresh=0.1, s=4):
    """Detections for one frame from its head maps.

    ``maps`` holds ``heatmap`` (h×w) and 2×h×w ``box`` (w, l), ``orient``
    (sin, cos), ``offset`` and optionally ``track`` (in cells).
    """
    hm = maps["heatmap"]
    dets = []
    for x, y, v in find_peaks(hm, threshold):
        ox, oy = maps["offset"][:, y, x]
        bw, bl = maps["box"][:, y, x]
        sn, cs = maps["orient"][:, y, x]
        theta = decode_angle(sn, cs) if (sn or cs) else 0.0
        box = OrientedBox(s * (x + ox), s * (y + oy), max(float(bw), MIN_EXTENT),
                          max(float(bl), MIN_EXTENT), theta)
        trk = maps.get("track")
        off = (float(s * trk[0, y, x]), float(s * trk[1, y, x])) if trk is not None else (0.0, 0.0)
        dets.append(Detection(box, v, off))
    kept = oriented_nms([(d.box, d.confidence, d) for d in dets], nms_thresh) if dets else []
    out = [entry[2] for entry in kept]
    out.sort(key=lambda d: -d.confidence)
    return out


def encode_maps(boxes, grid_hw, s, confidence=1.0, offsets=None):
    """Head maps that decode exactly to ``boxes`` (inverse of decode_detections)."""
    from .heads_losses import center_cell

    h, w = grid_hw
    maps = {
        "heatmap": np.zeros((h, w)),
        "box": np.zeros((2, h, w)),
        "orient": np.zeros((2, h, w)),
        "offset": np.zeros((2, h, w)),
        "track": np.zeros((2, h, w)),
    }
    for i, b in enumerate(boxes):
        x, y = center_cell(b.cx, b.cy, s, grid_hw)
        maps["heatmap"][y, x] = confidence if np.isscalar(confidence) else confidence[i]
        maps["box"][:, y, x] = (b.w, b.l)
        t = math.radians(b.theta)
        maps["orient"][:, y, x] = (math.sin(t), math.cos(t))
        maps["offset"][:, y, x] = (b.cx / s - x, b.cy / s - y)
        if offsets is not None:
            maps["track"][:, y, x] = np.asarray(offsets[i]) / s
    return maps


# ---------------------------------------------------------------- tracking

@dataclass
class Track:
    center: tuple
    track_id: int
    detection: Detection = None


@dataclass
class TrackState:
    tracks: list = field(default_factory=list)
    next_id: int = 1
    k: float = 8.0
    birth: float = 0.3


def greedy_associate(state, detections):
    """Advance ``state`` by one frame of detections (sorted by confidence, descending).

    Each detection, in order, takes the nearest still-unmatched previous
    track when the offset-compensated distance is within ``k``; otherwise it
    starts a new track if its confidence reaches ``birth``.  Tracks left
    unmatched end here.  Tracks born in this frame are not matchable.
    """
    prev = sorted(state.tracks, key=lambda t: t.track_id)
    taken = set()
    out = []
    for det in detections:
        px = det.box.cx - det.offset[0]
        py = det.box.cy - det.offset[1]
        best, best_cost = None, math.inf
        for j, tr in enumerate(prev):
            if j in taken:
                continue
            cost = math.hypot(px - tr.center[0], py - tr.center[1])
            if cost < best_cost:
                best, best_cost = j, cost
        if best is not None and best_cost <= state.k:
            taken.add(best)
            out.append(Track(det.center, prev[best].track_id, det))
        elif det.confidence >= state.birth:
            out.append(Track(det.center, state.next_id, det))
            state.next_id += 1
    state.tracks = out
    return state


def track_detections(per_frame, k=8.0, birth=0.3):
    """Run the greedy tracker over pre-computed detections; per-frame [(box, id, conf)]."""
    state = TrackState(k=k, birth=birth)
    results = []
    for dets in per_frame:
        dets = sorted(dets, key=lambda d: -d.confidence)
        greedy_associate(state, dets)
        results.append([(t.detection.box, t.track_id, t.detection.confidence) for t in state.tracks])
    return results


def detect_sequence(frames, model, cfg, gap=None):
    """Model detections for every frame, each decoded against frame t − gap."""
    gap = cfg.gap if gap is None else gap
    s = model.stride
    model.eval()
    out = []
    for t, frame in enumerate(frames):
        prev = frames[max(t - gap, 0)]
        maps = model.dense_outputs(frame.intensity, prev.intensity)
        single = {k: v[0] for k, v in maps.items()}
        out.append(decode_detections(single, cfg.threshold, cfg.nms_thresh, s))
    return out


def run_tracker(frames, model, cfg):
    if not frames:
        return []
    return track_detections(detect_sequence(frames, model, cfg), cfg.k, cfg.birth)


# ---------------------------------------------------------------- track file

def write_tracks(path, per_frame, frame_indices=None):
    """One line per box: ``frame id cx cy w l theta confidence``."""
    lines = []
    for t, entries in enumerate(per_frame):
        f = t if frame_indices is None else frame_indices[t]
        for box, tid, conf in entries:
            lines.append(f"{f} {tid} {box.cx!r} {box.cy!r} {box.w!r} {box.l!r} {box.theta!r} {conf!r}")
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_tracks(path, n_frames=None):
    per = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        f, tid = int(parts[0]), int(parts[1])
        cx, cy, w, l, th, conf = (float(p) for p in parts[2:])
        per.setdefault(f, []).append((OrientedBox(cx, cy, w, l, th), tid, conf))
    n = n_frames if n_frames is not None else (max(per) + 1 if per else 0)
    return [per.get(t, []) for t in range(n)]
