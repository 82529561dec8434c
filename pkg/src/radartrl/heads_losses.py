"""Ground-truth encoding, training objectives and the bi-directional step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

PRED_EPS = 1e-7


class NonFiniteLoss(RuntimeError):
    def __init__(self, component, value):
        super().__init__(f"non-finite loss component {component!r}: {value}")
        self.component = component


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def center_cell(cx, cy, s, grid_hw):
    """Heatmap cell (x, y) holding a pixel-space centre, clamped into the grid."""
    h, w = grid_hw
    x = int(min(max(round_half_away(cx / s), 0), w - 1))
    y = int(min(max(round_half_away(cy / s), 0), h - 1))
    return x, y


def offset_target(center, s):
    """Sub-cell residual (cx/s − [cx/s], cy/s − [cy/s]) with [·] rounding half away from zero."""
    c = np.asarray(center, dtype=np.float64) / s
    return c - round_half_away(c)


def kernel_sigma(box, s, kappa=1.0 / 6.0, sigma_min=1.0):
    return max(sigma_min, kappa * min(box.w, box.l) / s)


def make_gt_heatmap(annotations, grid_hw, s, kappa=1.0 / 6.0, sigma_min=1.0):
    """Max-combined Gaussian bumps, exactly 1 at each object's centre cell."""
    h, w = grid_hw
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    hm = np.zeros((h, w))
    for ann in annotations:
        box = ann[1] if isinstance(ann, tuple) else ann
        sig = kernel_sigma(box, s, kappa, sigma_min)
        d2 = (xs - box.cx / s) ** 2 + (ys - box.cy / s) ** 2
        hm = np.maximum(hm, np.exp(-d2 / (2.0 * sig * sig)))
    for ann in annotations:
        box = ann[1] if isinstance(ann, tuple) else ann
        x, y = center_cell(box.cx, box.cy, s, grid_hw)
        hm[y, x] = 1.0
    return hm


def angle_target(theta_deg):
    t = math.radians(theta_deg)
    return (math.sin(t), math.cos(t))


def decode_angle(sin_v, cos_v):
    """Orientation in degrees, [0, 360), from predicted sine and cosine."""
    if sin_v == 0 and cos_v == 0:
        raise ValueError("cannot decode an angle from (0, 0)")
    deg = math.degrees(math.atan2(sin_v, cos_v)) % 360.0
    return 0.0 if deg >= 360.0 else deg


@dataclass
class TargetBundle:
    heatmap: np.ndarray                 # h×w
    cells: np.ndarray                   # M×2 (x, y)
    box: np.ndarray                     # M×2 (w, l)
    angle: np.ndarray                   # M×2 (sin, cos)
    offset: np.ndarray                  # M×2
    track_ids: np.ndarray               # M
    track_offset: np.ndarray            # M×2, (this − partner)/s
    track_mask: np.ndarray              # M, partner frame shares the id

    @property
    def count(self):
        return len(self.cells)


def encode_targets(annotations, grid_hw, s, partner=None):
    """Targets for one frame; ``partner`` annotations supply tracking offsets."""
    m = len(annotations)
    cells = np.zeros((m, 2), dtype=np.int64)
    box = np.zeros((m, 2))
    ang = np.zeros((m, 2))
    off = np.zeros((m, 2))
    tids = np.zeros(m, dtype=np.int64)
    trk = np.zeros((m, 2))
    tmask = np.zeros(m, dtype=bool)
    other = {tid: b for tid, b in (partner or [])}
    for i, (tid, b) in enumerate(annotations):
        cells[i] = center_cell(b.cx, b.cy, s, grid_hw)
        box[i] = (b.w, b.l)
        ang[i] = angle_target(b.theta)
        off[i] = np.array([b.cx, b.cy]) / s - cells[i]
        tids[i] = tid
        if tid in other:
            p = other[tid]
            trk[i] = ((b.cx - p.cx) / s, (b.cy - p.cy) / s)
            tmask[i] = True
    return TargetBundle(make_gt_heatmap(annotations, grid_hw, s), cells, box, ang, off, tids, trk, tmask)


# ---------------------------------------------------------------- losses

def focal_loss(pred, target, alpha=2.0, beta=4.0, eps=PRED_EPS):
    """Penalty-reduced pixel focal loss averaged over all N cells."""
    target = np.asarray(target, dtype=np.float64)
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    if pred.shape != target.shape:
        raise T.ShapeError("focal_loss", f"prediction {pred.shape} vs target {target.shape}")
    p = T.clip(pred, eps, 1.0 - eps)
    pos = (target == 1.0).astype(np.float64)
    neg_w = (1.0 - pos) * (1.0 - target) ** beta
    pos_term = T.power(1.0 - p, alpha) * T.log(p) * pos
    neg_term = T.power(p, alpha) * T.log(1.0 - p) * neg_w
    return -(pos_term + neg_term).sum() * (1.0 / target.size)


def smooth_l1(x):
    return T.smooth_l1(x)


def regression_loss(pred_rows, target_rows, weights=None):
    """Σ weights · smooth_l1(‖pred − target‖); plain mean when weights is None."""
    target_rows = np.asarray(target_rows, dtype=np.float64)
    m = target_rows.shape[0]
    if m == 0:
        return Tensor(0.0)
    per = T.smooth_l1(T.row_norm(pred_rows - target_rows))
    if weights is None:
        return per.sum() * (1.0 / m)
    return (per * np.asarray(weights, dtype=np.float64)).sum()


def _frame_rows(z, cells):
    """Feature rows of a single C×h×w map at integer (x, y) cells."""
    return T.gather_at(z, cells)


def box_loss(z, cells, box_targets, head):
    if len(cells) == 0:
        return Tensor(0.0)
    return regression_loss(head(_frame_rows(z, cells)), box_targets)


def orientation_loss(z, cells, angles_deg, head):
    if len(cells) == 0:
        return Tensor(0.0)
    return regression_loss(head(_frame_rows(z, cells)), [angle_target(a) for a in angles_deg])


def offset_loss(z, cells, offsets, head):
    if len(cells) == 0:
        return Tensor(0.0)
    return regression_loss(head(_frame_rows(z, cells)), offsets)


def tracking_offset_loss(z, cells, track_offsets, head):
    if len(cells) == 0:
        return Tensor(0.0)
    return regression_loss(head(_frame_rows(z, cells)), track_offsets)


@dataclass(frozen=True)
class LossWeights:
    hm: float = 1.0
    pre: float = 1.0
    box: float = 0.1
    orient: float = 1.0
    offset: float = 1.0
    track: float = 1.0

    def validate(self):
        for k, v in vars(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {k} must be finite and >= 0, got {v}")
        return self


COMPONENTS = ("hm", "pre", "box", "orient", "offset", "track")


def total_loss(components, weights, tracking=False):
    """Weighted sum of the loss components (tracking term only in tracking mode)."""
    total = None
    for name in COMPONENTS:
        if name == "track" and not tracking:
            continue
        if name not in components:
            continue
        term = components[name] * getattr(weights, name)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


# ---------------------------------------------------------------- training step

@dataclass
class LossRecord:
    step: int
    components: dict = field(default_factory=dict)
    total: float = 0.0

    def line(self):
        parts = [f"step={self.step}"] + [f"{k}={v:.6f}" for k, v in self.components.items()]
        return " ".join(parts + [f"total={self.total:.6f}"])


def pair_targets(pairs, grid_hw, s):
    """Targets for the 2N rows of a batch: current frames first, then previous."""
    cur = [encode_targets(c.annotations, grid_hw, s, partner=p.annotations) for c, p in pairs]
    prev = [encode_targets(p.annotations, grid_hw, s, partner=c.annotations) for c, p in pairs]
    return cur + prev


def batch_losses(model, out, targets):
    """All loss components for a forward output over 2N frames."""
    z = out["z"]
    n2, c, h, w = z.shape
    hm_t = np.stack([t.heatmap for t in targets])[:, None]
    comps = {
        "hm": focal_loss(out["heatmap"], hm_t),
        "pre": focal_loss(out["pre_heatmap"], hm_t),
    }
    flat_idx, weights, trk_w = [], [], []
    counted = [t for t in targets if t.count]
    per_frame = 1.0 / max(len(counted), 1)
    n_trk_frames = sum(1 for t in targets if t.track_mask.any())
    for f, t in enumerate(targets):
        if not t.count:
            continue
        flat_idx.append(f * h * w + t.cells[:, 1] * w + t.cells[:, 0])
        weights.append(np.full(t.count, per_frame / t.count))
        k = t.track_mask.sum()
        trk_w.append(np.where(t.track_mask, 1.0 / (max(k, 1) * max(n_trk_frames, 1)), 0.0))
    if not flat_idx:
        zero = Tensor(0.0)
        comps.update(box=zero, orient=zero, offset=zero)
        if model.track is not None:
            comps["track"] = zero
        return comps
    idx = np.concatenate(flat_idx)
    wts = np.concatenate(weights)
    rows = T.reshape(T.transpose(z, (0, 2, 3, 1)), (n2 * h * w, c))[idx]
    cat = lambda name: np.concatenate([getattr(t, name) for t in targets if t.count])
    comps["box"] = regression_loss(model.box(rows), cat("box"), wts)
    comps["orient"] = regression_loss(model.orient(rows), cat("angle"), wts)
    comps["offset"] = regression_loss(model.offset(rows), cat("offset"), wts)
    if model.track is not None:
        comps["track"] = regression_loss(model.track(rows), cat("track_offset"), np.concatenate(trk_w))
    return comps


def bidirectional_train_step(model, optimizer, pairs, weights=LossWeights(), step=0):
    """One forward over both concatenation orders, one backward, one Adam update.

    ``pairs`` is a list of (current RadarFrame, previous RadarFrame).
    """
    model.train()
    s = model.stride
    grid = (pairs[0][0].intensity.shape[0] // s, pairs[0][0].intensity.shape[1] // s)
    out = model.forward(np.stack([c.intensity for c, _ in pairs]),
                        np.stack([p.intensity for _, p in pairs]))
    comps = batch_losses(model, out, pair_targets(pairs, grid, s))
    tracking = model.track is not None
    for name, value in comps.items():
        if not np.isfinite(value.data).all():
            raise NonFiniteLoss(name, float(value.data))
    loss = total_loss(comps, weights, tracking=tracking)
    if not np.isfinite(loss.data).all():
        raise NonFiniteLoss("total", float(loss.data))
    optimizer.zero_grad()
    T.backprop(loss)
    optimizer.step()
    record = {k: float(v.data) for k, v in comps.items() if k != "track" or tracking}
    return LossRecord(step, record, float(loss.data))
