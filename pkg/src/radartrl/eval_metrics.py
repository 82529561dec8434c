"""Rotated-IoU average precision and CLEAR-MOT tracking metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import rotated_iou

MAP_THRESHOLDS = (0.3, 0.5, 0.7)


def _det_box(d):
    return d.box if hasattr(d, "box") else d[0]


def _det_conf(d):
    return d.confidence if hasattr(d, "confidence") else d[1]


def match_frame(dets, gts, iou_thresh):
    """True-positive flags for one frame's detections, taken in confidence order.

    Each detection claims the unmatched ground truth with the highest IoU; it
    is a hit when that IoU reaches ``iou_thresh``.
    """
    used = [False] * len(gts)
    flags = []
    for d in dets:
        best, best_iou = -1, 0.0
        for j, g in enumerate(gts):
            if used[j]:
                continue
            iou = rotated_iou(_det_box(d), g)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= iou_thresh:
            used[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def precision_recall(dets_per_frame, gts_per_frame, iou_thresh):
    """Cumulative (precision, recall) arrays of the global confidence sweep."""
    n_gt = sum(len(g) for g in gts_per_frame)
    entries = []
    for f, dets in enumerate(dets_per_frame):
        for i, d in enumerate(dets):
            b = _det_box(d)
            entries.append((-_det_conf(d), f, b.cx, b.cy, b.w, b.l, b.theta, i))
    entries.sort()
    # per-frame greedy matching must respect the global confidence order
    order_by_frame = {}
    for e in entries:
        order_by_frame.setdefault(e[1], []).append(e[-1])
    hit = {}
    for f, idxs in order_by_frame.items():
        flags = match_frame([dets_per_frame[f][i] for i in idxs], gts_per_frame[f], iou_thresh)
        for i, flag in zip(idxs, flags):
            hit[(f, i)] = flag
    tp = np.array([hit[(e[1], e[-1])] for e in entries], dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    precision = ctp / np.maximum(ctp + cfp, 1e-300)
    recall = ctp / n_gt if n_gt else np.zeros_like(ctp)
    return precision, recall


def ap_from_pr(precision, recall):
    """All-point interpolated area under the precision-recall curve."""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(dets_per_frame, gts_per_frame, iou_thresh):
    """AP over a dataset; ``None`` when there are no ground truths at all."""
    if sum(len(g) for g in gts_per_frame) == 0:
        return None
    p, r = precision_recall(dets_per_frame, gts_per_frame, iou_thresh)
    if len(p) == 0:
        return 0.0
    return ap_from_pr(p, r)


def mean_average_precision(dets_per_frame, gts_per_frame, thresholds=MAP_THRESHOLDS):
    """{"mAP@0.3": ..., ...}; single-class, so mAP equals AP."""
    return {f"mAP@{t}": average_precision(dets_per_frame, gts_per_frame, t) for t in thresholds}


# ---------------------------------------------------------------- CLEAR-MOT

def mota(fn, fp, idsw, n_gt):
    return 1.0 - (fn + fp + idsw) / n_gt


@dataclass
class MotMetrics:
    mota: float
    motp: float
    idsw: int
    frag: int
    mt: int
    pt: int
    fn: int
    fp: int
    gt: int
    matches: int

    def as_dict(self):
        return dict(vars(self))


@dataclass
class MotAccumulator:
    iou_thresh: float = 0.5
    fn: list = field(default_factory=list)
    fp: list = field(default_factory=list)
    idsw: list = field(default_factory=list)
    gt: list = field(default_factory=list)
    iou_sum: float = 0.0
    iou_count: int = 0
    frag: int = 0
    _last_id: dict = field(default_factory=dict)      # gt id -> last matched predicted id
    _prev_match: dict = field(default_factory=dict)   # gt id -> pred id matched in the previous frame
    _was_tracked: dict = field(default_factory=dict)  # gt id -> matched at its previous appearance
    _present: dict = field(default_factory=dict)
    _tracked: dict = field(default_factory=dict)

    def update(self, gts, preds):
        """``gts``: [(gt_id, box)]; ``preds``: [(box, pred_id, ...)]."""
        pred_by_id = {p[1]: i for i, p in enumerate(preds)}
        matched_gt, matched_pred = {}, set()
        # keep last frame's correspondences that still overlap enough
        for g, (gid, gbox) in enumerate(gts):
            pid = self._prev_match.get(gid)
            if pid is None or pid not in pred_by_id:
                continue
            i = pred_by_id[pid]
            if i in matched_pred:
                continue
            iou = rotated_iou(gbox, preds[i][0])
            if iou >= self.iou_thresh:
                matched_gt[g] = (i, iou)
                matched_pred.add(i)
        pairs = []
        for g, (gid, gbox) in enumerate(gts):
            if g in matched_gt:
                continue
            for i, p in enumerate(preds):
                if i in matched_pred:
                    continue
                iou = rotated_iou(gbox, p[0])
                if iou >= self.iou_thresh:
                    pairs.append((-iou, g, i))
        pairs.sort()
        for neg_iou, g, i in pairs:
            if g in matched_gt or i in matched_pred:
                continue
            matched_gt[g] = (i, -neg_iou)
            matched_pred.add(i)

        switches = 0
        new_prev = {}
        for g, (gid, _) in enumerate(gts):
            self._present[gid] = self._present.get(gid, 0) + 1
            if g in matched_gt:
                i, iou = matched_gt[g]
                pid = preds[i][1]
                if gid in self._last_id and self._last_id[gid] != pid:
                    switches += 1
                self._last_id[gid] = pid
                new_prev[gid] = pid
                self.iou_sum += iou
                self.iou_count += 1
                self._tracked[gid] = self._tracked.get(gid, 0) + 1
                self._was_tracked[gid] = True
            else:
                if self._was_tracked.get(gid):
                    self.frag += 1
                self._was_tracked[gid] = False
        self._prev_match = new_prev
        self.fn.append(len(gts) - len(matched_gt))
        self.fp.append(len(preds) - len(matched_pred))
        self.idsw.append(switches)
        self.gt.append(len(gts))

    def summary(self):
        n_gt = sum(self.gt)
        fn, fp, sw = sum(self.fn), sum(self.fp), sum(self.idsw)
        mt = pt = 0
        for gid, n in self._present.items():
            ratio = self._tracked.get(gid, 0) / n
            if ratio >= 0.8:
                mt += 1
            elif ratio >= 0.2:
                pt += 1
        return MotMetrics(
            mota=mota(fn, fp, sw, n_gt) if n_gt else float("nan"),
            motp=self.iou_sum / self.iou_count if self.iou_count else float("nan"),
            idsw=sw, frag=self.frag, mt=mt, pt=pt, fn=fn, fp=fp, gt=n_gt,
            matches=self.iou_count,
        )


def mot_evaluate(pred_per_frame, gt_per_frame, iou_match_thresh=0.5):
    """CLEAR-MOT metrics for one sequence."""
    acc = MotAccumulator(iou_match_thresh)
    for gts, preds in zip(gt_per_frame, pred_per_frame):
        acc.update(gts, preds)
    return acc.summary()


def mot_evaluate_many(sequences, iou_match_thresh=0.5):
    """Pool counts across (pred_per_frame, gt_per_frame) sequences."""
    total = MotAccumulator(iou_match_thresh)
    for si, (preds, gts) in enumerate(sequences):
        acc = MotAccumulator(iou_match_thresh)
        for g, p in zip(gts, preds):
            acc.update(g, p)
        total.fn += acc.fn
        total.fp += acc.fp
        total.idsw += acc.idsw
        total.gt += acc.gt
        total.iou_sum += acc.iou_sum
        total.iou_count += acc.iou_count
        total.frag += acc.frag
        for gid, n in acc._present.items():
            total._present[(si, gid)] = n
            total._tracked[(si, gid)] = acc._tracked.get(gid, 0)
    return total.summary()


# ---------------------------------------------------------------- reports

def _fmt(v):
    if v is None:
        return "absent"
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def format_report(metrics):
    """Flat ``key=value`` lines in insertion order."""
    return "".join(f"{k}={_fmt(v)}\n" for k, v in metrics.items())


def format_csv(metrics):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(metrics))
    writer.writerow([_fmt(v) for v in metrics.values()])
    return buf.getvalue()
