"""Command-line entry point: simulate, train, evaluate, track, render.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .decode_track import Detection, detect_sequence, read_tracks, track_detections, write_tracks
from .eval_metrics import format_csv, format_report, mean_average_precision, mot_evaluate_many
from .geometry import box_corners
from .heads_losses import NonFiniteLoss, round_half_away
from .nn import CheckpointError
from .scene_sim import DatasetError, load_dataset, save_dataset, simulate_dataset
from .training import (
    build_model, build_optimizer, detect_frames, frame_pairs, load_training_checkpoint,
    split_sequences, train,
)

log = logging.getLogger("radartrl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


# ---------------------------------------------------------------- arguments

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--no-trl", action="store_true", help="bypass the relational block")
    common.add_argument("--k", type=int, help="top-K candidates per frame")
    common.add_argument("--gap", type=int, help="frame gap between paired frames")
    common.add_argument("--threshold", type=float, help="heatmap detection threshold")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset directory")
    common.add_argument("--checkpoint", help="model checkpoint path")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="radartrl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")
    t = sub.add_parser("train", parents=[common], help="train a detector")
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    for name, helptext in (("evaluate", "detection mAP report"), ("track", "tracking and CLEAR-MOT report")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        e.add_argument("--oracle", action="store_true",
                       help="feed ground truth as detections instead of running a model")
        e.add_argument("--split", choices=("test", "train", "all"), default="test")
    r = sub.add_parser("render", parents=[common], help="draw frames with boxes as PPM images")
    r.add_argument("--tracks", help="directory of per-sequence track files to draw")
    r.add_argument("--limit", type=int, default=0, help="render at most this many sequences")
    return p


def build_config(args):
    """Config file, then explicit flags, then --set overrides; fully validated."""
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    values = {}
    for key, attr in (("seed", "seed"), ("k", "k"), ("gap", "gap"), ("threshold", "threshold"),
                      ("out", "out"), ("data", "data"), ("checkpoint", "checkpoint"),
                      ("epochs", "epochs")):
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    if args.no_trl:
        values["use_trl"] = False
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    return cfg.updated(values, "<command line>").validate()


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg, args):
    seqs = simulate_dataset(cfg.scene_config(), cfg.sequences, cfg.seed)
    save_dataset(seqs, cfg.out, seed=cfg.seed)
    print(f"wrote {len(seqs)} sequences to {cfg.out}")


def _load_data(cfg):
    if not Path(cfg.data, "dataset.txt").exists():
        raise DatasetError(f"{cfg.data}: no dataset found (missing dataset.txt)")
    return load_dataset(cfg.data)


def _select(seqs, cfg, split):
    train_part, test_part = split_sequences(seqs, cfg.train_fraction)
    if split == "all" or cfg.train_fraction >= 1:
        return seqs
    return train_part if split == "train" else test_part


def cmd_train(cfg, args):
    seqs = _load_data(cfg)
    train_seqs, _ = split_sequences(seqs, cfg.train_fraction)
    gap = cfg.track_gap if cfg.tracking else cfg.gap
    pairs = frame_pairs(train_seqs, gap)
    if not pairs:
        raise DatasetError(f"{cfg.data}: no frame pairs at gap {gap}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = cfg.checkpoint_path()
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    opt = build_optimizer(model, cfg)
    log_path = out / "train_log.txt"
    if args.resume and ckpt.exists():
        load_training_checkpoint(ckpt, model, opt)
        log.info("resuming from %s at step %d", ckpt, opt.state.step)
    elif log_path.exists():
        log_path.unlink()
    (ckpt.parent / "config.txt").write_text(cfg.to_text())
    records = train(model, opt, pairs, cfg, log_path=log_path, checkpoint=ckpt)
    final = records[-1].line() if records else "no steps run"
    print(f"trained {len(records)} steps on {len(pairs)} pairs; {final}")
    print(f"checkpoint: {ckpt}")


def _model_for(cfg):
    ckpt = cfg.checkpoint_path()
    if not ckpt.exists():
        raise CheckpointError(f"{ckpt}: checkpoint not found")
    model = build_model(cfg)
    model.load(ckpt)
    return model.eval()


def _gt_detections(frames, with_motion=False):
    """Ground-truth boxes as confidence-1 detections, optionally with true motion."""
    out = []
    for t, frame in enumerate(frames):
        prev = dict(frames[t - 1].annotations) if t else {}
        dets = []
        for tid, b in frame.annotations:
            off = (0.0, 0.0)
            if with_motion and tid in prev:
                off = (b.cx - prev[tid].cx, b.cy - prev[tid].cy)
            dets.append(Detection(b, 1.0, off))
        out.append(dets)
    return out


def _write_reports(out, stem, metrics):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.txt").write_text(format_report(metrics))
    (out / f"{stem}.csv").write_text(format_csv(metrics))
    sys.stdout.write(format_report(metrics))


def cmd_evaluate(cfg, args):
    seqs = _select(_load_data(cfg), cfg, args.split)
    if args.oracle:
        dets = [d for frames in seqs for d in _gt_detections(frames)]
        gts = [f.boxes for frames in seqs for f in frames]
    else:
        dets, gts = detect_frames(_model_for(cfg), seqs, cfg.gap, cfg.map_decode_config())
    metrics = mean_average_precision(dets, gts)
    metrics["frames"] = len(gts)
    metrics["ground_truths"] = sum(len(g) for g in gts)
    metrics["detections"] = sum(len(d) for d in dets)
    _write_reports(Path(cfg.out), "report", metrics)


def cmd_track(cfg, args):
    seqs = _select(_load_data(cfg), cfg, args.split)
    dc = cfg.decode_config()
    model = None if args.oracle else _model_for(cfg)
    out = Path(cfg.out)
    (out / "tracks").mkdir(parents=True, exist_ok=True)
    pooled = []
    for frames in seqs:
        if not frames:
            continue
        per_frame = (_gt_detections(frames, with_motion=cfg.oracle_motion) if args.oracle
                     else detect_sequence(frames, model, dc))
        tracks = track_detections(per_frame, dc.k, dc.birth)
        write_tracks(out / "tracks" / f"{frames[0].sequence_id}.txt", tracks, [f.index for f in frames])
        pooled.append((tracks, [f.annotations for f in frames]))
    m = mot_evaluate_many(pooled)
    metrics = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in m.as_dict().items()}
    _write_reports(out, "mot_report", metrics)


# ---------------------------------------------------------------- rendering

GREEN, RED = (0, 255, 0), (255, 0, 0)


def id_color(track_id):
    """Stable saturated colour per track id."""
    h = (track_id * 0.618033988749895) % 1.0
    i = int(h * 6)
    f = h * 6 - i
    q, t = int(255 * (1 - f)), int(255 * f)
    return [(255, t, 0), (q, 255, 0), (0, 255, t), (0, q, 255), (t, 0, 255), (255, 0, q)][i % 6]


def _pixel(p):
    return int(round_half_away(p[0])), int(round_half_away(p[1]))


def draw_line(img, a, b, color):
    (x0, y0), (x1, y1) = _pixel(a), _pixel(b)
    n = max(abs(x1 - x0), abs(y1 - y0), 1)
    h, w = img.shape[:2]
    for i in range(n + 1):
        x = int(round_half_away(x0 + (x1 - x0) * i / n))
        y = int(round_half_away(y0 + (y1 - y0) * i / n))
        if 0 <= x < w and 0 <= y < h:
            img[y, x] = color


def draw_box(img, box, color):
    c = box_corners(box)
    for i in range(4):
        draw_line(img, c[i], c[(i + 1) % 4], color)


def render_image(intensity, gt_boxes=(), pred_boxes=(), tracks=()):
    """RGB uint8 image: grayscale intensity, green ground truth, red predictions, coloured tracks."""
    gray = np.clip(np.round(np.asarray(intensity) * 255.0), 0, 255).astype(np.uint8)
    img = np.repeat(gray[:, :, None], 3, axis=2)
    for b in gt_boxes:
        draw_box(img, b, GREEN)
    for b in pred_boxes:
        draw_box(img, b, RED)
    for b, tid in tracks:
        draw_box(img, b, id_color(tid))
    return img


def write_ppm(path, img):
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes())


def cmd_render(cfg, args):
    seqs = _load_data(cfg)
    if args.limit:
        seqs = seqs[:args.limit]
    model = None
    if not args.tracks and (args.checkpoint or cfg.checkpoint_path().exists()):
        model = _model_for(cfg)
    out = Path(cfg.out)
    count = 0
    for frames in seqs:
        if not frames:
            continue
        sid = frames[0].sequence_id
        tracks = preds = None
        if args.tracks:
            path = Path(args.tracks) / f"{sid}.txt"
            tracks = read_tracks(path, max(f.index for f in frames) + 1) if path.exists() else None
        elif model is not None:
            preds = detect_sequence(frames, model, cfg.decode_config(), gap=cfg.gap)
        d = out / sid
        d.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(frames):
            img = render_image(
                frame.intensity, frame.boxes,
                [p.box for p in preds[t]] if preds else (),
                [(b, tid) for b, tid, _ in tracks[frame.index]] if tracks else (),
            )
            write_ppm(d / f"frame_{frame.index:04d}.ppm", img)
            count += 1
    print(f"rendered {count} frames to {out}")


COMMANDS = {
    "simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
    "track": cmd_track, "render": cmd_render,
}


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args)
    except (DatasetError, CheckpointError, NonFiniteLoss, OSError, ValueError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
