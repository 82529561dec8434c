"""Pair sampling, the training loop and detection evaluation."""

from __future__ import annotations

import logging

import numpy as np

from .decode_track import decode_detections
from .eval_metrics import mean_average_precision
from .heads_losses import bidirectional_train_step
from .model import Detector
from .optim import Adam

log = logging.getLogger(__name__)


def frame_pairs(sequences, gap):
    """(current, previous) pairs at ``gap`` frames apart, in sequence order."""
    pairs = []
    for frames in sequences:
        for t in range(gap, len(frames)):
            pairs.append((frames[t], frames[t - gap]))
    return pairs


def split_sequences(sequences, train_fraction):
    n_train = int(round(len(sequences) * train_fraction))
    if train_fraction < 1 and len(sequences) > 1:
        n_train = min(max(n_train, 1), len(sequences) - 1)
    return sequences[:n_train], sequences[n_train:]


def build_model(cfg):
    return Detector(cfg.model_config(), seed=cfg.seed)


def build_optimizer(model, cfg):
    return Adam(model.named_parameters(), lr=cfg.lr, wd=cfg.wd)


def train(model, optimizer, pairs, cfg, log_path=None, checkpoint=None, on_epoch=None):
    """Bi-directional training over ``pairs``; returns the list of LossRecords.

    Step numbering continues from ``optimizer.state.step`` so a resumed run
    picks up where it left off.
    """
    weights = cfg.loss_weights()
    records = []
    log_file = open(log_path, "a") if log_path else None
    step = optimizer.state.step
    start_epoch = step // max(_steps_per_epoch(len(pairs), cfg.batch_size), 1) if pairs else 0
    try:
        for epoch in range(start_epoch, cfg.epochs):
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(len(pairs))
            for b in range(0, len(order), cfg.batch_size):
                if cfg.max_steps and step >= cfg.max_steps:
                    break
                batch = [pairs[i] for i in order[b:b + cfg.batch_size]]
                rec = bidirectional_train_step(model, optimizer, batch, weights, step=step + 1)
                step = optimizer.state.step
                records.append(rec)
                if log_file:
                    log_file.write(f"epoch={epoch} {rec.line()}\n")
            if log_file:
                log_file.flush()
            if records:
                log.info("epoch %d done at step %d, total loss %.4f", epoch, step, records[-1].total)
            if checkpoint:
                save_training_checkpoint(checkpoint, model, optimizer)
            if on_epoch:
                on_epoch(epoch, records)
            if cfg.max_steps and step >= cfg.max_steps:
                break
    finally:
        if log_file:
            log_file.close()
    return records


def _steps_per_epoch(n_pairs, batch_size):
    return (n_pairs + batch_size - 1) // batch_size


def save_training_checkpoint(path, model, optimizer):
    model.save(path, extra=optimizer.state.arrays())


def load_training_checkpoint(path, model, optimizer=None):
    arrays = model.load(path)
    if optimizer is not None:
        optimizer.state.load_arrays(arrays)
    return arrays


def detect_frames(model, sequences, gap, decode_cfg):
    """Detections and ground truths for every frame of every sequence."""
    model.eval()
    s = model.stride
    dets, gts = [], []
    for frames in sequences:
        if not frames:
            continue
        cur = np.stack([f.intensity for f in frames])
        prev = np.stack([frames[max(t - gap, 0)].intensity for t in range(len(frames))])
        maps = model.dense_outputs(cur, prev)
        for t, frame in enumerate(frames):
            single = {k: v[t] for k, v in maps.items()}
            dets.append(decode_detections(single, decode_cfg.threshold, decode_cfg.nms_thresh, s))
            gts.append(frame.boxes)
    return dets, gts


def evaluate_detection(model, sequences, gap, decode_cfg):
    dets, gts = detect_frames(model, sequences, gap, decode_cfg)
    return mean_average_precision(dets, gts)
