"""Training loop and run-directory artifacts."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import (
    export_manifest,
    load_bern,
    load_bonn,
    make_batches,
    make_synthetic,
    read_manifest,
    split_bern,
    split_bonn,
    split_from_manifest,
)
from .errors import DatasetError, DivergenceError
from .evaluation import evaluate
from .layers import TRAIN
from .model import build_model, model_backward, model_forward
from .optim import AdamState, LrSchedule, adam_step, lr_at, softmax_cross_entropy
from .tensor import Rng

log = logging.getLogger(__name__)

LOG_FIELDS = ["epoch", "lr", "train_loss", "train_acc", "val_acc", "wall_time"]


@dataclass
class RunArtifacts:
    out_dir: Path
    config_path: Path
    manifest_path: Path
    log_path: Path
    best_checkpoint: Path
    final_checkpoint: Path
    metrics_path: Path
    history: list = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)


def load_split(cfg: RunConfig, manifest=None):
    """Build (or re-create from a manifest) the train/val/test split for ``cfg``."""
    manifest = manifest if manifest is not None else (read_manifest(cfg.manifest) if cfg.manifest else None)
    if cfg.dataset == "synthetic":
        s = cfg.synthetic
        synth = (manifest or {}).get("synthetic", {"seed": cfg.seed, "length": s.length,
                                                   "n_train": s.n_train, "n_val": s.n_val, "n_test": s.n_test})
        split = make_synthetic(**synth)
        if manifest is not None:
            split = split_from_manifest(split.train + split.val + split.test, manifest)
        return split, {"synthetic": synth}
    if cfg.dataset == "bonn":
        segments = load_bonn(cfg.data_root)
        split = split_from_manifest(segments, manifest) if manifest else split_bonn(segments, cfg.seed)
    elif cfg.dataset == "bern":
        segments = load_bern(cfg.data_root)
        split = split_from_manifest(segments, manifest) if manifest else split_bern(segments, cfg.seed)
    else:
        raise DatasetError(f"unknown dataset {cfg.dataset!r}")
    split.dataset = cfg.dataset
    return split, {}


def history_digest(history) -> str:
    return hashlib.sha256(json.dumps(history, sort_keys=True).encode()).hexdigest()


def train_epoch(model, state, part, crop_len, batch_size, lr, rng):
    """One pass over ``part``; returns (mean loss, accuracy) over the examples used."""
    params = model.parameters()
    loss_sum, correct, seen = 0.0, 0, 0
    for batch in make_batches(part, crop_len, batch_size, "train", rng):
        n = len(batch.y)
        if n < 2:
            # the hidden FC batchnorm cannot form batch statistics from one example
            log.warning("skipping a training batch of size %d", n)
            continue
        logits, trace = model_forward(model, batch.x, TRAIN, rng)
        loss, probs, dlogits = softmax_cross_entropy(logits, batch.y)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss {loss}")
        grads = model_backward(model, trace, dlogits)
        adam_step(params, grads, state, lr)
        loss_sum += loss * n
        correct += int((probs.argmax(axis=1) == batch.y).sum())
        seen += n
    return loss_sum / seen, correct / seen


def run_training(cfg: RunConfig) -> RunArtifacts:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    split, manifest_extra = load_split(cfg)
    crop = cfg.resolved_crop()

    art = RunArtifacts(
        out_dir=out,
        config_path=out / "config.json",
        manifest_path=out / "split.json",
        log_path=out / "epoch_log.csv",
        best_checkpoint=out / "best.ckpt",
        final_checkpoint=out / "final.ckpt",
        metrics_path=out / "metrics.json",
    )
    art.config_path.write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    export_manifest(split, art.manifest_path, manifest_extra)

    master = Rng(cfg.seed)
    init_rng, train_rng = master.child(), master.child()
    model = build_model(cfg.model_config(), init_rng)
    state = AdamState.for_params(model.parameters())
    schedule = LrSchedule(cfg.base_lr, tuple(cfg.milestones), cfg.lr_factor)
    log.info("training %s: %d train / %d val / %d test, crop %d",
             cfg.dataset, len(split.train), len(split.val), len(split.test), crop)

    best_acc = -1.0
    with open(art.log_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_FIELDS)
        f.flush()
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr = lr_at(schedule, epoch)
            train_loss, train_acc = train_epoch(model, state, split.train, crop, cfg.batch_size, lr, train_rng)
            report, _, _ = evaluate(model, split.val, crop, cfg.batch_size)
            wall = time.perf_counter() - t0
            row = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "train_acc": train_acc,
                   "val_acc": report.accuracy, "wall_time": wall}
            writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in LOG_FIELDS])
            f.flush()
            art.history.append({k: row[k] for k in LOG_FIELDS if k != "wall_time"})
            model.meta = {"epoch": epoch + 1, "history_digest": history_digest(art.history)}
            log.info("epoch %d lr %.0e loss %.4f train %.3f val %.3f (%.1fs)",
                     epoch, lr, train_loss, train_acc, report.accuracy, wall)
            if report.accuracy > best_acc:
                best_acc = report.accuracy
                save_checkpoint(model, state, art.best_checkpoint)

    save_checkpoint(model, state, art.final_checkpoint)
    report, cm, _ = evaluate(model, split.test, crop, cfg.batch_size)
    art.final_metrics = {
        **report.to_dict(),
        "part": "test",
        "checkpoint": "final.ckpt",
        "confusion": cm.counts.tolist(),
        "best_val_acc": best_acc,
        "seed": cfg.seed,
    }
    art.metrics_path.write_text(json.dumps(art.final_metrics, indent=1, sort_keys=True) + "\n")
    return art
