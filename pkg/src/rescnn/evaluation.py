"""Confusion-matrix metrics and hidden-layer activation inspection."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import make_batches
from .layers import EVAL
from .model import ResCnnModel, model_forward
from .optim import softmax

UNDEFINED = "undefined"


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(preds, labels, n_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions but {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den):
    return None if den == 0 else num / den


def one_vs_rest(cm: ConfusionMatrix, positive: int) -> dict:
    c = cm.counts
    tp = int(c[positive, positive])
    fn = int(c[positive].sum()) - tp
    fp = int(c[:, positive].sum()) - tp
    tn = cm.total - tp - fn - fp
    return {"tp": tp, "fn": fn, "fp": fp, "tn": tn}


@dataclass
class MetricsReport:
    """``None`` marks a metric whose denominator is zero."""

    accuracy: float
    sensitivity: Optional[float]
    specificity: Optional[float]
    positive_class: int
    per_class_sensitivity: list
    per_class_specificity: list
    n_examples: int

    def to_dict(self):
        def show(v):
            return UNDEFINED if v is None else v

        return {
            "accuracy": self.accuracy,
            "n_examples": self.n_examples,
            "positive_class": self.positive_class,
            "sensitivity": show(self.sensitivity),
            "specificity": show(self.specificity),
            "per_class": [
                {"class": k, "sensitivity": show(se), "specificity": show(sp)}
                for k, (se, sp) in enumerate(zip(self.per_class_sensitivity, self.per_class_specificity))
            ],
        }


def metrics(cm: ConfusionMatrix, positive_class: Optional[int] = None) -> MetricsReport:
    """Accuracy plus one-vs-rest sensitivity TP/(TP+FN) and specificity TN/(TN+FP).

    ``positive_class`` defaults to the last class (seizure for Bonn, focal for
    Bern-Barcelona).
    """
    n = cm.total
    if n < 1:
        raise ValueError("confusion matrix is empty")
    if positive_class is None:
        positive_class = cm.n_classes - 1
    sens, spec = [], []
    for k in range(cm.n_classes):
        t = one_vs_rest(cm, k)
        sens.append(_ratio(t["tp"], t["tp"] + t["fn"]))
        spec.append(_ratio(t["tn"], t["tn"] + t["fp"]))
    return MetricsReport(
        accuracy=float(np.trace(cm.counts)) / n,
        sensitivity=sens[positive_class],
        specificity=spec[positive_class],
        positive_class=positive_class,
        per_class_sensitivity=sens,
        per_class_specificity=spec,
        n_examples=n,
    )


def predict(model: ResCnnModel, part, crop_len: int, batch_size: int = 20):
    """Eval-mode forward over centre crops; returns ``(probs, hidden, labels, ids)``."""
    probs, hidden, labels, ids = [], [], [], []
    for batch in make_batches(part, crop_len, batch_size, "eval"):
        logits, trace = model_forward(model, batch.x, EVAL)
        probs.append(softmax(logits))
        hidden.append(trace.hidden)
        labels.append(batch.y)
        ids += batch.ids
    return np.concatenate(probs), np.concatenate(hidden), np.concatenate(labels), ids


def evaluate(model: ResCnnModel, part, crop_len: int, batch_size: int = 20, positive_class=None):
    probs, _, labels, _ = predict(model, part, crop_len, batch_size)
    cm = confusion(probs.argmax(axis=1), labels, model.config.n_classes)
    return metrics(cm, positive_class), cm, probs


# --------------------------------------------------------------------------
# activation inspection
# --------------------------------------------------------------------------

@dataclass
class ActivationMatrix:
    values: np.ndarray  # n_examples x n_units
    labels: np.ndarray
    segment_ids: list = field(default_factory=list)

    @property
    def n_units(self):
        return self.values.shape[1]

    def class_groups(self):
        """Contiguous ``[start, stop)`` row ranges per class (rows are class-sorted)."""
        groups = []
        for label in np.unique(self.labels):
            rows = np.flatnonzero(self.labels == label)
            groups.append({"label": int(label), "start": int(rows[0]), "stop": int(rows[-1]) + 1})
        return groups


def sort_activations(values, labels, ids) -> ActivationMatrix:
    order = sorted(range(len(ids)), key=lambda i: (int(labels[i]), ids[i]))
    return ActivationMatrix(
        np.asarray(values)[order], np.asarray(labels, dtype=np.int64)[order], [ids[i] for i in order]
    )


def collect_activations(model: ResCnnModel, part, crop_len: int, batch_size: int = 20) -> ActivationMatrix:
    """Post-LReLU hidden FC activations, one row per example, ordered by (label, segment_id)."""
    _, hidden, labels, ids = predict(model, part, crop_len, batch_size)
    return sort_activations(hidden, labels, ids)


def top_k_inputs(acts: ActivationMatrix, unit: int, k: int = 4) -> list:
    """The ``k`` examples that drive ``unit`` hardest; ties go to the smaller segment_id."""
    if not 0 <= unit < acts.n_units:
        raise IndexError(f"unit {unit} out of range for {acts.n_units} units")
    if k < 1:
        raise ValueError("k must be at least 1")
    col = acts.values[:, unit]
    order = sorted(range(len(col)), key=lambda i: (-col[i], acts.segment_ids[i]))
    return [(acts.segment_ids[i], float(col[i])) for i in order[:k]]


def export_heatmap_csv(acts: ActivationMatrix, path) -> Path:
    """Write the activation matrix and a ``.groups.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label", "segment_id", *range(acts.n_units)])
        for label, sid, row in zip(acts.labels, acts.segment_ids, acts.values):
            w.writerow([int(label), sid, *(repr(float(v)) for v in row)])
    sidecar = path.with_suffix(".groups.json")
    sidecar.write_text(json.dumps({"unit_index_base": 0, "groups": acts.class_groups()}, indent=1) + "\n")
    return sidecar


def read_heatmap_csv(path) -> ActivationMatrix:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    n_units = len(rows[0]) - 2
    body = rows[1:]
    values = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), n_units)
    return ActivationMatrix(values, np.array([int(r[0]) for r in body], dtype=np.int64), [r[1] for r in body])


def export_topk_csv(acts: ActivationMatrix, path, k: int = 4, units=None) -> None:
    units = range(acts.n_units) if units is None else units
    labels = dict(zip(acts.segment_ids, acts.labels))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["unit", "rank", "segment_id", "label", "activation"])
        for u in units:
            for rank, (sid, val) in enumerate(top_k_inputs(acts, u, k)):
                w.writerow([u, rank, sid, int(labels[sid]), repr(val)])
