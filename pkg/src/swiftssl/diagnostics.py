"""Evaluation helpers and analysis instruments: confidence histograms,
flatness statistics, and confidence-temperature sweeps.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .data import DatasetBundle
from .losses import select, softmax_t
from .model import Model, forward


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels must have equal length")
    if len(predictions) == 0:
        raise ValueError("empty input")
    return float((predictions == labels).mean())


def confidence_histogram(confidences: np.ndarray, num_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts over uniform bins of (0, 1]. Returns (bin_edges, counts)."""
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    confidences = np.asarray(confidences)
    if len(confidences) and (confidences.min() <= 0 or confidences.max() > 1):
        raise ValueError("confidences must lie in (0, 1]")
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    if len(confidences) == 0:
        return edges, np.zeros(num_bins, dtype=int)
    # bin i covers (edges[i], edges[i+1]]
    idx = np.clip(np.ceil(confidences * num_bins).astype(int) - 1, 0, num_bins - 1)
    counts = np.bincount(idx, minlength=num_bins)
    return edges, counts


def tconf_sweep(model: Model, bundle: DatasetBundle, t_conf_grid: list[float],
                sigma: float) -> list[dict]:
    """Utilization (and selected pseudo-label accuracy when truth is stored)
    per confidence temperature, from a single forward pass over U's weak views.
    """
    logits = forward(model.head, model.adapter, bundle.unlabeled_weak.values)
    rows = []
    for t in t_conf_grid:
        sel = select(logits, t, sigma)
        row = {"t_conf": float(t), "utilization": sel.utilization}
        if bundle.unlabeled_truth is not None:
            m = sel.mask
            if m.any():
                row["pseudo_label_acc"] = accuracy(sel.pseudo_labels[m],
                                                   bundle.unlabeled_truth[m])
            else:
                row["pseudo_label_acc"] = float("nan")
        rows.append(row)
    return rows


def flatness_stats(prob_matrix: np.ndarray) -> dict:
    """Mean max-probability and mean entropy of a batch of probability rows."""
    prob_matrix = np.asarray(prob_matrix)
    sums = prob_matrix.sum(axis=1)
    if len(sums) and np.max(np.abs(sums - 1.0)) > 1e-6:
        raise ValueError("rows must be normalized probability vectors")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(prob_matrix > 0, prob_matrix * np.log(prob_matrix), 0.0)
    entropy = -plogp.sum(axis=1)
    return {
        "mean_max_prob": float(prob_matrix.max(axis=1).mean()),
        "mean_entropy": float(entropy.mean()),
        "matrix": prob_matrix,
    }


def write_diagnostics(model: Model, bundle: DatasetBundle, t_conf_grid: list[float],
                      sigma: float, out_dir: str, num_bins: int = 50) -> None:
    """Emit diagnose/*.csv artifacts: histogram, sweep, flatness, prob matrix."""
    os.makedirs(out_dir, exist_ok=True)
    logits = forward(model.head, model.adapter, bundle.unlabeled_weak.values)
    sel = select(logits, model.temps.t_conf, sigma)
    edges, counts = confidence_histogram(sel.confidences, num_bins)
    with open(os.path.join(out_dir, "histogram.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_low", "bin_high", "count"])
        for i in range(num_bins):
            w.writerow([edges[i], edges[i + 1], int(counts[i])])
    rows = tconf_sweep(model, bundle, t_conf_grid, sigma)
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as f:
        fieldnames = list(rows[0].keys()) if rows else ["t_conf", "utilization"]
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        w.writerows(rows)
    probs = softmax_t(logits, model.temps.t_conf)
    # heatmap row order: sort by true class when hidden labels exist
    if bundle.unlabeled_truth is not None:
        probs = probs[np.argsort(bundle.unlabeled_truth, kind="stable")]
    stats = flatness_stats(probs)
    with open(os.path.join(out_dir, "flatness.json"), "w") as f:
        json.dump({"mean_max_prob": stats["mean_max_prob"],
                   "mean_entropy": stats["mean_entropy"]}, f, indent=2)
    np.ascontiguousarray(probs, dtype="<f4").tofile(os.path.join(out_dir, "prob_matrix.f32"))
    with open(os.path.join(out_dir, "prob_matrix.shape.json"), "w") as f:
        json.dump({"rows": int(probs.shape[0]), "cols": int(probs.shape[1])}, f)
