"""Evaluation metrics: top-1 accuracies, harmonic means, F1 scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = ["harmonic_mean", "f1_scores", "MetricsReport"]


def harmonic_mean(values):
    """n / sum(1/v); the balance metric over task accuracies."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("harmonic_mean requires at least one value")
    if any(v <= 0 for v in values):
        raise ValueError(f"harmonic_mean requires positive values, got {values}")
    return len(values) / sum(1.0 / v for v in values)


def f1_scores(predictions, labels, n_classes):
    """Per-class precision/recall/F1 and the support-weighted average.

    Returns (per_class, weighted, zero_support) where per_class maps a
    class index to its (precision, recall, f1) triple and zero_support
    lists classes absent from ``labels`` (excluded from the average).
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ValueError("predictions and labels must be non-empty and aligned")
    per_class = {}
    zero_support = []
    weighted = 0.0
    total_support = 0
    for c in range(n_classes):
        support = int((labels == c).sum())
        if support == 0:
            zero_support.append(c)
            continue
        tp = int(((predictions == c) & (labels == c)).sum())
        fp = int(((predictions == c) & (labels != c)).sum())
        fn = support - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[c] = (precision, recall, f1)
        weighted += support * f1
        total_support += support
    return per_class, weighted / total_support, zero_support


@dataclass
class MetricsReport:
    """Evaluation output consumed by the ablation harness and the CLI."""

    top1_per_task: dict = field(default_factory=dict)   # task -> percent
    action_top1: float = 0.0                            # all sub-labels correct
    harmonic_means: dict = field(default_factory=dict)
    f1_per_class: dict = field(default_factory=dict)    # task -> {class: f1}
    f1_weighted: dict = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0

    def to_json(self, **extra):
        doc = asdict(self)
        doc.update(extra)
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_predictions(cls, preds, labels, config_hash="", seed=0):
        """``preds``/``labels``: dicts mapping task name to int arrays."""
        tasks = sorted(preds)
        report = cls(config_hash=config_hash, seed=seed)
        all_correct = None
        for task in tasks:
            p = np.asarray(preds[task])
            y = np.asarray(labels[task])
            correct = p == y
            all_correct = correct if all_correct is None else (all_correct & correct)
            report.top1_per_task[task] = 100.0 * float(correct.mean())
            n_classes = int(max(p.max(initial=0), y.max(initial=0))) + 1
            per_class, weighted, _ = f1_scores(p, y, n_classes)
            report.f1_per_class[task] = {str(c): v[2] for c, v in per_class.items()}
            report.f1_weighted[task] = weighted
        report.action_top1 = 100.0 * float(all_correct.mean())
        accs = [report.top1_per_task[t] for t in tasks]
        if all(a > 0 for a in accs):
            report.harmonic_means["tasks"] = harmonic_mean(accs)
        return report
