"""Evaluation metrics: confusion matrices, balanced accuracy, and balanced
robustness (macro-averaged per-class recall under attack).

Balanced metrics average per-class recall over the classes that have at least
one test sample; empty classes are excluded with a warning. Every balanced
value computed here is cross-checked against an independent brute-force
per-class loop before it is reported.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, CwConfig, cw_l2, fgsm, pgd
from .data import Dataset
from .network import Model

__all__ = [
    "EvalAttack",
    "MetricsReport",
    "predictions",
    "confusion",
    "confusion_from_predictions",
    "per_class_recall",
    "balanced_accuracy",
    "standard_accuracy",
    "balanced_robustness",
    "attack_batch",
    "report",
    "report_to_dict",
    "write_report_json",
    "write_per_class_csv",
]

EVAL_BATCH = 256


@dataclass(frozen=True)
class EvalAttack:
    """A named attack to evaluate: kind is one of 'fgsm', 'pgd', 'cw'."""

    name: str
    kind: str
    config: object  # AttackConfig for fgsm/pgd, CwConfig for cw
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd", "cw"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind == "cw" and not isinstance(self.config, CwConfig):
            raise ValueError("cw attacks need a CwConfig")
        if self.kind in ("fgsm", "pgd") and not isinstance(self.config, AttackConfig):
            raise ValueError(f"{self.kind} attacks need an AttackConfig")


def predictions(model: Model, features: np.ndarray) -> np.ndarray:
    """Argmax-of-logits class predictions; ties break toward the lowest index."""
    return model.forward(features).argmax(axis=1)


def confusion_from_predictions(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> np.ndarray:
    """C x C count matrix with rows = true class, columns = predicted class."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def confusion(model: Model, dataset: Dataset) -> np.ndarray:
    cm = confusion_from_predictions(dataset.labels, predictions(model, dataset.features), dataset.num_classes)
    empty = np.flatnonzero(cm.sum(axis=1) == 0)
    if empty.size:
        warnings.warn(f"classes {empty.tolist()} have no test samples; balanced metrics will exclude them", stacklevel=2)
    return cm


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    """Recall per class; NaN where the class has no samples."""
    cm = np.asarray(cm, dtype=np.float64)
    totals = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, np.diag(cm) / totals, np.nan)


def _brute_force_macro_recall(cm: np.ndarray) -> float:
    """Independent per-class loop used to cross-check every balanced metric."""
    acc = 0.0
    counted = 0
    for i in range(cm.shape[0]):
        row_total = 0
        for j in range(cm.shape[1]):
            row_total += int(cm[i][j])
        if row_total == 0:
            continue
        acc += int(cm[i][i]) / row_total
        counted += 1
    if counted == 0:
        raise ValueError("confusion matrix has no populated classes")
    return acc / counted


def balanced_accuracy(cm: np.ndarray) -> float:
    """Macro-averaged per-class recall over classes with at least one sample."""
    cm = np.asarray(cm)
    populated = cm.sum(axis=1) > 0
    if not populated.all():
        warnings.warn(
            f"{int((~populated).sum())} empty class(es) excluded from the balanced mean",
            stacklevel=2,
        )
    recalls = per_class_recall(cm)[populated]
    value = float(recalls.mean())
    check = _brute_force_macro_recall(cm)
    assert value == check, f"macro recall {value} disagrees with brute-force loop {check}"
    return value


def standard_accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    return float(np.trace(cm) / cm.sum())


def attack_batch(model: Model, features: np.ndarray, labels: np.ndarray, attack: EvalAttack, batch_index: int) -> np.ndarray:
    """Run one attack over one batch with a per-batch derived seed."""
    if attack.kind == "fgsm":
        cfg = attack.config
        return fgsm(model, features, labels, cfg.epsilon, cfg.clip_min, cfg.clip_max)
    if attack.kind == "pgd":
        rng = np.random.default_rng(np.random.SeedSequence([0xA77AC4, int(attack.seed), int(batch_index)]))
        return pgd(model, features, labels, attack.config, rng)
    adv, _ = cw_l2(model, features, labels, attack.config)
    return adv


def _attacked_confusion(model: Model, dataset: Dataset, attack: EvalAttack) -> np.ndarray:
    cm = np.zeros((dataset.num_classes, dataset.num_classes), dtype=np.int64)
    for k, start in enumerate(range(0, len(dataset), EVAL_BATCH)):
        feats = dataset.features[start : start + EVAL_BATCH]
        labs = dataset.labels[start : start + EVAL_BATCH]
        adv = attack_batch(model, feats, labs, attack, k)
        cm += confusion_from_predictions(labs, predictions(model, adv), dataset.num_classes)
    return cm


def balanced_robustness(model: Model, dataset: Dataset, attack: EvalAttack) -> float:
    """Macro recall on the attacked test set."""
    return balanced_accuracy(_attacked_confusion(model, dataset, attack))


@dataclass(frozen=True)
class MetricsReport:
    """Clean and attacked confusion matrices with balanced/standard summaries."""

    num_classes: int
    test_distribution: str
    clean_cm: np.ndarray
    attacked_cm: dict[str, np.ndarray]
    balanced_accuracy: float
    balanced_robustness: dict[str, float]
    standard_accuracy: float
    standard_robustness: dict[str, float]
    per_class_clean_recall: np.ndarray
    per_class_robust_recall: dict[str, np.ndarray]
    tail_classes: int
    tail_clean_recall: float
    tail_robust_recall: dict[str, float]


def _tail_mean(recalls: np.ndarray, tail_k: int) -> float:
    tail = recalls[-tail_k:]
    tail = tail[~np.isnan(tail)]
    return float(tail.mean()) if tail.size else float("nan")


def report(model: Model, dataset: Dataset, attacks: list[EvalAttack], tail_classes: int | None = None) -> MetricsReport:
    """One evaluation pass: clean metrics plus one attacked matrix per attack.

    The tail slice covers the last `tail_classes` classes (default C // 2).
    The test distribution is recorded so balanced numbers are interpretable.
    """
    names = [a.name for a in attacks]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate attack names in {names}")
    tail_k = dataset.num_classes // 2 if tail_classes is None else int(tail_classes)
    if not 1 <= tail_k <= dataset.num_classes:
        raise ValueError("tail_classes must lie in [1, num_classes]")

    clean_cm = confusion(model, dataset)
    counts = dataset.class_counts
    dist = "balanced" if counts.min() == counts.max() else f"imbalanced (IR={counts.max() / max(counts.min(), 1):.3g})"
    clean_recalls = per_class_recall(clean_cm)

    attacked, rob_bal, rob_std, rob_recalls, rob_tail = {}, {}, {}, {}, {}
    for atk in attacks:
        cm = _attacked_confusion(model, dataset, atk)
        attacked[atk.name] = cm
        rob_bal[atk.name] = balanced_accuracy(cm)
        rob_std[atk.name] = standard_accuracy(cm)
        recalls = per_class_recall(cm)
        rob_recalls[atk.name] = recalls
        rob_tail[atk.name] = _tail_mean(recalls, tail_k)

    return MetricsReport(
        num_classes=dataset.num_classes,
        test_distribution=dist,
        clean_cm=clean_cm,
        attacked_cm=attacked,
        balanced_accuracy=balanced_accuracy(clean_cm),
        balanced_robustness=rob_bal,
        standard_accuracy=standard_accuracy(clean_cm),
        standard_robustness=rob_std,
        per_class_clean_recall=clean_recalls,
        per_class_robust_recall=rob_recalls,
        tail_classes=tail_k,
        tail_clean_recall=_tail_mean(clean_recalls, tail_k),
        tail_robust_recall=rob_tail,
    )


def _nan_to_none(values: np.ndarray) -> list:
    return [None if np.isnan(v) else float(v) for v in values]


def report_to_dict(rep: MetricsReport) -> dict:
    return {
        "num_classes": rep.num_classes,
        "test_distribution": rep.test_distribution,
        "balanced_accuracy": rep.balanced_accuracy,
        "standard_accuracy": rep.standard_accuracy,
        "balanced_robustness": dict(sorted(rep.balanced_robustness.items())),
        "standard_robustness": dict(sorted(rep.standard_robustness.items())),
        "clean_confusion": rep.clean_cm.tolist(),
        "attacked_confusion": {k: v.tolist() for k, v in sorted(rep.attacked_cm.items())},
        "per_class_clean_recall": _nan_to_none(rep.per_class_clean_recall),
        "per_class_robust_recall": {k: _nan_to_none(v) for k, v in sorted(rep.per_class_robust_recall.items())},
        "tail_classes": rep.tail_classes,
        "tail_clean_recall": rep.tail_clean_recall,
        "tail_robust_recall": dict(sorted(rep.tail_robust_recall.items())),
    }


def write_report_json(path, rep: MetricsReport) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(rep), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_per_class_csv(path, rep: MetricsReport, class_counts: np.ndarray | None = None) -> None:
    """Flat per-class rows: class, (train count,) clean recall, one robust column per attack."""
    attack_names = sorted(rep.per_class_robust_recall)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["class"]
        if class_counts is not None:
            header.append("train_count")
        header.append("clean_recall")
        header.extend(f"robust_recall_{name}" for name in attack_names)
        writer.writerow(header)
        for c in range(rep.num_classes):
            row: list = [c]
            if class_counts is not None:
                row.append(int(class_counts[c]))
            row.append(_fmt(rep.per_class_clean_recall[c]))
            row.extend(_fmt(rep.per_class_robust_recall[name][c]) for name in attack_names)
            writer.writerow(row)


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))
